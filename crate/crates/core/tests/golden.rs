//! Frozen stripe benchmark output. Regenerate with `CHNS_BLESS=1` after a
//! deliberate change to the numerics.

use std::path::PathBuf;

use chns::forward::Trajectory;
use chns::geometry::VectorField;
use chns::workbench::io::{decode_trajectory, encode_trajectory, write_atomic};
use chns::workbench::{parse_config, preset, Setup};

const KEEP_EVERY: usize = 25;

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/stripe.ncht")
}

/// Snapshots 0, 25, ..., 100 of the stripe preset, without controls.
fn stripe_samples() -> Trajectory {
    let s = Setup::new(&parse_config(preset("stripe").unwrap()).unwrap()).unwrap();
    let full = s.simulate(&vec![VectorField::zeros(s.grid); s.cfg.n_steps()]).unwrap();
    Trajectory {
        snapshots: full.snapshots.iter().step_by(KEEP_EVERY).cloned().collect(),
        controls: Vec::new(),
        ..full
    }
}

#[test]
fn stripe_matches_golden_file() {
    let now = stripe_samples();
    let path = golden_path();
    if std::env::var_os("CHNS_BLESS").is_some() {
        write_atomic(&path, &encode_trajectory(&now).unwrap()).unwrap();
        return;
    }
    let bytes = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e} (run with CHNS_BLESS=1)", path.display()));
    let frozen = decode_trajectory(&bytes).unwrap();
    assert_eq!(frozen.grid, now.grid);
    assert_eq!(frozen.dt, now.dt);
    assert_eq!(frozen.snapshots.len(), now.snapshots.len());
    for (a, b) in frozen.snapshots.iter().zip(&now.snapshots) {
        assert_eq!(a.t, b.t);
        let fields = [
            ("phi", a.phi.values(), b.phi.values()),
            ("pi", a.pi.values(), b.pi.values()),
            ("u", a.u.data(), b.u.data()),
        ];
        for (name, x, y) in fields {
            let worst = x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(worst <= 1e-12, "{name} at t = {}: deviation {worst:e}", a.t);
        }
    }
}
