use super::config::{ControlSpec, InitialSpec, TargetSpec};
use super::report::{DIAGNOSTICS_COLUMNS, HISTORY_COLUMNS};
use super::*;
use crate::error::Error;
use crate::forward::energy_report;

const MINIMAL: &str = "[time]\ndt = 0.01\nsteps = 3\n";

fn config_errors(text: &str) -> Vec<String> {
    match parse_config(text) {
        Err(Error::Config(e)) => e,
        other => panic!("expected config errors, got {other:?}"),
    }
}

#[test]
fn minimal_config_fills_defaults() {
    let rc = parse_config(MINIMAL).unwrap();
    assert_eq!((rc.grid.nx, rc.grid.ny, rc.grid.lx, rc.grid.ly), (32, 32, 1.0, 1.0));
    assert_eq!(rc.solver.n_steps(), 3);
    assert_eq!(rc.solver.cfl_safety, 0.5);
    assert_eq!(rc.law.name, "log-degenerate");
    assert!(matches!(rc.initial, InitialSpec::Stripe { .. }));
    assert_eq!(rc.control, ControlSpec::Zero);
    assert_eq!(rc.check.taylor_eps, vec![1e-2, 1e-3, 1e-4]);
    assert!(rc.warnings.is_empty());
}

#[test]
fn nonpositive_dt_names_the_key() {
    let e = config_errors("[time]\ndt = -1.0\nsteps = 3\n");
    assert!(e.iter().any(|m| m.contains("time.dt")), "{e:?}");
}

#[test]
fn unknown_kernel_family_lists_the_valid_ones() {
    let e = config_errors(&format!("{MINIMAL}[kernel]\nfamily = \"cauchy\"\n"));
    assert_eq!(e.len(), 1);
    for name in crate::nonlocal::KernelFamily::NAMES {
        assert!(e[0].contains(name), "{}", e[0]);
    }
}

#[test]
fn all_errors_are_reported_and_unknown_keys_warn() {
    let text = "[grid]\nnx = 1\nlx = -2.0\n[time]\ndt = 0.01\nsteps = 2\n[material]\nname = \"water\"\n\
                [initial]\npreset = \"blob\"\n";
    let e = config_errors(text);
    assert!(e.len() >= 4, "{e:?}");
    let rc = parse_config(&format!("{MINIMAL}[grid]\nnx = 8\ncolour = \"red\"\n")).unwrap();
    assert_eq!(rc.warnings, vec!["unknown key grid.colour".to_string()]);
    assert!(config_errors("[time\n").iter().any(|m| m.contains("syntax")));
    assert!(config_errors("[grid]\nnx = 8\n").iter().any(|m| m.contains("time.dt")));
}

#[test]
fn presets_parse_and_build() {
    for name in ["stripe", "tracking"] {
        let rc = parse_config(preset(name).unwrap()).unwrap();
        assert!(rc.warnings.is_empty(), "{name}: {:?}", rc.warnings);
        Setup::new(&rc).unwrap();
    }
    let rc = parse_config(preset("tracking").unwrap()).unwrap();
    let o = rc.optimize_spec().unwrap();
    assert_eq!(o.optimizer.initial_step, 1.0 / o.gamma);
    assert!(matches!(o.targets, TargetSpec::Reference(InitialSpec::Stripe { phase, .. }) if phase == 1.0));
    assert!(preset("nope").is_none());
}

#[test]
fn box_excluding_zero_warns() {
    let rc = parse_config(&format!(
        "{MINIMAL}[control]\nmode = \"optimize\"\n[control.bounds]\nlower = 0.5\nupper = 1.0\n"
    ))
    .unwrap();
    assert!(rc.warnings.iter().any(|w| w.contains("excludes 0")), "{:?}", rc.warnings);
}

#[test]
fn quartic_law_needs_an_override() {
    let text = format!("{MINIMAL}[grid]\nnx = 4\nny = 4\n[material]\nname = \"constant-mobility-quartic\"\n");
    match Setup::new(&parse_config(&text).unwrap()) {
        Err(Error::Config(e)) => assert!(e.iter().any(|m| m.contains("override_validation"))),
        other => panic!("{:?}", other.err()),
    }
    let text = format!("{text}override_validation = true\n");
    assert!(Setup::new(&parse_config(&text).unwrap()).is_ok());
}

#[test]
fn missing_referenced_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, format!("{MINIMAL}[initial]\npreset = \"file\"\npath = \"nope.nchs\"\n")).unwrap();
    match load_config(&path) {
        Err(Error::Config(e)) => assert!(e[0].contains("nope.nchs")),
        other => panic!("{other:?}"),
    }
}

#[test]
fn random_seeded_preset_is_deterministic() {
    let text = format!(
        "{MINIMAL}[grid]\nnx = 8\nny = 8\n[initial]\npreset = \"random-seeded\"\nseed = 4\nvelocity = 0.1\n"
    );
    let a = Setup::new(&parse_config(&text).unwrap()).unwrap();
    let b = Setup::new(&parse_config(&text).unwrap()).unwrap();
    assert_eq!(a.phi0, b.phi0);
    assert_eq!(a.u0, b.u0);
    assert!(a.phi0.max_abs() <= 1.0);
    assert!(crate::geometry::max_divergence(&a.u0) <= 1e-12);
    assert_eq!(a.config_hash, b.config_hash);
    let ta = a.simulate(&vec![crate::geometry::VectorField::zeros(a.grid); 3]).unwrap();
    let tb = b.simulate(&vec![crate::geometry::VectorField::zeros(b.grid); 3]).unwrap();
    assert_eq!(io::encode_trajectory(&ta).unwrap(), io::encode_trajectory(&tb).unwrap());
}

#[test]
fn pure_phase_report_has_zero_dynamics() {
    let text = format!("{MINIMAL}[grid]\nnx = 8\nny = 8\n[initial]\npreset = \"pure-phase\"\nvalue = -1.0\n");
    let s = Setup::new(&parse_config(&text).unwrap()).unwrap();
    let traj = s.simulate(&vec![crate::geometry::VectorField::zeros(s.grid); 3]).unwrap();
    let rep = energy_report(&traj, &s.dk, s.laws.as_ref()).unwrap();
    let csv = diagnostics_csv(&traj, &rep);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("# chns-diagnostics v1"));
    assert_eq!(lines.next().unwrap(), DIAGNOSTICS_COLUMNS.join(","));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|c| c.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(r.len(), DIAGNOSTICS_COLUMNS.len());
        // kinetic, d_energy and every work/dissipation term vanish
        for k in [3, 5, 6, 7, 8, 9, 10, 11] {
            assert_eq!(r[k], 0.0, "column {}", DIAGNOSTICS_COLUMNS[k]);
        }
    }
}

#[test]
fn residual_column_reproduces_the_l1_norm() {
    let text = format!("{MINIMAL}[grid]\nnx = 8\nny = 8\n[kernel]\namplitude = 56.0\n");
    let s = Setup::new(&parse_config(&text).unwrap()).unwrap();
    let traj = s.simulate(&vec![crate::geometry::VectorField::zeros(s.grid); 3]).unwrap();
    let rep = energy_report(&traj, &s.dk, s.laws.as_ref()).unwrap();
    let csv = diagnostics_csv(&traj, &rep);
    let res: Vec<f64> = csv.lines().skip(2).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    let n = res.len() - 1;
    let mut l1 = 0.0;
    for (k, r) in res.iter().enumerate() {
        let w = if k == 0 || k == n { 0.5 } else { 1.0 };
        l1 += w * traj.dt * r.abs();
    }
    assert_eq!(l1, rep.residual_l1);
    assert!(l1 > 0.0);
}

#[test]
fn history_and_plot_formats() {
    use crate::optimize::{CostBreakdown, IterationRecord};
    let h = vec![IterationRecord {
        iteration: 0,
        cost: CostBreakdown {
            tracking_u: 0.0,
            tracking_phi: 1.0,
            terminal_u: 0.0,
            terminal_phi: 0.5,
            control: 0.0,
            total: 1.5,
        },
        kkt: 0.25,
        step: 0.0,
        wall_seconds: 0.1,
    }];
    let csv = history_csv(&h);
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[1], HISTORY_COLUMNS.join(","));
    assert_eq!(lines[2].split(',').count(), HISTORY_COLUMNS.len());
    assert!(lines[2].starts_with("0,1.5e0,"));

    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}[grid]\nnx = 5\nny = 4\n");
    let s = Setup::new(&parse_config(&text).unwrap()).unwrap();
    let traj = s.simulate(&vec![crate::geometry::VectorField::zeros(s.grid); 3]).unwrap();
    let rep = energy_report(&traj, &s.dk, s.laws.as_ref()).unwrap();
    let plots = emit_report(&dir.path().join("d.csv"), &traj, &rep, &[0.0, 0.02]).unwrap();
    assert_eq!(plots.len(), 2);
    let dump = std::fs::read_to_string(&plots[1]).unwrap();
    assert!(dump.starts_with("# t = 2e-2"));
    assert_eq!(dump.lines().filter(|l| !l.is_empty() && !l.starts_with('#')).count(), 20);
}
