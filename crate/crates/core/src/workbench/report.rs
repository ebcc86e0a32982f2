//! CSV diagnostics and gnuplot-ready dumps.
//!
//! Every CSV starts with a `# <schema> v<version>` line followed by a
//! header row. Numbers use the shortest representation that reads back to
//! the same `f64`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::forward::{bound_violation, mass, EnergyReport, StateSnapshot, Trajectory};
use crate::optimize::IterationRecord;

use super::io::write_atomic;

pub const DIAGNOSTICS_VERSION: u32 = 1;

pub const DIAGNOSTICS_COLUMNS: [&str; 12] = [
    "t",
    "mass",
    "bound_violation",
    "kinetic",
    "phase_half_l2",
    "d_energy",
    "diffusion",
    "viscous",
    "nonlocal_work",
    "korteweg_work",
    "control_work",
    "energy_residual",
];

pub const HISTORY_VERSION: u32 = 1;

pub const HISTORY_COLUMNS: [&str; 10] = [
    "iteration",
    "f",
    "tracking_u",
    "tracking_phi",
    "terminal_u",
    "terminal_phi",
    "control",
    "kkt_residual",
    "step",
    "wall_seconds",
];

fn row(out: &mut String, values: &[f64]) {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:e}")).collect();
    out.push_str(&cells.join(","));
    out.push('\n');
}

/// One row per snapshot; `report` must come from the same trajectory.
pub fn diagnostics_csv(traj: &Trajectory, report: &EnergyReport) -> String {
    let mut out = format!("# chns-diagnostics v{DIAGNOSTICS_VERSION}\n{}\n", DIAGNOSTICS_COLUMNS.join(","));
    for (s, e) in traj.snapshots.iter().zip(&report.terms) {
        row(
            &mut out,
            &[
                s.t,
                mass(&s.phi),
                bound_violation(&s.phi),
                e.kinetic,
                e.phase,
                e.d_energy,
                e.diffusion,
                e.viscous,
                e.nonlocal_work,
                e.korteweg_work,
                e.control_work,
                e.residual,
            ],
        );
    }
    out
}

pub fn history_csv(history: &[IterationRecord]) -> String {
    let mut out = format!("# chns-history v{HISTORY_VERSION}\n{}\n", HISTORY_COLUMNS.join(","));
    for h in history {
        let c = &h.cost;
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            h.iteration, c.total, c.tracking_u, c.tracking_phi, c.terminal_u, c.terminal_phi, c.control, h.kkt, h.step, h.wall_seconds
        );
    }
    out
}

/// `x y phi` rows, one blank line between grid rows (gnuplot `splot`).
pub fn phi_plot(s: &StateSnapshot) -> String {
    let g = s.phi.grid();
    let mut out = format!("# t = {:e}\n# x y phi\n", s.t);
    for j in 0..g.ny {
        for i in 0..g.nx {
            let (x, y) = g.cell_center(i, j);
            let _ = writeln!(out, "{x:e} {y:e} {:e}", s.phi.at(i, j));
        }
        out.push('\n');
    }
    out
}

/// Snapshot closest to `t`.
pub fn nearest_snapshot(traj: &Trajectory, t: f64) -> &StateSnapshot {
    traj.snapshots
        .iter()
        .min_by(|a, b| (a.t - t).abs().total_cmp(&(b.t - t).abs()))
        .expect("trajectory has snapshots")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Writes the diagnostics CSV and one plot file per requested time
/// (`<stem>_phi_<index>.dat` next to the CSV). Returns the plot paths.
pub fn emit_report(
    csv_path: &Path,
    traj: &Trajectory,
    report: &EnergyReport,
    plot_times: &[f64],
) -> Result<Vec<std::path::PathBuf>> {
    write_text(csv_path, &diagnostics_csv(traj, report))?;
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("diagnostics");
    let dir = csv_path.parent().unwrap_or(Path::new(""));
    let mut paths = Vec::new();
    for (k, &t) in plot_times.iter().enumerate() {
        let p = dir.join(format!("{stem}_phi_{k}.dat"));
        write_text(&p, &phi_plot(nearest_snapshot(traj, t)))?;
        paths.push(p);
    }
    Ok(paths)
}
