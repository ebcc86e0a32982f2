//! Configuration, file formats, reports and presets used by the command
//! line tool and the regression tests.

pub mod config;
pub mod io;
pub mod report;
pub mod setup;

pub use config::{load_config, parse_config, parse_config_in, preset, RunConfig};
pub use io::{load_controls, load_trajectory, save_controls, save_trajectory};
pub use report::{diagnostics_csv, emit_report, history_csv};
pub use setup::Setup;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "NCHS_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`]; unset or invalid
/// values leave the default. Returns the configured count.
pub fn init_threads() -> Option<usize> {
    let n = std::env::var(THREADS_ENV).ok()?.trim().parse::<usize>().ok().filter(|&n| n > 0)?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok()?;
    Some(n)
}

#[cfg(test)]
mod tests;
