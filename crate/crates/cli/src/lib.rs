//! Library surface of the experiment harness; the `hjrl` binary is a thin
//! wrapper so integration tests can drive the commands in-process.

pub mod commands;
pub mod config;
pub mod manifest;

pub use commands::{
    cmd_compare, cmd_properties, cmd_solve_pde, cmd_stage1, cmd_train_rl, CompareReport,
    PropertiesReport, SolvePdeReport, Stage1Report, TrainReport,
};
pub use config::ExperimentConfig;

/// Cap the worker pool from `HJRL_THREADS` (unset or 0 means automatic).
/// Call once at process start; later calls are ignored.
pub fn init_threads() {
    if let Ok(v) = std::env::var("HJRL_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
