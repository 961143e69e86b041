//! Experiment configuration, orchestration and persistence.
//!
//! Cells `(n, m, seed)` are independent and run in parallel. Each cell owns
//! its random streams, so the written bundle does not depend on the number
//! of worker threads.

mod commands;
mod config;
mod experiment;
pub mod output;
pub mod plot;

pub use commands::{
    diagnose, rate_report, rate_sweep, run, verify_assumptions, write_assumptions, AssumptionReport, Check,
    CellVerdicts, DiagnoseReport, RateReport, MAX_SLOPE_GAP, SLOPE_RANGE,
};
pub use config::RunConfig;
pub use experiment::{
    cd_key, checked_sample_from_meta, curves, data_seed, diagnose_trajectory, run_cell, run_experiment,
    write_experiment, CellDiagnostics, CellResult, Curve, ExperimentResult, Setup,
};
