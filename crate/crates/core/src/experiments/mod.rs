//! Declarative experiment runs: config, staged pipeline with resume,
//! self-contained reports, cross-run tables and factor grids.

mod config;
mod grid;
mod report;
mod run;

pub use config::{ExperimentConfig, Seeds};
pub use grid::{expand_grid, set_path, GridPoint, GridSpec};
pub use report::{
    tabulate, ComparisonTable, CorpusResult, CorrelationEntry, EvaluationReport, GroupMatrices, TableCell, TableRow,
    TrainingSummary, REPORT_SCHEMA_VERSION,
};
pub use run::{
    load_report, read_state, run_experiment, run_stages, RunDir, RunLock, RunOptions, RunOutcome, RunState, RunStatus,
    Stage, StageFailure,
};
