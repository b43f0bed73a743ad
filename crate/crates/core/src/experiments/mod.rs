//! Experiment configuration, bundled catalogue and runner.

pub mod catalogue;
pub mod config;
pub mod runner;

pub use catalogue::{bundled_source, load_bundled, BUNDLED};
pub use config::{
    check_config, validate_config, CheckSpec, ClockBlock, DriverBlock, Expectation, ExperimentConfig, OutputBlock,
    ParamOverrides, ProblemBlock, Role, ScenarioBlock, SolverBlock, TerminalBlock,
};
pub use runner::{
    config_hash, rounded_json, run_experiment, write_outputs, write_solution_csv, ExperimentReport, LadderRow,
    StabilityRow, Tables, REPORT_DIGITS, REPORT_SCHEMA_VERSION,
};
