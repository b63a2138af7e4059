//! Benchmark harness for the samplers in [`sgmcmc`]: experiment configs,
//! seeded parallel runs, and CSV results.

pub mod config;
pub mod experiments;
pub mod results;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind, ScheduleFamily, Series};
pub use experiments::{
    run_experiment, run_seed, select_best, AlphaWinner, ExperimentOutput, GridChoice,
    HarnessError, Runner, SeriesFit,
};
pub use results::{read_csv, read_rows, write_csv, write_rows, CsvError, ResultRow, HEADER};
