//! Experiment runner behind the `tradbs` CLI: config ingestion, scorer
//! construction, strategy fan-out, oracle checks, benchmarking and JSONL
//! result files.

pub mod bench;
pub mod config;
pub mod oracle;
pub mod runner;
mod train;

pub use bench::{bench, BenchReport};
pub use config::{load_config, DecoderSpec, ExperimentConfig, LoadedConfig, ScorerSpec, StrategySpec};
pub use oracle::{oracle_check, oracle_check_with, OracleLimits, OracleReport};
pub use runner::{run_experiment, run_loaded, sig9, RunOptions, RunReport, RESULT_SCHEMA};
pub use train::{train_ngram_cmd, TrainOptions};
