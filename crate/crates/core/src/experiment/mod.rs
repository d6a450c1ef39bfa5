//! Experiment driver: configuration, training orchestration, noise-free
//! evaluation, CSV metrics and checkpoints.

mod checkpoint;
mod config;
mod csv;
mod eval;
mod train;

pub use checkpoint::{Checkpoint, TrainState, STATE_MAGIC};
pub use config::{ExperimentConfig, RawConfig, KEYS};
pub use csv::{CsvLog, EvalRecord, CSV_HEADER};
pub use eval::{evaluate, EvalReport};
pub use train::{run_eval, run_train, ResumeOptions, TrainSummary, Trainer};
