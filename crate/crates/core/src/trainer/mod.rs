//! SGD training loop, checkpoints and the ablation runner.

mod ablation;
mod config;
mod optim;
mod run;

pub use ablation::{config_echo, run_ablation, AblationAxis, AblationReport, AblationRow};
pub use config::TrainConfig;
pub use optim::{lr_schedule, sgd_step, OptimizerState};
pub use run::{prepare_split, train, write_history_csv, EpochRecord, TrainOutcome, Trainer, ValMetrics};
