//! Training, evaluation, ablation and distillation drivers.

pub mod ablate;
pub mod config;
pub mod distill;
pub mod eval;
pub mod gradcheck;
pub mod objective;
pub mod train;

pub use ablate::{ablate, ablate_on, AblationReport, Arm, ArmRun};
pub use config::{DistillConfig, LossMode, LossSpec, PlateauConfig, RunConfig};
pub use distill::{distill, distill_on};
pub use eval::{evaluate_checkpoint, evaluate_model, evaluate_with, EvalOptions, EvalSummary};
pub use gradcheck::{gradcheck_suite, SuiteReport};
pub use objective::{prepare_all, Objective, PreparedCase, Targets};
pub use train::{train, train_on, validation_loss, EpochRow, TrainLog, TrainOutcome};
