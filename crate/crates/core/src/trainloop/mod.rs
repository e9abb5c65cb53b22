//! Pretraining loop and its pieces.

pub mod checkpoint;
pub mod config;
pub mod optim;
pub mod pretrain;
pub mod schedule;

pub use checkpoint::Checkpoint;
pub use config::{DatasetKind, RunConfig};
pub use optim::{adam_step, OptimState};
pub use pretrain::{pretrain, pretrain_with, EpochSummary, EvalRecord, Progress, RunArtifacts, StepMetrics};
pub use schedule::Schedule;
