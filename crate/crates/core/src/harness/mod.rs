//! Training, evaluation, gradient checking, checkpoints and experiment runs.

mod checkpoint;
mod experiment;
mod gradcheck;
mod metrics;
mod params;
mod train;

pub use checkpoint::{Checkpoint, CheckpointBody, CHECKPOINT_FORMAT};
pub use experiment::{run_experiment, Manifest, Report, RunFailure, RunOutput, SplitSummaries, Stage, System};
pub use gradcheck::{gradcheck, gradcheck_trials, random_pipeline_instance, random_pop_instance, GradcheckReport};
pub use metrics::{evaluate, is_correct, Confusion, Count, Labeled, Metrics};
pub use params::{Parameters, Trainable};
pub use train::{lr_at, train, ModelKind, Sgd, TrainConfig, TrainLog};
