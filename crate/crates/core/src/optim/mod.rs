//! Parameter optimization: Adam with per-group learning rates, scene
//! initialization from a point cloud, and the training schedule.

mod adam;
mod init;
mod train;

pub use adam::{adam_step, AdamState, LearningRates, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use init::{init_from_points, mean_neighbor_distance};
pub use train::{
    evaluate, optimize, split_train_test, train, EvalResult, LogRecord, Split, SplitPolicy,
    TrainConfig, TrainEvent, TrainOutcome,
};
