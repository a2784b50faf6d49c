//! Training, evaluation and everything the command line drives.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod optim;
pub mod schedule;
pub mod train;
pub mod verify;

pub use checkpoint::Checkpoint;
pub use config::{DataSource, DirectorySource, TrainConfig};
pub use metrics::MetricsReport;
pub use train::{evaluate, run_cv, train, train_and_evaluate, CvReport, EpochRecord, FeatureKind};
