//! The end-to-end adaptation procedure and its reports.

pub mod dataset;
pub mod procedure;
pub mod report;
pub mod split;

pub use dataset::{DomainDataset, Stage};
pub use report::{ExperimentReport, ModelKind, PredictionRow, RmseRow, StageRecord};
pub use split::{halve_target, rmse, split, Partition, SplitSpec};
pub use procedure::{run_procedure, ExperimentConfig};
