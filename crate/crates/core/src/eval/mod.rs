//! Segmentation and grasp metrics, the benchmark runner and its reports.

mod benchmark;
mod metrics;
mod report;

use thiserror::Error;

pub use benchmark::{
    gt_part_cloud, run_benchmark, EntrySegmentationScore, Failure, GraspEvalRecord, PlanRecord,
};
pub use metrics::{
    detection_rate, f1, grasp_success, hr_accuracy, iou, masks_by_label, seg_metrics, HrAccuracy, PartScore,
    SegMetrics,
};
pub use report::{compare, BenchmarkReport, ClassSegRow, GroupScore, HrRow, MethodRow, SegMeans};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mask dimensions differ: predicted {pred:?}, ground truth {gt:?}")]
    DimensionMismatch { pred: (usize, usize), gt: (usize, usize) },
    #[error("{0}")]
    Input(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("reports come from different configurations ({a} vs {b}); pass --force to compare anyway")]
    Fingerprint { a: String, b: String },
}
