//! Detection metrics, evaluation reports, and the one-vs-all protocol.

mod metrics;
mod protocol;
mod report;

pub use metrics::{
    apcer_at_bpcer, auroc, eer, roc_csv, roc_points, LabeledScores, DEFAULT_BPCER_LEVEL,
};
pub use protocol::one_vs_all_run;
pub use report::{ClassReport, EvaluationReport, MetricBlock, REPORT_SCHEMA_VERSION};
