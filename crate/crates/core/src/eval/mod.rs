pub mod ablation;
pub mod curve;
pub mod metrics;
pub mod report;

pub use ablation::{run_ablation, run_ablation_with, AblationCell, AblationMatrix, VariantSummary};
pub use curve::{age_bins, bin_of, gate_age_curve, gate_curve_csv, longest_non_increasing, GateBin};
pub use metrics::{alignment_score, auc, gauc, Alignment};
pub use report::{evaluate, BucketMetrics, EvalReport, EvalSettings, GateSummary, TaskMetrics};
