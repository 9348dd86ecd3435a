//! Metrics, runtime measurement, top-k summaries, the noise sweep and
//! run reports.

mod evaluate;
mod metrics;
mod report;
mod runtime;
mod summary;
mod sweep;

pub use evaluate::{evaluate_model, evaluate_on, modality_tag};
pub use metrics::{accuracy, auc_roc, balanced_accuracy, confusion, ConfusionMatrix, MetricsReport, DEFAULT_THRESHOLD};
pub use report::{config_hash, RunReport};
pub use runtime::{measure_runtime, median_runtime};
pub use summary::{summaries_csv, summarize_topk, Stat, TopKSummary};
pub use sweep::{noise_sweep, noise_table_csv, NoiseCell, NoiseSweepConfig};
