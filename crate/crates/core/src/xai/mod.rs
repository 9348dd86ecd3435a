//! LIME explanations on image-shaped inputs plus the nozzle-mask and
//! frequency-range audits built on them.

mod audit;
mod lime;

pub use audit::{
    explain_samples, frequency_histogram, intersection_distribution, intersection_stats, mask_from_rle, mask_rle,
    read_explanations, read_mask, write_explanations, write_mask, AuditConfig, ExplainedSample, ExplanationRecord,
    FrequencyHistogram, IntersectionStats,
};
pub use lime::{
    lime_explain, mask_intersection_count, positive_mask, segment_grid, top_positive, weighted_ridge, BatchPredict,
    Explanation, LimeConfig, SuperpixelMap,
};
