//! Encoded-space statistics: group MMDs, kernel density estimates and
//! encoding export.

mod export;
mod kde;
mod mmd;

pub use export::{encodings_file, export_encodings, export_schedule, read_encodings};
pub use kde::{kde, silverman_bandwidth, Kde};
pub use mmd::{group_mmds, median_bandwidth, mmd, GroupMmds, Kernel};
