//! Cross-modality knowledge transfer for paired melt-pool image / acoustic
//! defect detection.
//!
//! The crate covers data preparation ([`dataset`]), declarative networks on a
//! small f64 autodiff-free substrate ([`nn`], [`models`]), objectives
//! ([`losses`]), the training pipelines and search ([`training`]), metrics
//! and experiment drivers ([`evaluation`]), encoded-space statistics
//! ([`diagnostics`]) and LIME-based audits ([`xai`]).

pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod evaluation;
pub mod losses;
pub mod models;
pub mod nn;
pub mod training;
mod util;
pub mod xai;

pub use error::{CmktError, Result};
