//! Two-branch spatiotemporal CNN for semi-supervised video object
//! segmentation.
//!
//! A temporal coherence branch (an adversarially pretrained future-frame
//! generator) supplies motion-aware features to a coarse-to-fine spatial
//! segmentation branch with mask-guided attention. The crate covers the
//! full workflow: dataset ingestion, the four training phases, per-sequence
//! online adaptation, inference, and DAVIS-style evaluation (region
//! similarity, contour accuracy, temporal instability).

pub mod error;
pub mod nn;
pub mod params;

pub use error::{Error, Result};
