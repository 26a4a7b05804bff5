//! Desk-scale disease-centric multi-modal CutMix augmentation for
//! contrastive image-report pretraining.
//!
//! The pipeline: rule-based report labeling → balanced pair sampling →
//! diagnostic-sentence CutMix → cross-attention localization →
//! feature-level image mixing → augmented contrastive training, all
//! verified on synthetic corpora with planted ground truth.

pub mod cli;
pub mod corpus;
pub mod error;
pub mod eval;
pub mod featmix;
pub mod labeler;
pub mod localizer;
pub mod losses;
pub mod nn;
pub mod plot;
pub mod sampler;
pub mod textmix;
pub mod train;

pub use error::{Error, Result};
