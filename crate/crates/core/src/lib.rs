//! Audio-visual representation learning with object-label supervision.
//!
//! A contrastive masked autoencoder over paired spectrogram/frame patches,
//! extended with per-modality heads that predict multi-hot object labels
//! produced by thresholding tagger and detector scores.

pub mod error;
pub mod nn;

pub use error::{Error, Result};
pub mod model;
pub mod tokenizer;
pub mod labels;
pub mod objectives;
pub mod config;
pub mod eval;
