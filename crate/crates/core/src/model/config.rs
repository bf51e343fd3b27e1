use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, TransformerBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small inputs and model so the full pipeline runs in seconds.
    Desk,
    /// 1024×128 log-mel, 224×224 frames, 11/1/8-layer stacks.
    Paper,
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(Error::Config(format!("unknown profile {other:?} (expected desk|paper)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub profile: Profile,
    pub embed_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub cross_layers: usize,
    pub decoder_layers: usize,
    pub decoder_dim: usize,
    pub decoder_heads: usize,
    pub patch_side: usize,
    /// Log-mel frames (time axis) fed to the audio branch.
    pub audio_frames: usize,
    pub mel_bins: usize,
    /// Frames are square, `frame_size × frame_size × 3`.
    pub frame_size: usize,
    pub mask_ratio: f64,
    pub num_labels: usize,
    pub temperature: f64,
    pub modality_embeddings: bool,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            profile: Profile::Desk,
            embed_dim: 32,
            heads: 4,
            encoder_layers: 2,
            cross_layers: 1,
            decoder_layers: 1,
            decoder_dim: 32,
            decoder_heads: 4,
            patch_side: 16,
            audio_frames: 128,
            mel_bins: 128,
            frame_size: 64,
            mask_ratio: 0.75,
            num_labels: 8,
            temperature: 0.05,
            modality_embeddings: true,
        }
    }

    pub fn paper() -> Self {
        ModelConfig {
            profile: Profile::Paper,
            embed_dim: 768,
            heads: 12,
            encoder_layers: 11,
            cross_layers: 1,
            decoder_layers: 8,
            decoder_dim: 512,
            decoder_heads: 16,
            patch_side: 16,
            audio_frames: 1024,
            mel_bins: 128,
            frame_size: 224,
            mask_ratio: 0.75,
            num_labels: 600,
            temperature: 0.05,
            modality_embeddings: true,
        }
    }

    pub fn for_profile(profile: Profile) -> Self {
        match profile {
            Profile::Desk => Self::desk(),
            Profile::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.encoder_layers == 0 || self.cross_layers == 0 || self.decoder_layers == 0 {
            return bad("every stack needs at least one layer".into());
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return bad(format!("embed_dim {} not divisible by {} heads", self.embed_dim, self.heads));
        }
        if self.decoder_heads == 0 || !self.decoder_dim.is_multiple_of(self.decoder_heads) {
            return bad(format!("decoder_dim {} not divisible by {} heads", self.decoder_dim, self.decoder_heads));
        }
        if !self.embed_dim.is_multiple_of(4) || !self.decoder_dim.is_multiple_of(4) {
            return bad("widths must be divisible by 4 for 2-D positional tables".into());
        }
        if self.num_labels == 0 {
            return bad("num_labels must be at least 1".into());
        }
        let s = self.patch_side;
        if s == 0 || !self.audio_frames.is_multiple_of(s) || !self.mel_bins.is_multiple_of(s) || !self.frame_size.is_multiple_of(s) {
            return bad(format!("input sizes not divisible by patch side {s}"));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad(format!("mask_ratio {} outside [0, 1)", self.mask_ratio));
        }
        if !(self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        Ok(())
    }

    pub fn audio_grid(&self) -> (usize, usize) {
        (self.audio_frames / self.patch_side, self.mel_bins / self.patch_side)
    }

    pub fn visual_grid(&self) -> (usize, usize) {
        (self.frame_size / self.patch_side, self.frame_size / self.patch_side)
    }

    pub fn audio_patches(&self) -> usize {
        let (r, c) = self.audio_grid();
        r * c
    }

    pub fn visual_patches(&self) -> usize {
        let (r, c) = self.visual_grid();
        r * c
    }

    pub fn audio_patch_width(&self) -> usize {
        self.patch_side * self.patch_side
    }

    pub fn visual_patch_width(&self) -> usize {
        self.patch_side * self.patch_side * 3
    }

    /// Learnable scalar count implied by this configuration.
    pub fn param_count(&self) -> usize {
        let (d, dd, c) = (self.embed_dim, self.decoder_dim, self.num_labels);
        let (pa, pv) = (self.audio_patch_width(), self.visual_patch_width());
        let types = if self.modality_embeddings { 2 * d + 2 * dd } else { 0 };
        Linear::numel(pa, d, true)
            + Linear::numel(pv, d, true)
            + 2 * self.encoder_layers * TransformerBlock::numel(d)
            + types
            + self.cross_layers * TransformerBlock::numel(d)
            + 2 * d
            + Linear::numel(d, dd, true)
            + dd
            + self.decoder_layers * TransformerBlock::numel(dd)
            + 2 * dd
            + Linear::numel(dd, pa, true)
            + Linear::numel(dd, pv, true)
            + 2 * Linear::numel(d, c, true)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}
