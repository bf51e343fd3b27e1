//! Synthetic tagger and detector scores for clips with known latent objects.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Modality, ScoreVector};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthScoreConfig {
    /// Mean score of a present object.
    pub high: f64,
    /// Mean score of an absent object.
    pub low: f64,
    /// Half-width of the uniform noise added to every score.
    pub noise: f64,
    /// Probability that a present object is missed by one modality.
    pub dropout: f64,
}

impl Default for SynthScoreConfig {
    fn default() -> Self {
        SynthScoreConfig { high: 0.9, low: 0.1, noise: 0.05, dropout: 0.15 }
    }
}

/// One audio and one visual score vector per clip, in input order. Misses
/// are drawn independently per modality.
pub fn synth_scores(latents: &[(String, Vec<usize>)], classes: usize, cfg: &SynthScoreConfig, seed: u64) -> Vec<ScoreVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * latents.len());
    for (clip, objects) in latents {
        for modality in [Modality::Audio, Modality::Visual] {
            let scores = (0..classes)
                .map(|c| {
                    let present = objects.contains(&c) && !rng.gen_bool(cfg.dropout);
                    let mean = if present { cfg.high } else { cfg.low };
                    let v = mean + rng.gen_range(-cfg.noise..=cfg.noise);
                    match modality {
                        Modality::Audio => v.clamp(-1.0, 1.0),
                        Modality::Visual => v.clamp(0.0, 1.0),
                    }
                })
                .collect();
            out.push(ScoreVector { clip: clip.clone(), modality, scores });
        }
    }
    out
}
