//! Seeded mini-batch pre-training.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{shuffled, Dataset, Split};
use crate::error::{Error, Result};
use crate::labels::HeadTargets;
use crate::model::{checkpoint, Model, ModelConfig};
use crate::nn::{AdamConfig, AdamState, Bound, Graph, NodeId};
use crate::objectives::{contrastive_loss, label_bce, reconstruction_loss, total_loss, LossBreakdown, LossParts, ReconMode, ReconTarget, Variant};
use crate::tokenizer::random_mask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub recon_mode: ReconMode,
    /// Write a checkpoint every this many steps (0 disables).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 1500, batch_size: 8, lr: 1e-3, weight_decay: 0.0, recon_mode: ReconMode::MaskedOnly, checkpoint_every: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size {} is below 2; the contrastive loss needs in-batch negatives", self.batch_size)));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config(format!("weight decay {} is negative", self.weight_decay)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
}

/// Where and how checkpoints are written during training.
#[derive(Clone, Debug, Default)]
pub struct CheckpointSink {
    pub dir: Option<PathBuf>,
    /// Stored in every checkpoint header.
    pub extra: serde_json::Value,
}

pub struct TrainRun {
    pub model: Model,
    pub trace: Vec<StepRecord>,
    /// Checkpoint files in write order.
    pub checkpoints: Vec<PathBuf>,
}

/// Pre-trains a freshly initialized model on the train split.
///
/// `targets` must cover every train clip when the variant uses labels.
pub fn train(model_cfg: &ModelConfig, seed: u64, data: &Dataset, variant: Variant, targets: &BTreeMap<String, HeadTargets>, cfg: &TrainConfig, sink: &CheckpointSink) -> Result<TrainRun> {
    cfg.validate()?;
    data.check_geometry(model_cfg)?;
    let train_idx = data.indices(Split::Train);
    if train_idx.len() < 2 {
        return Err(Error::contract(format!("training needs at least 2 train clips, found {}", train_idx.len())));
    }
    if variant.uses_labels() {
        for &i in &train_idx {
            let clip = &data.clips[i].clip;
            let t = targets.get(clip).ok_or_else(|| Error::contract(format!("variant {variant} has no labels for train clip {clip}")))?;
            for v in [&t.audio, &t.visual] {
                if v.len() != model_cfg.num_labels {
                    return Err(Error::contract(format!("clip {clip}: {} label entries, model has {}", v.len(), model_cfg.num_labels)));
                }
            }
        }
    }

    let mut model = Model::new(model_cfg.clone(), seed)?;
    let mut adam = AdamState::new(AdamConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..AdamConfig::default() }, model.params.tensors());
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let batch = cfg.batch_size.min(train_idx.len());
    let mut queue: Vec<usize> = Vec::new();
    let mut trace = Vec::with_capacity(cfg.steps as usize);
    let mut checkpoints = Vec::new();

    for step in 1..=cfg.steps {
        if queue.len() < batch {
            // Drop the epoch remainder so a batch never repeats a clip.
            queue = shuffled(&train_idx, &mut rng);
            queue.truncate(train_idx.len() - train_idx.len() % batch);
            queue.reverse();
        }
        let members: Vec<usize> = (0..batch).map(|_| queue.pop().expect("queue refilled")).collect();
        let seeds: Vec<(u64, u64)> = members.iter().map(|_| (rng.next_u64(), rng.next_u64())).collect();

        let mut g = Graph::new();
        let b = model.params.bind(&mut g);
        let (loss, bd) = batch_loss(&model, &mut g, &b, data, &members, &seeds, variant, targets, cfg.recon_mode)?;
        if !bd.is_finite() {
            let clips = members.iter().map(|&i| data.clips[i].clip.as_str()).collect::<Vec<_>>().join(",");
            return Err(Error::NonFinite { step: step as usize, batch: (step - 1) as usize, clips });
        }
        g.backward(loss)?;
        let grads = b.grads(&g, &model.params);
        adam.step(model.params.tensors_mut(), &grads)?;
        trace.push(StepRecord { step, loss: bd });

        if let Some(dir) = &sink.dir {
            if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) || step == cfg.steps {
                let path = dir.join(format!("step_{step:06}.ckpt"));
                checkpoint::save(&path, &model, seed, step, sink.extra.clone())?;
                checkpoints.push(path);
            }
        }
    }
    Ok(TrainRun { model, trace, checkpoints })
}

/// One JSON object per step.
pub fn write_trace(path: &Path, trace: &[StepRecord]) -> Result<()> {
    let mut text = String::new();
    for r in trace {
        let _ = writeln!(text, "{}", serde_json::to_string(r)?);
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Builds the loss graph for one batch of clip indices.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    model: &Model,
    g: &mut Graph,
    b: &Bound,
    data: &Dataset,
    members: &[usize],
    mask_seeds: &[(u64, u64)],
    variant: Variant,
    targets: &BTreeMap<String, HeadTargets>,
    recon_mode: ReconMode,
) -> Result<(NodeId, LossBreakdown)> {
    let ratio = model.config.mask_ratio;
    let mut a_bar = Vec::new();
    let mut v_bar = Vec::new();
    let mut recon = Vec::new();
    let mut a_probs = Vec::new();
    let mut v_probs = Vec::new();
    let mut y_a = Vec::new();
    let mut y_v = Vec::new();
    for (&i, &(sa, sv)) in members.iter().zip(mask_seeds) {
        let clip = &data.clips[i];
        let aset = random_mask(&clip.audio, ratio, sa)?;
        let vset = random_mask(&clip.visual, ratio, sv)?;
        let n = model.forward(g, b, &aset, &vset)?;
        a_bar.push(n.audio_pooled);
        v_bar.push(n.visual_pooled);
        let target = ReconTarget { audio: &clip.audio_target, visual: &clip.visual_target, audio_set: &aset, visual_set: &vset };
        recon.push(reconstruction_loss(g, n.audio_recon, n.visual_recon, &target, recon_mode)?);
        if variant.uses_labels() {
            let t = targets.get(&clip.clip).ok_or_else(|| Error::contract(format!("no labels for clip {}", clip.clip)))?;
            a_probs.push(n.audio_probs);
            v_probs.push(n.visual_probs);
            y_a.extend_from_slice(&t.audio);
            y_v.extend_from_slice(&t.visual);
        }
    }
    let a = g.concat_rows(&a_bar)?;
    let v = g.concat_rows(&v_bar)?;
    let contrastive = contrastive_loss(g, a, v, model.config.temperature)?;
    let mut r = recon[0];
    for &x in &recon[1..] {
        r = g.add(r, x)?;
    }
    let reconstruction = g.scale(r, 1.0 / members.len() as f64);
    let (audio_label, visual_label) = if variant.uses_labels() {
        let pa = g.concat_rows(&a_probs)?;
        let pv = g.concat_rows(&v_probs)?;
        (Some(label_bce(g, pa, &y_a)?), Some(label_bce(g, pv, &y_v)?))
    } else {
        (None, None)
    };
    total_loss(g, LossParts { contrastive, reconstruction, audio_label, visual_label }, variant)
}

/// Loss value only, for diagnostics.
pub fn evaluate_batch(model: &Model, data: &Dataset, members: &[usize], mask_seeds: &[(u64, u64)], variant: Variant, targets: &BTreeMap<String, HeadTargets>, recon_mode: ReconMode) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let b = model.params.bind(&mut g);
    Ok(batch_loss(model, &mut g, &b, data, members, mask_seeds, variant, targets, recon_mode)?.1)
}
