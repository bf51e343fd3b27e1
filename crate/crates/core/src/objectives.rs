//! Training losses: symmetric InfoNCE, masked reconstruction, label BCE and
//! the per-variant total.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, Tensor};
use crate::tokenizer::PatchSet;

/// Which label targets (if any) the two prediction heads are trained on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Contrastive + reconstruction only.
    Base,
    /// Both heads predict the audio-derived labels.
    Audio,
    /// Both heads predict the visual-derived labels.
    Visual,
    /// Audio head predicts audio labels, visual head predicts visual labels.
    Separate,
    /// Both heads predict the intersection of audio and visual labels.
    And,
    /// Both heads predict the union of audio and visual labels.
    Or,
}

impl Variant {
    pub const ALL: [Variant; 6] = [Variant::Base, Variant::Visual, Variant::Audio, Variant::Separate, Variant::And, Variant::Or];

    pub fn uses_labels(self) -> bool {
        self != Variant::Base
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Audio => "audio",
            Variant::Visual => "visual",
            Variant::Separate => "separate",
            Variant::And => "and",
            Variant::Or => "or",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?} (expected base|visual|audio|separate|and|or)")))
    }
}

/// Positions the reconstruction loss is measured on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconMode {
    /// Hidden patches only.
    #[default]
    MaskedOnly,
    /// Every patch of both grids.
    All,
}

impl FromStr for ReconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "masked_only" => Ok(ReconMode::MaskedOnly),
            "all" => Ok(ReconMode::All),
            other => Err(Error::Config(format!("unknown reconstruction mode {other:?}"))),
        }
    }
}

/// Scalar loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub l_r: f64,
    pub l_a2l: f64,
    pub l_v2l: f64,
    pub l_base: f64,
    pub l_deteclap: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_c, self.l_r, self.l_a2l, self.l_v2l, self.l_base, self.l_deteclap].iter().all(|v| v.is_finite())
    }
}

/// Symmetric in-batch InfoNCE over `[B×D]` pooled embeddings. Rows are
/// L2-normalized, so row scale does not matter.
pub fn contrastive_loss(g: &mut Graph, audio: NodeId, visual: NodeId, temperature: f64) -> Result<NodeId> {
    let (b, d) = g.shape(audio);
    if g.shape(visual) != (b, d) {
        let (vb, vd) = g.shape(visual);
        return Err(Error::shape(format!("contrastive inputs [{b}×{d}] and [{vb}×{vd}]")));
    }
    if b < 2 {
        return Err(Error::contract(format!("contrastive loss needs at least 2 pairs for in-batch negatives, got {b}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::input(format!("temperature {temperature} must be positive")));
    }
    let a = g.l2_normalize_rows(audio);
    let v = g.l2_normalize_rows(visual);
    let vt = g.transpose(v);
    let sim = g.matmul(a, vt)?;
    let logits = g.scale(sim, 1.0 / temperature);
    let logits_t = g.transpose(logits);
    let diag: Vec<(usize, usize)> = (0..b).map(|i| (i, i)).collect();
    let a2v = g.log_softmax_rows(logits);
    let v2a = g.log_softmax_rows(logits_t);
    let a2v = g.pick_mean(a2v, &diag)?;
    let v2a = g.pick_mean(v2a, &diag)?;
    let sum = g.add(a2v, v2a)?;
    Ok(g.scale(sum, -0.5))
}

/// Per-clip reconstruction targets and mask bookkeeping.
pub struct ReconTarget<'a> {
    /// Per-patch normalized full grid, `[N_total × P]`.
    pub audio: &'a Tensor,
    pub visual: &'a Tensor,
    pub audio_set: &'a PatchSet,
    pub visual_set: &'a PatchSet,
}

/// Mean squared error between reconstructions and normalized targets,
/// pooled over every compared element of both modalities.
pub fn reconstruction_loss(g: &mut Graph, audio_recon: NodeId, visual_recon: NodeId, target: &ReconTarget<'_>, mode: ReconMode) -> Result<NodeId> {
    let mut terms = Vec::new();
    let mut count = 0usize;
    for (recon, full, set) in [(audio_recon, target.audio, target.audio_set), (visual_recon, target.visual, target.visual_set)] {
        if g.value(recon).shape() != full.shape() {
            return Err(Error::contract(format!("reconstruction {:?} vs target {:?}", g.value(recon).shape(), full.shape())));
        }
        if set.total() != full.rows() {
            return Err(Error::contract(format!("patch set covers {} patches, target has {}", set.total(), full.rows())));
        }
        let rows: Vec<usize> = match mode {
            ReconMode::All => (0..full.rows()).collect(),
            ReconMode::MaskedOnly => set.masked_indices.clone(),
        };
        if rows.is_empty() {
            continue;
        }
        let picked = g.gather_rows(recon, &rows)?;
        let t = full.select_rows(&rows);
        count += t.len();
        terms.push(g.sum_sq_diff(picked, t.data())?);
    }
    let mut acc = match terms.first() {
        Some(&t) => t,
        None => return Ok(g.constant(Tensor::scalar(0.0))),
    };
    for &t in &terms[1..] {
        acc = g.add(acc, t)?;
    }
    Ok(g.scale(acc, 1.0 / count as f64))
}

/// Mean binary cross-entropy over all label entries; targets may be hard or
/// soft but must lie in `[0, 1]`.
pub fn label_bce(g: &mut Graph, probs: NodeId, target: &[f64]) -> Result<NodeId> {
    if let Some(bad) = target.iter().find(|y| !(0.0..=1.0).contains(*y)) {
        return Err(Error::input(format!("label target {bad} outside [0, 1]")));
    }
    g.bce(probs, target)
}

/// Loss graph handles for one batch.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub contrastive: NodeId,
    pub reconstruction: NodeId,
    pub audio_label: Option<NodeId>,
    pub visual_label: Option<NodeId>,
}

/// Sums the parts a variant trains on. Returns the scalar to differentiate
/// and its breakdown.
pub fn total_loss(g: &mut Graph, parts: LossParts, variant: Variant) -> Result<(NodeId, LossBreakdown)> {
    let base = g.add(parts.contrastive, parts.reconstruction)?;
    let v = |g: &Graph, id: NodeId| g.value(id).item();
    let mut bd = LossBreakdown {
        l_c: v(g, parts.contrastive),
        l_r: v(g, parts.reconstruction),
        l_base: v(g, base),
        ..LossBreakdown::default()
    };
    if !variant.uses_labels() {
        bd.l_deteclap = bd.l_base;
        return Ok((base, bd));
    }
    let (Some(a2l), Some(v2l)) = (parts.audio_label, parts.visual_label) else {
        return Err(Error::contract(format!("variant {variant} needs both label losses")));
    };
    let with_a = g.add(base, a2l)?;
    let total = g.add(with_a, v2l)?;
    bd.l_a2l = v(g, a2l);
    bd.l_v2l = v(g, v2l);
    bd.l_deteclap = v(g, total);
    Ok((total, bd))
}
