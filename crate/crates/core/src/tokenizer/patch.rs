use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::mel::AudioFeature;
use crate::error::{Error, Result};
use crate::nn::{Graph, NodeId, Tensor};

/// One RGB frame, `H×W×3` intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl FrameImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::shape(format!("{height}×{width}×3 frame needs {} values, got {}", height * width * 3, data.len())));
        }
        Ok(FrameImage { height, width, data })
    }

    /// Maps `[0, 1]` intensities to `[-1, 1]`.
    pub fn centered(&self) -> FrameImage {
        FrameImage { height: self.height, width: self.width, data: self.data.iter().map(|v| 2.0 * v - 1.0).collect() }
    }
}

/// All patches of a feature map, in row-major grid order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    /// `[rows·cols × side·side·channels]`
    pub patches: Tensor,
    pub rows: usize,
    pub cols: usize,
    pub side: usize,
    pub channels: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn patch_width(&self) -> usize {
        self.side * self.side * self.channels
    }

    /// Reassembles the `(rows·side) × (cols·side) × channels` map.
    pub fn unpatchify(&self) -> Vec<f64> {
        let (h, w, c, s) = (self.rows * self.side, self.cols * self.side, self.channels, self.side);
        let mut out = vec![0.0; h * w * c];
        for (p, patch) in self.patches.data().chunks(self.patch_width()).enumerate() {
            let (pr, pc) = (p / self.cols, p % self.cols);
            for y in 0..s {
                let dst = ((pr * s + y) * w + pc * s) * c;
                out[dst..dst + s * c].copy_from_slice(&patch[y * s * c..(y + 1) * s * c]);
            }
        }
        out
    }
}

/// Cuts an `h×w×c` row-major map into `side×side` patches.
pub fn patchify_map(data: &[f64], h: usize, w: usize, c: usize, side: usize) -> Result<PatchGrid> {
    if side == 0 || !h.is_multiple_of(side) || !w.is_multiple_of(side) {
        return Err(Error::shape(format!("{h}×{w} is not divisible into {side}×{side} patches")));
    }
    if data.len() != h * w * c {
        return Err(Error::shape(format!("{h}×{w}×{c} map with {} values", data.len())));
    }
    let (rows, cols) = (h / side, w / side);
    let mut out = Vec::with_capacity(data.len());
    for pr in 0..rows {
        for pc in 0..cols {
            for y in 0..side {
                let src = ((pr * side + y) * w + pc * side) * c;
                out.extend_from_slice(&data[src..src + side * c]);
            }
        }
    }
    Ok(PatchGrid { patches: Tensor::new(vec![rows * cols, side * side * c], out)?, rows, cols, side, channels: c })
}

pub trait Patchify {
    fn patchify(&self, side: usize) -> Result<PatchGrid>;
}

impl Patchify for AudioFeature {
    fn patchify(&self, side: usize) -> Result<PatchGrid> {
        patchify_map(self.frames.data(), self.frames.rows(), self.frames.cols(), 1, side)
    }
}

impl Patchify for FrameImage {
    fn patchify(&self, side: usize) -> Result<PatchGrid> {
        patchify_map(&self.data, self.height, self.width, 3, side)
    }
}

/// The encoder-visible subset of a patch grid plus its mask bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    /// `[N_kept × P]`, in ascending grid order.
    pub patches: Tensor,
    pub kept_indices: Vec<usize>,
    pub masked_indices: Vec<usize>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub mask_ratio: f64,
}

impl PatchSet {
    pub fn total(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn kept(&self) -> usize {
        self.kept_indices.len()
    }

    /// Every patch visible.
    pub fn unmasked(grid: &PatchGrid) -> PatchSet {
        PatchSet {
            patches: grid.patches.clone(),
            kept_indices: (0..grid.len()).collect(),
            masked_indices: Vec::new(),
            grid_rows: grid.rows,
            grid_cols: grid.cols,
            mask_ratio: 0.0,
        }
    }
}

/// `N − ⌊ρ·N⌋`
pub fn kept_count(total: usize, ratio: f64) -> usize {
    total - (ratio * total as f64).floor() as usize
}

/// Hides `⌊ρ·N⌋` patches chosen uniformly at random by `seed`.
pub fn random_mask(grid: &PatchGrid, ratio: f64, seed: u64) -> Result<PatchSet> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::input(format!("mask ratio {ratio} outside [0, 1)")));
    }
    let n = grid.len();
    let keep = kept_count(n, ratio);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kept = order[..keep].to_vec();
    let mut masked = order[keep..].to_vec();
    kept.sort_unstable();
    masked.sort_unstable();
    Ok(PatchSet {
        patches: grid.patches.select_rows(&kept),
        kept_indices: kept,
        masked_indices: masked,
        grid_rows: grid.rows,
        grid_cols: grid.cols,
        mask_ratio: ratio,
    })
}

/// Restores full grid order: kept rows take `decoded`, masked rows take the
/// mask token; positional embeddings are added to every row.
pub fn unshuffle_with_pad(g: &mut Graph, decoded: NodeId, set: &PatchSet, mask_token: NodeId, pos: NodeId) -> Result<NodeId> {
    let (rows, _) = g.shape(decoded);
    if rows != set.kept() {
        return Err(Error::shape(format!("{rows} decoded rows for {} kept patches", set.kept())));
    }
    if g.shape(pos).0 != set.total() {
        return Err(Error::shape(format!("{} positional rows for {} patches", g.shape(pos).0, set.total())));
    }
    let full = g.scatter_rows(decoded, mask_token, &set.kept_indices, set.total())?;
    g.add(full, pos)
}

/// Per-patch standardization used for reconstruction targets.
pub fn normalize_patches(patches: &Tensor) -> Tensor {
    let c = patches.cols();
    let mut out = patches.data().to_vec();
    for row in out.chunks_mut(c) {
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + 1e-6).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    Tensor::new(patches.shape().to_vec(), out).expect("same shape")
}
