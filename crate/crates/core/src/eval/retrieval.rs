//! Pooled embeddings and cross-modal recall@K.

use serde::{Deserialize, Serialize};

use super::corpus::{Dataset, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::Tensor;
use crate::tokenizer::PatchSet;

pub const RECALL_KS: [usize; 3] = [1, 5, 10];

/// `(ā, v̄)` rows for every clip of `split`, in manifest order, with masking
/// disabled.
pub fn embed_corpus(model: &Model, data: &Dataset, split: Split) -> Result<(Tensor, Tensor)> {
    data.check_geometry(&model.config)?;
    let idx = data.indices(split);
    if idx.is_empty() {
        return Err(Error::contract(format!("split {split} is empty")));
    }
    let mut a = Vec::with_capacity(idx.len());
    let mut v = Vec::with_capacity(idx.len());
    for i in idx {
        let c = &data.clips[i];
        let (ea, ev) = model.embed(&PatchSet::unmasked(&c.audio), &PatchSet::unmasked(&c.visual))?;
        a.push(ea);
        v.push(ev);
    }
    Ok((Tensor::from_rows(&a)?, Tensor::from_rows(&v)?))
}

fn normalized(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows())
        .map(|i| {
            let r = t.row(i);
            let n = r.iter().map(|v| v * v).sum::<f64>().sqrt();
            r.iter().map(|v| if n > 0.0 { v / n } else { 0.0 }).collect()
        })
        .collect()
}

/// Cosine similarity matrix, `[queries × gallery]`.
pub fn cosine_matrix(q: &Tensor, g: &Tensor) -> Result<Vec<Vec<f64>>> {
    if q.cols() != g.cols() {
        return Err(Error::shape(format!("query width {} vs gallery width {}", q.cols(), g.cols())));
    }
    let (qn, gn) = (normalized(q), normalized(g));
    Ok(qn.iter().map(|a| gn.iter().map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum()).collect()).collect())
}

/// 0-based rank of gallery item `pos` in `sims`, ties going to the lower
/// gallery index.
pub fn rank_of(sims: &[f64], pos: usize) -> usize {
    let s = sims[pos];
    sims.iter().enumerate().filter(|&(j, &x)| x > s || (x == s && j < pos)).count()
}

/// Ranks of each query's positive (row `i` of queries matches row `i` of the gallery).
pub fn positive_ranks(sims: &[Vec<f64>]) -> Result<Vec<usize>> {
    let n = sims.len();
    if sims.iter().any(|r| r.len() != n) {
        return Err(Error::contract("queries and gallery must be row-aligned"));
    }
    Ok(sims.iter().enumerate().map(|(i, r)| rank_of(r, i)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recalls {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub sum_r: f64,
}

impl Recalls {
    pub fn from_ranks(ranks: &[usize]) -> Self {
        let at = |k: usize| ranks.iter().filter(|&&r| r < k).count() as f64 / ranks.len() as f64;
        let (r1, r5, r10) = (at(RECALL_KS[0]), at(RECALL_KS[1]), at(RECALL_KS[2]));
        Recalls { r1, r5, r10, sum_r: r1 + r5 + r10 }
    }
}

/// Both retrieval directions. `sum_r` adds the two per-direction sums.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub queries: usize,
    pub audio_to_visual: Recalls,
    pub visual_to_audio: Recalls,
    pub sum_r: f64,
}

/// Recall@K of row-aligned queries against a gallery.
pub fn retrieval_eval(queries: &Tensor, gallery: &Tensor) -> Result<Recalls> {
    if queries.rows() != gallery.rows() {
        return Err(Error::contract(format!("{} queries vs {} gallery rows", queries.rows(), gallery.rows())));
    }
    Ok(Recalls::from_ranks(&positive_ranks(&cosine_matrix(queries, gallery)?)?))
}

pub fn retrieval_both(audio: &Tensor, visual: &Tensor) -> Result<RetrievalMetrics> {
    let a2v = retrieval_eval(audio, visual)?;
    let v2a = retrieval_eval(visual, audio)?;
    Ok(RetrievalMetrics { queries: audio.rows(), sum_r: a2v.sum_r + v2a.sum_r, audio_to_visual: a2v, visual_to_audio: v2a })
}

pub fn evaluate_retrieval(model: &Model, data: &Dataset, split: Split) -> Result<RetrievalMetrics> {
    let (a, v) = embed_corpus(model, data, split)?;
    retrieval_both(&a, &v)
}
