//! Linear-probe and full fine-tuning classification with accuracy and mAP.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{shuffled, ClipData, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::nn::{AdamConfig, AdamState, Bound, Graph, Linear, NodeId, ParamStore, Tensor};
use crate::tokenizer::PatchSet;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// One class per clip, cross-entropy, reported as accuracy.
    #[default]
    Single,
    /// Multi-hot targets, BCE, reported as mAP.
    Multi,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Single => "single",
            Task::Multi => "multi",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Task::Single),
            "multi" => Ok(Task::Multi),
            other => Err(Error::Config(format!("unknown task {other:?} (expected single|multi)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub task: Task,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Update the whole network; otherwise only the head trains.
    pub full: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig { task: Task::Single, epochs: 10, lr: 1e-5, batch_size: 8, full: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResult {
    pub task: Task,
    pub classes: usize,
    pub train_clips: usize,
    pub eval_clips: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub map: Option<f64>,
}

/// Fraction of rows whose arg-max (lowest index on ties) equals the label.
pub fn accuracy(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::contract(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    let hits = scores
        .iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            best == y
        })
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Average precision of one ranked list; ties keep input order. `None` when
/// nothing is relevant.
pub fn average_precision(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let (mut hits, mut sum) = (0usize, 0.0);
    for (rank, &i) in order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Mean over classes (columns) that have at least one relevant item.
pub fn mean_average_precision(scores: &[Vec<f64>], relevant: &[Vec<bool>]) -> Result<f64> {
    if scores.len() != relevant.len() || scores.is_empty() {
        return Err(Error::contract(format!("{} score rows for {} label rows", scores.len(), relevant.len())));
    }
    let k = scores[0].len();
    if scores.iter().any(|r| r.len() != k) || relevant.iter().any(|r| r.len() != k) {
        return Err(Error::contract("ragged score or label matrix"));
    }
    let aps: Vec<f64> = (0..k)
        .filter_map(|c| {
            let s: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let y: Vec<bool> = relevant.iter().map(|r| r[c]).collect();
            average_precision(&s, &y)
        })
        .collect();
    if aps.is_empty() {
        return Err(Error::contract("no class has a relevant item"));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

enum Gold {
    Single(Vec<usize>),
    Multi(Vec<Vec<f64>>),
}

fn gold(clips: &[&ClipData], task: Task, classes: usize) -> Result<Gold> {
    match task {
        Task::Single => clips
            .iter()
            .map(|c| match c.class {
                Some(y) if y < classes => Ok(y),
                Some(y) => Err(Error::contract(format!("clip {}: class {y} outside 0..{classes}", c.clip))),
                None => Err(Error::contract(format!("clip {} has no gold class for single-label classification", c.clip))),
            })
            .collect::<Result<_>>()
            .map(Gold::Single),
        Task::Multi => clips
            .iter()
            .map(|c| {
                let ys = c.multi_label.as_ref().ok_or_else(|| Error::contract(format!("clip {} has no gold multi-label", c.clip)))?;
                let mut v = vec![0.0; classes];
                for &y in ys {
                    *v.get_mut(y).ok_or_else(|| Error::contract(format!("clip {}: label {y} outside 0..{classes}", c.clip)))? = 1.0;
                }
                Ok(v)
            })
            .collect::<Result<_>>()
            .map(Gold::Multi),
    }
}

/// Number of classes implied by the dataset's gold labels.
pub fn class_count(data: &Dataset, task: Task) -> usize {
    data.clips
        .iter()
        .filter_map(|c| match task {
            Task::Single => c.class,
            Task::Multi => c.multi_label.as_ref().and_then(|v| v.iter().max().copied()),
        })
        .max()
        .map_or(0, |m| m + 1)
}

fn joint_embedding(model: &Model, g: &mut Graph, b: &Bound, clip: &ClipData) -> Result<NodeId> {
    let (a, v) = model.encode(g, b, &PatchSet::unmasked(&clip.audio), &PatchSet::unmasked(&clip.visual))?;
    let a = model.pool(g, b, a, model.layout.audio_type)?;
    let v = model.pool(g, b, v, model.layout.visual_type)?;
    g.concat_cols(&[a, v])
}

fn head_loss(g: &mut Graph, logits: NodeId, gold: &Gold, rows: &[usize]) -> Result<NodeId> {
    match gold {
        Gold::Single(ys) => {
            let lp = g.log_softmax_rows(logits);
            let picks: Vec<(usize, usize)> = rows.iter().enumerate().map(|(r, &i)| (r, ys[i])).collect();
            let m = g.pick_mean(lp, &picks)?;
            Ok(g.scale(m, -1.0))
        }
        Gold::Multi(ys) => {
            let p = g.sigmoid(logits);
            let t: Vec<f64> = rows.iter().flat_map(|&i| ys[i].iter().copied()).collect();
            g.bce(p, &t)
        }
    }
}

/// Attaches a linear head on `concat(ā, v̄)`, fine-tunes on `train_split`
/// and scores `eval_split`. Also returns the fine-tuned network.
pub fn classify_finetune(model: &Model, data: &Dataset, cfg: &FinetuneConfig, seed: u64, train_split: Split, eval_split: Split) -> Result<(ClassifyResult, Model)> {
    data.check_geometry(&model.config)?;
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) {
        return Err(Error::Config("fine-tuning needs a positive batch size and learning rate".into()));
    }
    let classes = class_count(data, cfg.task);
    if classes == 0 {
        return Err(Error::contract(format!("no gold labels for {} classification", cfg.task)));
    }
    let train: Vec<&ClipData> = data.indices(train_split).into_iter().map(|i| &data.clips[i]).collect();
    let eval: Vec<&ClipData> = data.indices(eval_split).into_iter().map(|i| &data.clips[i]).collect();
    if train.is_empty() || eval.is_empty() {
        return Err(Error::contract(format!("fine-tuning needs clips in both {train_split} and {eval_split}")));
    }
    let train_gold = gold(&train, cfg.task, classes)?;
    let eval_gold = gold(&eval, cfg.task, classes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = model.clone();
    let mut head_store = ParamStore::new();
    let head = Linear::new(&mut head_store, "cls_head", 2 * model.config.embed_dim, classes, true, &mut rng);
    let adam_cfg = AdamConfig { lr: cfg.lr, ..AdamConfig::default() };
    let mut head_adam = AdamState::new(adam_cfg, head_store.tensors());
    let mut net_adam = AdamState::new(adam_cfg, net.params.tensors());

    // Head-only training reuses frozen embeddings.
    let frozen: Option<Vec<Tensor>> = if cfg.full {
        None
    } else {
        let mut rows = Vec::with_capacity(train.len());
        for c in &train {
            let (a, v) = net.embed(&PatchSet::unmasked(&c.audio), &PatchSet::unmasked(&c.visual))?;
            rows.push(Tensor::row_vector([a, v].concat())?);
        }
        Some(rows)
    };

    let order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        let perm = shuffled(&order, &mut rng);
        for rows in perm.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let nb = net.params.bind(&mut g);
            let hb = head_store.bind(&mut g);
            let feats = rows
                .iter()
                .map(|&i| match &frozen {
                    Some(f) => Ok(g.constant(f[i].clone())),
                    None => joint_embedding(&net, &mut g, &nb, train[i]),
                })
                .collect::<Result<Vec<_>>>()?;
            let x = g.concat_rows(&feats)?;
            let logits = head.forward(&mut g, &hb, x)?;
            let loss = head_loss(&mut g, logits, &train_gold, rows)?;
            g.backward(loss)?;
            let head_grads = hb.grads(&g, &head_store);
            head_adam.step(head_store.tensors_mut(), &head_grads)?;
            if cfg.full {
                let net_grads = nb.grads(&g, &net.params);
                net_adam.step(net.params.tensors_mut(), &net_grads)?;
            }
        }
    }

    let mut scores = Vec::with_capacity(eval.len());
    for c in &eval {
        let mut g = Graph::new();
        let nb = net.params.bind(&mut g);
        let hb = head_store.bind(&mut g);
        let x = joint_embedding(&net, &mut g, &nb, c)?;
        let logits = head.forward(&mut g, &hb, x)?;
        scores.push(g.value(logits).data().to_vec());
    }
    let (accuracy, map) = match &eval_gold {
        Gold::Single(ys) => (Some(accuracy(&scores, ys)?), None),
        Gold::Multi(ys) => {
            let rel: Vec<Vec<bool>> = ys.iter().map(|r| r.iter().map(|&v| v > 0.5).collect()).collect();
            (None, Some(mean_average_precision(&scores, &rel)?))
        }
    };
    Ok((ClassifyResult { task: cfg.task, classes, train_clips: train.len(), eval_clips: eval.len(), accuracy, map }, net))
}
