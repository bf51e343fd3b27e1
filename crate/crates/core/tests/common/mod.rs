//! Oracle suites shared by the per-module tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;

use deteclap::eval::{average_precision, mean_average_precision, positive_ranks, Recalls};
use deteclap::labels::{merge, soft_labels, threshold_labels, LabelKind, LabelVector, MergeOp, Modality, Provenance, ScoreVector, SoftKind};
use deteclap::nn::gradcheck::max_relative_error;
use deteclap::nn::{Bound, Graph, LayerNorm, Linear, NodeId, ParamStore, Stack, Tensor, TransformerBlock};
use deteclap::objectives::{contrastive_loss, label_bce, reconstruction_loss, total_loss, LossParts, ReconMode, ReconTarget, Variant};
use deteclap::tokenizer::{normalize_patches, patchify_map, random_mask};
use deteclap::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRAD_TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    Tensor::from_fn(&[rows, cols], |_| rng.gen_range(-scale..scale))
}

/// Scalar probe: `Σ out ⊙ w` for a fixed random `w`.
fn probe(g: &mut Graph, out: NodeId, w: &Tensor) -> Result<NodeId> {
    let w = g.constant(w.clone());
    let m = g.mul(out, w)?;
    Ok(g.sum_all(m))
}

type Case = Box<dyn Fn(&mut ChaCha8Rng) -> Result<f64>>;

/// Checks an op whose output shape is `out` on random inputs of `shapes`.
fn op_case<F>(shapes: Vec<(usize, usize)>, out: (usize, usize), f: F) -> Case
where
    F: Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + Clone + 'static,
{
    Box::new(move |r| {
        let inputs: Vec<Tensor> = shapes.iter().map(|&(a, b)| rand_tensor(r, a, b, 1.0)).collect();
        let w = rand_tensor(r, out.0, out.1, 1.0);
        let f = f.clone();
        max_relative_error(&inputs, move |g, ids| {
            let y = f(g, ids)?;
            probe(g, y, &w)
        })
    })
}

/// Checks a layer: inputs are `x` followed by every parameter of `store`.
fn layer_case<F>(x_shape: (usize, usize), out: (usize, usize), build: F) -> Case
where
    F: Fn(&mut ParamStore, &mut ChaCha8Rng) -> Box<dyn Fn(&mut Graph, &Bound, NodeId) -> Result<NodeId>> + 'static,
{
    Box::new(move |r| {
        let mut store = ParamStore::new();
        let fwd = build(&mut store, r);
        // Perturb away from the deterministic init so every term is exercised.
        let mut inputs = vec![rand_tensor(r, x_shape.0, x_shape.1, 1.0)];
        for t in store.tensors() {
            inputs.push(Tensor::from_fn(t.shape(), |i| t.data()[i] + r.gen_range(-0.3..0.3)));
        }
        let w = rand_tensor(r, out.0, out.1, 1.0);
        max_relative_error(&inputs, move |g, ids| {
            let b = Bound::from_nodes(ids[1..].to_vec());
            let y = fwd(g, &b, ids[0])?;
            probe(g, y, &w)
        })
    })
}

fn probs(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_fn(&[rows, cols], |_| r.gen_range(0.05..0.95))
}

fn cases() -> Vec<(&'static str, Case)> {
    let mut v: Vec<(&'static str, Case)> = vec![
        ("matmul", op_case(vec![(3, 4), (4, 2)], (3, 2), |g, i| g.matmul(i[0], i[1]))),
        ("transpose", op_case(vec![(3, 4)], (4, 3), |g, i| Ok(g.transpose(i[0])))),
        ("add", op_case(vec![(2, 3), (2, 3)], (2, 3), |g, i| g.add(i[0], i[1]))),
        ("sub", op_case(vec![(2, 3), (2, 3)], (2, 3), |g, i| g.sub(i[0], i[1]))),
        ("mul", op_case(vec![(2, 3), (2, 3)], (2, 3), |g, i| g.mul(i[0], i[1]))),
        ("add_row", op_case(vec![(3, 4), (1, 4)], (3, 4), |g, i| g.add_row(i[0], i[1]))),
        ("mul_row", op_case(vec![(3, 4), (1, 4)], (3, 4), |g, i| g.mul_row(i[0], i[1]))),
        ("scale", op_case(vec![(2, 3)], (2, 3), |g, i| Ok(g.scale(i[0], -1.7)))),
        ("gelu", op_case(vec![(3, 4)], (3, 4), |g, i| Ok(g.gelu(i[0])))),
        ("sigmoid", op_case(vec![(3, 4)], (3, 4), |g, i| Ok(g.sigmoid(i[0])))),
        ("softmax_rows", op_case(vec![(3, 5)], (3, 5), |g, i| Ok(g.softmax_rows(i[0])))),
        ("log_softmax_rows", op_case(vec![(3, 5)], (3, 5), |g, i| Ok(g.log_softmax_rows(i[0])))),
        ("layer_norm_rows", op_case(vec![(3, 6)], (3, 6), |g, i| Ok(g.layer_norm_rows(i[0])))),
        ("l2_normalize_rows", op_case(vec![(3, 4)], (3, 4), |g, i| Ok(g.l2_normalize_rows(i[0])))),
        ("slice_cols", op_case(vec![(3, 5)], (3, 2), |g, i| g.slice_cols(i[0], 2, 2))),
        ("concat_cols", op_case(vec![(3, 2), (3, 3)], (3, 5), |g, i| g.concat_cols(&[i[0], i[1]]))),
        ("slice_rows", op_case(vec![(5, 3)], (2, 3), |g, i| g.slice_rows(i[0], 1, 2))),
        ("concat_rows", op_case(vec![(2, 3), (1, 3)], (3, 3), |g, i| g.concat_rows(&[i[0], i[1]]))),
        ("gather_rows", op_case(vec![(4, 3)], (3, 3), |g, i| g.gather_rows(i[0], &[3, 0, 3]))),
        ("scatter_rows", op_case(vec![(2, 3), (1, 3)], (5, 3), |g, i| g.scatter_rows(i[0], i[1], &[1, 4], 5))),
        ("mean_rows", op_case(vec![(4, 3)], (1, 3), |g, i| Ok(g.mean_rows(i[0])))),
        ("sum_all", op_case(vec![(2, 3)], (1, 1), |g, i| Ok(g.sum_all(i[0])))),
        ("mean_all", op_case(vec![(2, 3)], (1, 1), |g, i| Ok(g.mean_all(i[0])))),
        ("pick_mean", op_case(vec![(3, 4)], (1, 1), |g, i| g.pick_mean(i[0], &[(0, 1), (2, 3), (2, 0)]))),
        ("sum_sq_diff", op_case(vec![(2, 3)], (1, 1), |g, i| g.sum_sq_diff(i[0], &[0.1, -0.2, 0.3, 0.0, 1.0, -1.0]))),
    ];
    v.push((
        "bce",
        Box::new(|r| {
            let p = probs(r, 2, 3);
            let y: Vec<f64> = (0..6).map(|_| r.gen_range(0.0..1.0)).collect();
            max_relative_error(&[p], move |g, i| g.bce(i[0], &y))
        }),
    ));
    v.push(("linear", layer_case((3, 4), (3, 5), |s, r| {
        let l = Linear::new(s, "lin", 4, 5, true, r);
        Box::new(move |g, b, x| l.forward(g, b, x))
    })));
    v.push(("layer_norm", layer_case((3, 6), (3, 6), |s, _| {
        let l = LayerNorm::new(s, "ln", 6);
        Box::new(move |g, b, x| l.forward(g, b, x))
    })));
    v.push(("transformer_block", layer_case((3, 8), (3, 8), |s, r| {
        let blk = TransformerBlock::new(s, "blk", 8, 2, r).expect("valid block");
        Box::new(move |g, b, x| blk.forward(g, b, x))
    })));
    v.push(("transformer_stack", layer_case((2, 4), (2, 4), |s, r| {
        let st = Stack::new(s, "stack", 2, 4, 2, r).expect("valid stack");
        Box::new(move |g, b, x| st.forward(g, b, x))
    })));
    v.extend(loss_cases());
    v
}

fn recon_case(mode: ReconMode) -> Case {
    Box::new(move |r| {
        let side = 2;
        let ga = patchify_map(&(0..32).map(|_| r.gen_range(-1.0..1.0)).collect::<Vec<_>>(), 4, 8, 1, side)?;
        let gv = patchify_map(&(0..48).map(|_| r.gen_range(0.0..1.0)).collect::<Vec<_>>(), 4, 4, 3, side)?;
        let sa = random_mask(&ga, 0.75, r.gen())?;
        let sv = random_mask(&gv, 0.5, r.gen())?;
        let (ta, tv) = (normalize_patches(&ga.patches), normalize_patches(&gv.patches));
        let inputs = [rand_tensor(r, 8, 4, 1.0), rand_tensor(r, 4, 12, 1.0)];
        max_relative_error(&inputs, move |g, i| {
            let t = ReconTarget { audio: &ta, visual: &tv, audio_set: &sa, visual_set: &sv };
            reconstruction_loss(g, i[0], i[1], &t, mode)
        })
    })
}

fn loss_cases() -> Vec<(&'static str, Case)> {
    vec![
        (
            "contrastive_loss",
            Box::new(|r| {
                let inputs = [rand_tensor(r, 4, 6, 1.0), rand_tensor(r, 4, 6, 1.0)];
                let tau = r.gen_range(0.1..1.0);
                max_relative_error(&inputs, move |g, i| contrastive_loss(g, i[0], i[1], tau))
            }),
        ),
        ("reconstruction_loss/masked_only", recon_case(ReconMode::MaskedOnly)),
        ("reconstruction_loss/all", recon_case(ReconMode::All)),
        (
            "label_bce/hard",
            Box::new(|r| {
                let y: Vec<f64> = (0..8).map(|_| if r.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
                max_relative_error(&[probs(r, 2, 4)], move |g, i| label_bce(g, i[0], &y))
            }),
        ),
        (
            "label_bce/soft",
            Box::new(|r| {
                let y: Vec<f64> = (0..8).map(|_| r.gen_range(0.0..1.0)).collect();
                max_relative_error(&[probs(r, 2, 4)], move |g, i| label_bce(g, i[0], &y))
            }),
        ),
        (
            "total_loss",
            Box::new(|r| {
                let ya: Vec<f64> = (0..6).map(|_| r.gen_range(0.0..1.0)).collect();
                let yv: Vec<f64> = (0..6).map(|_| r.gen_range(0.0..1.0)).collect();
                let inputs = [rand_tensor(r, 3, 4, 1.0), rand_tensor(r, 3, 4, 1.0), Tensor::scalar(r.gen_range(0.5..1.5)), probs(r, 3, 2), probs(r, 3, 2)];
                max_relative_error(&inputs, move |g, i| {
                    let contrastive = contrastive_loss(g, i[0], i[1], 0.2)?;
                    let parts = LossParts { contrastive, reconstruction: i[2], audio_label: Some(label_bce(g, i[3], &ya)?), visual_label: Some(label_bce(g, i[4], &yv)?) };
                    Ok(total_loss(g, parts, Variant::Or)?.0)
                })
            }),
        ),
    ]
}

/// Worst relative error per op/layer/loss over `instances` seeded draws.
pub fn gradient_suite(instances: u64) -> Vec<(&'static str, f64)> {
    cases()
        .into_iter()
        .enumerate()
        .map(|(k, (name, case))| {
            let worst = (0..instances)
                .map(|s| {
                    let mut r = rng(1000 * k as u64 + s);
                    case(&mut r).unwrap_or_else(|e| panic!("{name}: {e}"))
                })
                .fold(0.0, f64::max);
            (name, worst)
        })
        .collect()
}

fn score(r: &mut ChaCha8Rng, modality: Modality, c: usize) -> ScoreVector {
    let lo = if modality == Modality::Audio { -1.0 } else { 0.0 };
    // Snap some values onto a coarse grid so ties with thresholds occur.
    let scores = (0..c).map(|_| if r.gen_bool(0.2) { (r.gen_range(0..=10) as f64) / 10.0 } else { r.gen_range(lo..=1.0) }).collect();
    ScoreVector { clip: "clip".into(), modality, scores }
}

fn le(a: &LabelVector, b: &LabelVector) -> bool {
    a.values.iter().zip(&b.values).all(|(x, y)| x <= y)
}

/// Failing property names over `n` random score pairs (empty on success).
pub fn label_oracle_suite(n: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut failures = BTreeMap::new();
    let mut fail = |name: &str, i: usize| {
        failures.entry(name.to_string()).or_insert(i);
    };
    for i in 0..n {
        let c = r.gen_range(1..=12);
        let a = score(&mut r, Modality::Audio, c);
        let v = score(&mut r, Modality::Visual, c);
        let (t1, t2) = {
            let x: f64 = r.gen_range(0.0..=1.0);
            let y: f64 = r.gen_range(0.0..=1.0);
            (x.min(y), x.max(y))
        };
        let (Ok(hi), Ok(lo)) = (threshold_labels(&v, t2), threshold_labels(&v, t1)) else {
            fail("threshold errors", i);
            continue;
        };
        if !le(&hi, &lo) {
            fail("threshold monotonicity", i);
        }
        let ha = threshold_labels(&a, t1).expect("valid threshold");
        let hv = lo;
        let and = merge(&ha, &hv, MergeOp::And).expect("same clip");
        let or = merge(&ha, &hv, MergeOp::Or).expect("same clip");
        if !(le(&and, &ha) && le(&and, &hv) && le(&ha, &or) && le(&hv, &or)) {
            fail("AND ⊆ inputs ⊆ OR", i);
        }
        let smax = soft_labels(&a, &v, SoftKind::Max).expect("paired");
        let sa = soft_labels(&a, &v, SoftKind::Audio).expect("paired");
        let sv = soft_labels(&a, &v, SoftKind::Visual).expect("paired");
        if !(le(&sa, &smax) && le(&sv, &smax)) {
            fail("soft-max dominance", i);
        }
        // hard(soft-max, θ) against OR of per-modality hard labels at the same θ.
        let as_scores = ScoreVector { clip: smax.clip.clone(), modality: Modality::Visual, scores: smax.values.clone() };
        let hard_max = threshold_labels(&as_scores, t1).expect("valid threshold");
        let or_same = merge(&threshold_labels(&a, t1).unwrap(), &threshold_labels(&v, t1).unwrap(), MergeOp::Or).unwrap();
        if hard_max.values != or_same.values {
            fail("hard(soft-max) == OR(hard_a, hard_v)", i);
        }
        let expected = LabelVector { clip: "clip".into(), kind: LabelKind::Hard, provenance: Provenance::Or, values: or_same.values.clone() };
        if or_same != expected {
            fail("OR provenance", i);
        }
    }
    failures.into_iter().map(|(k, i)| format!("{k} (first failure at instance {i})")).collect()
}

/// Brute force: sort every gallery item by (similarity desc, index asc) and
/// find the positive.
pub fn brute_recall(sims: &[Vec<f64>], k: usize) -> f64 {
    let hits = sims
        .iter()
        .enumerate()
        .filter(|(i, row)| {
            let mut order: Vec<usize> = (0..row.len()).collect();
            order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
            order.iter().take(k).any(|j| j == i)
        })
        .count();
    hits as f64 / sims.len() as f64
}

/// Brute force AP: precision at every relevant position of the full ranking.
pub fn brute_ap(scores: &[f64], rel: &[bool]) -> Option<f64> {
    let mut items: Vec<(f64, usize)> = scores.iter().copied().zip(0..).collect();
    items.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
    let total = rel.iter().filter(|&&b| b).count();
    if total == 0 {
        return None;
    }
    let mut sum = 0.0;
    for (pos, &(_, i)) in items.iter().enumerate() {
        if rel[i] {
            let above = items[..=pos].iter().filter(|&&(_, j)| rel[j]).count();
            sum += above as f64 / (pos + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

/// Mismatch descriptions over `n` random recall and mAP instances.
pub fn metric_oracle_suite(n: usize, seed: u64) -> Vec<String> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for inst in 0..n {
        let q = r.gen_range(1..=64);
        // Coarse values force ties.
        let sims: Vec<Vec<f64>> = (0..q).map(|_| (0..q).map(|_| (r.gen_range(-4..=4) as f64) / 4.0).collect()).collect();
        let rec = Recalls::from_ranks(&positive_ranks(&sims).unwrap());
        for (k, got) in [(1, rec.r1), (5, rec.r5), (10, rec.r10)] {
            if got != brute_recall(&sims, k) {
                out.push(format!("instance {inst}: recall@{k} {got} vs oracle {}", brute_recall(&sims, k)));
            }
        }
        if (rec.sum_r - (rec.r1 + rec.r5 + rec.r10)).abs() > 1e-12 || !(rec.r1 <= rec.r5 && rec.r5 <= rec.r10) {
            out.push(format!("instance {inst}: sumR identity or monotonicity"));
        }

        let rows = r.gen_range(1..=32);
        let cols = r.gen_range(1..=16);
        let scores: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| (r.gen_range(0..=20) as f64) / 20.0).collect()).collect();
        let rel: Vec<Vec<bool>> = (0..rows).map(|_| (0..cols).map(|_| r.gen_bool(0.3)).collect()).collect();
        let aps: Vec<f64> = (0..cols)
            .filter_map(|c| brute_ap(&scores.iter().map(|s| s[c]).collect::<Vec<_>>(), &rel.iter().map(|s| s[c]).collect::<Vec<_>>()))
            .collect();
        for c in 0..cols {
            let s: Vec<f64> = scores.iter().map(|x| x[c]).collect();
            let y: Vec<bool> = rel.iter().map(|x| x[c]).collect();
            let (a, b) = (average_precision(&s, &y), brute_ap(&s, &y));
            if a.zip(b).map_or(a.is_some() != b.is_some(), |(a, b)| (a - b).abs() > 1e-12) {
                out.push(format!("instance {inst}: AP class {c} {a:?} vs oracle {b:?}"));
            }
        }
        match mean_average_precision(&scores, &rel) {
            Ok(m) if !aps.is_empty() => {
                let oracle = aps.iter().sum::<f64>() / aps.len() as f64;
                if (m - oracle).abs() > 1e-12 {
                    out.push(format!("instance {inst}: mAP {m} vs oracle {oracle}"));
                }
            }
            Err(_) if aps.is_empty() => {}
            other => out.push(format!("instance {inst}: mAP {other:?} with {} scorable classes", aps.len())),
        }
    }
    out
}

/// A synthesized corpus loaded for the desk model, with its score pairs.
pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub data: deteclap::eval::Dataset,
    pub pairs: BTreeMap<String, (ScoreVector, ScoreVector)>,
    pub cfg: deteclap::model::ModelConfig,
}

pub fn corpus(synth: &deteclap::eval::SynthConfig, seed: u64) -> Corpus {
    use deteclap::eval::{synth_corpus, CorpusManifest, Dataset};
    let dir = tempfile::tempdir().unwrap();
    let out = synth_corpus(synth, seed, dir.path()).unwrap();
    let manifest = CorpusManifest::load(&out.manifest).unwrap();
    let mut cfg = deteclap::model::ModelConfig::desk();
    cfg.num_labels = out.vocabulary.len();
    let data = Dataset::load(&manifest, &cfg).unwrap();
    let scores = deteclap::labels::read_scores(&out.scores).unwrap();
    let pairs = deteclap::labels::pair_scores(&scores.vectors).unwrap();
    Corpus { dir, data, pairs, cfg }
}

/// Mean reconstruction loss over every train clip under a few fixed masks.
pub fn fixed_mask_recon(model: &deteclap::model::Model, data: &deteclap::eval::Dataset) -> f64 {
    let members = data.indices(deteclap::eval::Split::Train);
    let empty = BTreeMap::new();
    (0..4u64)
        .map(|k| {
            let seeds: Vec<(u64, u64)> = (0..members.len() as u64).map(|i| (1000 + 10 * k + 2 * i, 1001 + 10 * k + 2 * i)).collect();
            deteclap::eval::evaluate_batch(model, data, &members, &seeds, Variant::Base, &empty, ReconMode::MaskedOnly).unwrap().l_r
        })
        .sum::<f64>()
        / 4.0
}

/// Patch counts, kept counts and decoder output shapes for the full-size
/// geometry (at reduced width) and the desk profile. Returns failures.
pub fn shape_suite() -> Vec<String> {
    use deteclap::model::{Model, ModelConfig};
    use deteclap::tokenizer::kept_count;
    let mut fails = Vec::new();
    let mut check = |what: String, ok: bool| {
        if !ok {
            fails.push(what);
        }
    };
    let paper = ModelConfig { embed_dim: 16, heads: 2, encoder_layers: 1, cross_layers: 1, decoder_layers: 1, decoder_dim: 16, decoder_heads: 2, ..ModelConfig::paper() };
    for (cfg, counts) in [(paper, (512, 196, 128, 49)), (ModelConfig::desk(), (64, 16, 16, 4))] {
        let name = format!("{:?}", cfg.profile);
        let (na, nv) = (cfg.audio_patches(), cfg.visual_patches());
        check(format!("{name} patch counts {na}/{nv}"), (na, nv) == (counts.0, counts.1));
        let (ka, kv) = (kept_count(na, cfg.mask_ratio), kept_count(nv, cfg.mask_ratio));
        check(format!("{name} kept counts {ka}/{kv}"), (ka, kv) == (counts.2, counts.3));
        let audio = patchify_map(&vec![0.1; cfg.audio_frames * cfg.mel_bins], cfg.audio_frames, cfg.mel_bins, 1, cfg.patch_side).unwrap();
        let visual = patchify_map(&vec![0.2; cfg.frame_size * cfg.frame_size * 3], cfg.frame_size, cfg.frame_size, 3, cfg.patch_side).unwrap();
        let (sa, sv) = (random_mask(&audio, cfg.mask_ratio, 0).unwrap(), random_mask(&visual, cfg.mask_ratio, 1).unwrap());
        check(format!("{name} patch sets {}/{}", sa.kept(), sv.kept()), (sa.kept(), sv.kept()) == (ka, kv));
        let out = Model::new(cfg.clone(), 0).unwrap().forward_values(&sa, &sv).unwrap();
        let d = cfg.embed_dim;
        let expect: [(&str, &[usize], Vec<usize>); 6] = [
            ("audio_ctx", out.audio_ctx.shape(), vec![ka, d]),
            ("visual_ctx", out.visual_ctx.shape(), vec![kv, d]),
            ("audio_pooled", out.audio_pooled.shape(), vec![1, d]),
            ("audio_recon", out.audio_recon.shape(), vec![na, 256]),
            ("visual_recon", out.visual_recon.shape(), vec![nv, 768]),
            ("audio_probs", out.audio_probs.shape(), vec![1, cfg.num_labels]),
        ];
        for (what, got, want) in expect {
            check(format!("{name} {what} {got:?} != {want:?}"), got == want.as_slice());
        }
    }
    fails
}
