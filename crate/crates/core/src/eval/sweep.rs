//! Label-threshold sweeps: rebuild labels, retrain, evaluate retrieval.

use std::collections::BTreeMap;
use std::thread;

use serde::{Deserialize, Serialize};

use super::corpus::{Dataset, Split};
use super::retrieval::{evaluate_retrieval, RetrievalMetrics};
use super::train::{train, CheckpointSink, TrainConfig};
use crate::error::{Error, Result};
use crate::labels::{LabelPlan, Modality, ScoreVector};
use crate::model::ModelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub theta: f64,
    pub theta_audio: f64,
    pub theta_visual: f64,
    pub retrieval: RetrievalMetrics,
    pub sum_r: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    /// Which threshold varies.
    pub varied: Modality,
    pub fixed_other: f64,
    pub rows: Vec<SweepRow>,
}

/// Everything a sweep point needs besides its thresholds.
pub struct SweepSetup<'a> {
    pub data: &'a Dataset,
    pub pairs: &'a BTreeMap<String, (ScoreVector, ScoreVector)>,
    pub plan: LabelPlan,
    pub model: &'a ModelConfig,
    pub train: &'a TrainConfig,
    pub seed: u64,
    pub eval_split: Split,
}

/// One train + retrieval run with the given thresholds.
pub fn sweep_point(setup: &SweepSetup<'_>, theta_audio: f64, theta_visual: f64) -> Result<RetrievalMetrics> {
    let plan = LabelPlan { theta_audio, theta_visual, ..setup.plan };
    let targets = plan.build(setup.pairs)?;
    let run = train(setup.model, setup.seed, setup.data, plan.variant, &targets, setup.train, &CheckpointSink::default())?;
    evaluate_retrieval(&run.model, setup.data, setup.eval_split)
}

/// Varies one threshold over `grid` with the other held at `fixed_other`.
/// Every point trains from the same seed; up to `jobs` points run at once.
pub fn threshold_sweep(setup: &SweepSetup<'_>, varied: Modality, grid: &[f64], fixed_other: f64, jobs: usize) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::input("threshold grid is empty"));
    }
    if let Some(t) = grid.iter().chain([&fixed_other]).find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::input(format!("threshold {t} outside [0, 1]")));
    }
    let thetas = |t: f64| match varied {
        Modality::Audio => (t, fixed_other),
        Modality::Visual => (fixed_other, t),
    };
    let jobs = jobs.max(1);
    let mut results: Vec<Option<Result<RetrievalMetrics>>> = (0..grid.len()).map(|_| None).collect();
    for (chunk_i, chunk) in grid.chunks(jobs).enumerate() {
        let out: Vec<Result<RetrievalMetrics>> = thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&t| {
                    let (ta, tv) = thetas(t);
                    s.spawn(move || sweep_point(setup, ta, tv))
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::contract("sweep worker panicked")))).collect()
        });
        for (k, r) in out.into_iter().enumerate() {
            results[chunk_i * jobs + k] = Some(r);
        }
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (&t, r) in grid.iter().zip(results) {
        let retrieval = r.expect("every point ran")?;
        let (theta_audio, theta_visual) = thetas(t);
        rows.push(SweepRow { theta: t, theta_audio, theta_visual, sum_r: retrieval.sum_r, retrieval });
    }
    Ok(SweepTable { varied, fixed_other, rows })
}
