//! Synthetic corpus → labels → pre-training → evaluation → report.
//!
//! Writes `corpus/`, `checkpoints/`, `trace.jsonl` and `metrics.json` under
//! the run directory.

use std::fs;
use std::path::{Path, PathBuf};

use super::classify::classify_finetune;
use super::corpus::{synth_corpus, CorpusManifest, Dataset, Split};
use super::report::MetricsReport;
use super::retrieval::evaluate_retrieval;
use super::train::{train, write_trace, CheckpointSink};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::labels::{pair_scores, read_scores};

pub struct PipelineOutput {
    pub report: MetricsReport,
    pub report_path: PathBuf,
}

/// Runs every stage under `dir` and writes `dir/metrics.json`.
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<PipelineOutput> {
    cfg.validate()?;
    let corpus_dir = dir.join("corpus");
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;

    let synth = synth_corpus(&cfg.synth, cfg.seed, &corpus_dir)?;
    let manifest = CorpusManifest::load(&synth.manifest)?;
    let scores = read_scores(&synth.scores)?;
    let pairs = pair_scores(&scores.vectors)?;
    let targets = cfg.labels.build(&pairs)?;

    let model_cfg = cfg.model_config(Some(scores.vocabulary.len()))?;
    let data = Dataset::load(&manifest, &model_cfg)?;
    let sink = CheckpointSink { dir: Some(ckpt_dir), extra: cfg.echo() };
    let run = train(&model_cfg, cfg.seed, &data, cfg.labels.variant, &targets, &cfg.train, &sink)?;

    let eval_split = if data.indices(cfg.eval.split).is_empty() { Split::Train } else { cfg.eval.split };
    let mut report = MetricsReport::new(cfg.seed, cfg.method(), cfg.echo());
    report.eval_split = Some(eval_split);
    let mut retrieval_model = run.model.clone();
    if cfg.eval.classify || cfg.eval.finetune_first {
        let (result, tuned) = classify_finetune(&run.model, &data, &cfg.finetune, cfg.seed, Split::Train, eval_split)?;
        report.classification = Some(result);
        if cfg.eval.finetune_first {
            retrieval_model = tuned;
        }
    }
    report.retrieval = Some(evaluate_retrieval(&retrieval_model, &data, eval_split)?);
    write_trace(&dir.join("trace.jsonl"), &run.trace)?;
    report.loss_trace = run.trace;
    let report_path = dir.join("metrics.json");
    report.save(&report_path)?;
    Ok(PipelineOutput { report, report_path })
}
