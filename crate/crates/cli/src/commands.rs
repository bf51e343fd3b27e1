use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use deteclap::config::RunConfig;
use deteclap::eval::{
    classify_finetune, evaluate_retrieval, render_table, run_pipeline, synth_corpus, threshold_sweep, train, CheckpointSink, CorpusManifest, Dataset,
    MetricsReport, Split, SweepSetup, write_trace,
};
use deteclap::labels::{derive_labels, label_histogram, pair_scores, read_scores, write_labels, HeadTargets, LabelFile, ScoreFile};
use deteclap::model::{checkpoint, Model};
use deteclap::Error;

use crate::{Cli, Command, Common, DataArgs, EvalArgs, EvalCommand};

pub const SEED_ENV: &str = "DETECLAP_SEED";

/// Usage problems exit with 2, everything else with 1.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Input(_) | Error::Parse { .. } | Error::Io { .. }) => 2,
        _ => 1,
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

/// Config file, then `DETECLAP_SEED`, then flags.
fn effective_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Ok(s) = std::env::var(SEED_ENV) {
        cfg.seed = s.trim().parse().map_err(|_| usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
    }
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(p) = c.profile {
        cfg.profile = p;
    }
    if let Some(v) = c.variant {
        cfg.labels.variant = v;
    }
    if let Some(t) = c.theta_audio {
        cfg.labels.theta_audio = t;
    }
    if let Some(t) = c.theta_visual {
        cfg.labels.theta_visual = t;
    }
    if let Some(k) = c.label_kind {
        cfg.labels.kind = k;
    }
    if let Some(r) = c.mask_ratio {
        cfg.model.mask_ratio = Some(r);
    }
    if let Some(j) = c.jobs {
        cfg.sweep.jobs = j;
    }
    if let Some(o) = &c.out {
        cfg.paths.out = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.paths.out.clone().ok_or_else(|| usage("no output directory (use --out or paths.out)"))?;
    fs::create_dir_all(&dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    Ok(dir)
}

fn required(flag: Option<PathBuf>, fallback: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    flag.or_else(|| fallback.clone()).ok_or_else(|| usage(format!("missing --{name} (or paths.{name} in the config)")))
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::Io { path, source: e })?;
    Ok(())
}

fn save_report(report: &MetricsReport, dir: &Path) -> Result<()> {
    let path = dir.join("metrics.json");
    report.save(&path)?;
    print!("{}", render_table(std::slice::from_ref(report)));
    println!("wrote {}", path.display());
    Ok(())
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let mut cfg = effective_config(&cli.common)?;
    match cli.command {
        Command::Synth { clips, classes, test_fraction } => {
            cfg.synth.clips = clips.unwrap_or(cfg.synth.clips);
            cfg.synth.classes = classes.unwrap_or(cfg.synth.classes);
            cfg.synth.test_fraction = test_fraction.unwrap_or(cfg.synth.test_fraction);
            let dir = out_dir(&cfg)?;
            let out = synth_corpus(&cfg.synth, cfg.seed, &dir)?;
            write_config(&cfg, &dir)?;
            println!("{} clips, {} labels: {} {}", cfg.synth.clips, out.vocabulary.len(), out.manifest.display(), out.scores.display());
        }
        Command::Labels { op, scores } => {
            let scores = required(scores, &cfg.paths.scores, "scores")?;
            cfg.paths.scores = Some(scores.clone());
            cfg.labels.validate()?;
            let file = read_scores(&scores)?;
            let pairs = pair_scores(&file.vectors)?;
            let labels = derive_labels(&pairs, op, cfg.labels.theta_audio, cfg.labels.theta_visual)?;
            let dir = out_dir(&cfg)?;
            let out = LabelFile { vocabulary: file.vocabulary, labels };
            let path = dir.join("labels.jsonl");
            write_labels(&path, &out)?;
            write_config(&cfg, &dir)?;
            for (name, n) in label_histogram(&out) {
                println!("{name}\t{n}");
            }
            println!("wrote {} ({} clips, op {})", path.display(), out.labels.len(), op.as_str());
        }
        Command::Train { data, steps, lr, batch_size } => {
            cfg.train.steps = steps.unwrap_or(cfg.train.steps);
            cfg.train.lr = lr.unwrap_or(cfg.train.lr);
            cfg.train.batch_size = batch_size.unwrap_or(cfg.train.batch_size);
            cfg.validate()?;
            let loaded = load_training_data(&mut cfg, data)?;
            let dir = out_dir(&cfg)?;
            let sink = CheckpointSink { dir: Some(dir.join("checkpoints")), extra: cfg.echo() };
            fs::create_dir_all(dir.join("checkpoints")).context("creating checkpoint directory")?;
            let model_cfg = cfg.model_config(loaded.labels)?;
            let run = train(&model_cfg, cfg.seed, &loaded.data, cfg.labels.variant, &loaded.targets, &cfg.train, &sink)?;
            let ckpt = dir.join("model.ckpt");
            checkpoint::save(&ckpt, &run.model, cfg.seed, cfg.train.steps, cfg.echo())?;
            let mut report = MetricsReport::new(cfg.seed, cfg.method(), cfg.echo());
            write_trace(&dir.join("trace.jsonl"), &run.trace)?;
            report.loss_trace = run.trace;
            if let Some(last) = report.loss_trace.last() {
                let l = last.loss;
                println!("step {}: L_c {:.4} L_r {:.4} L_a2l {:.4} L_v2l {:.4} total {:.4}", last.step, l.l_c, l.l_r, l.l_a2l, l.l_v2l, l.l_deteclap);
            }
            report.save(&dir.join("metrics.json"))?;
            println!("wrote {}", ckpt.display());
        }
        Command::Eval(EvalCommand::Retrieval { eval }) => {
            let (model, data, split) = load_eval(&mut cfg, &cli.common, eval)?;
            let dir = out_dir(&cfg)?;
            let mut report = MetricsReport::new(cfg.seed, cfg.method(), cfg.echo());
            report.eval_split = Some(split);
            report.retrieval = Some(evaluate_retrieval(&model, &data, split)?);
            save_report(&report, &dir)?;
        }
        Command::Eval(EvalCommand::Classify { eval, task, epochs, head_only }) => {
            cfg.finetune.task = task.unwrap_or(cfg.finetune.task);
            cfg.finetune.epochs = epochs.unwrap_or(cfg.finetune.epochs);
            cfg.finetune.full &= !head_only;
            let (model, data, split) = load_eval(&mut cfg, &cli.common, eval)?;
            let dir = out_dir(&cfg)?;
            let (result, _) = classify_finetune(&model, &data, &cfg.finetune, cfg.seed, Split::Train, split)?;
            let mut report = MetricsReport::new(cfg.seed, cfg.method(), cfg.echo());
            report.eval_split = Some(split);
            report.classification = Some(result);
            save_report(&report, &dir)?;
        }
        Command::Sweep { data, vary, grid, fixed_other, steps, split } => {
            cfg.sweep.vary = vary.unwrap_or(cfg.sweep.vary);
            cfg.sweep.grid = grid.unwrap_or(cfg.sweep.grid);
            cfg.sweep.fixed_other = fixed_other.unwrap_or(cfg.sweep.fixed_other);
            cfg.train.steps = steps.unwrap_or(cfg.train.steps);
            cfg.eval.split = split.unwrap_or(cfg.eval.split);
            cfg.validate()?;
            if !cfg.labels.variant.uses_labels() {
                return Err(usage(format!("sweeping thresholds needs a label-using variant, got {}", cfg.labels.variant)));
            }
            let loaded = load_training_data(&mut cfg, data)?;
            let dir = out_dir(&cfg)?;
            let model_cfg = cfg.model_config(loaded.labels)?;
            let setup = SweepSetup {
                data: &loaded.data,
                pairs: &loaded.pairs,
                plan: cfg.labels,
                model: &model_cfg,
                train: &cfg.train,
                seed: cfg.seed,
                eval_split: cfg.eval.split,
            };
            let table = threshold_sweep(&setup, cfg.sweep.vary, &cfg.sweep.grid, cfg.sweep.fixed_other, cfg.sweep.jobs.max(1))?;
            let mut report = MetricsReport::new(cfg.seed, cfg.method(), cfg.echo());
            report.eval_split = Some(cfg.eval.split);
            report.sweep = Some(table);
            save_report(&report, &dir)?;
        }
        Command::Pipeline { steps } => {
            cfg.train.steps = steps.unwrap_or(cfg.train.steps);
            let dir = out_dir(&cfg)?;
            let out = run_pipeline(&cfg, &dir)?;
            print!("{}", render_table(std::slice::from_ref(&out.report)));
            println!("wrote {}", out.report_path.display());
        }
        Command::Report { reports } => {
            let loaded = reports.iter().map(|p| MetricsReport::load(p)).collect::<deteclap::Result<Vec<_>>>()?;
            print!("{}", render_table(&loaded));
        }
    }
    Ok(())
}

struct TrainingData {
    data: Dataset,
    pairs: BTreeMap<String, (deteclap::labels::ScoreVector, deteclap::labels::ScoreVector)>,
    targets: BTreeMap<String, HeadTargets>,
    /// Vocabulary size when scores were read.
    labels: Option<usize>,
}

fn load_training_data(cfg: &mut RunConfig, args: DataArgs) -> Result<TrainingData> {
    let manifest_path = required(args.manifest, &cfg.paths.manifest, "manifest")?;
    cfg.paths.manifest = Some(manifest_path.clone());
    let scores = match args.scores.or_else(|| cfg.paths.scores.clone()) {
        Some(p) => {
            cfg.paths.scores = Some(p.clone());
            read_scores(&p)?
        }
        None if cfg.labels.variant.uses_labels() => return Err(usage(format!("variant {} needs --scores", cfg.labels.variant))),
        None => ScoreFile::default(),
    };
    let labels = (!scores.vocabulary.is_empty()).then(|| scores.vocabulary.len());
    let pairs = if scores.vectors.is_empty() { BTreeMap::new() } else { pair_scores(&scores.vectors)? };
    let targets = cfg.labels.build(&pairs)?;
    let manifest = CorpusManifest::load(&manifest_path)?;
    let data = Dataset::load(&manifest, &cfg.model_config(labels)?)?;
    Ok(TrainingData { data, pairs, targets, labels })
}

fn load_eval(cfg: &mut RunConfig, common: &Common, args: EvalArgs) -> Result<(Model, Dataset, Split)> {
    let ckpt = required(args.checkpoint, &cfg.paths.checkpoint, "checkpoint")?;
    let manifest_path = required(args.manifest, &cfg.paths.manifest, "manifest")?;
    cfg.paths.checkpoint = Some(ckpt.clone());
    cfg.paths.manifest = Some(manifest_path.clone());
    let (header, model) = checkpoint::load(&ckpt)?;
    if let Some(p) = common.profile {
        if p != header.config.profile {
            return Err(usage(format!("checkpoint profile {:?} does not match --profile {p:?}", header.config.profile)));
        }
    }
    cfg.profile = header.config.profile;
    if common.seed.is_none() && std::env::var(SEED_ENV).is_err() && common.config.is_none() {
        cfg.seed = header.seed;
    }
    let split = args.split.unwrap_or(cfg.eval.split);
    cfg.eval.split = split;
    let manifest = CorpusManifest::load(&manifest_path)?;
    let data = Dataset::load(&manifest, &model.config)?;
    Ok((model, data, split))
}
