use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deteclap::eval::{Split, Task};
use deteclap::labels::{LabelOp, Modality, TargetKind};
use deteclap::model::Profile;
use deteclap::objectives::Variant;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "deteclap", version, about = "Audio-visual pre-training with detector and tagger label prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file.
#[derive(Args, Debug, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; falls back to DETECLAP_SEED, then the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub profile: Option<Profile>,
    /// base|visual|audio|separate|and|or
    #[arg(long, global = true)]
    pub variant: Option<Variant>,
    #[arg(long, global = true)]
    pub theta_audio: Option<f64>,
    #[arg(long, global = true)]
    pub theta_visual: Option<f64>,
    /// hard|soft-audio|soft-visual|soft-max
    #[arg(long, global = true)]
    pub label_kind: Option<TargetKind>,
    #[arg(long, global = true)]
    pub mask_ratio: Option<f64>,
    /// Parallel sweep workers.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a synthetic corpus: waveforms, frames, manifest and scores.
    Synth {
        #[arg(long)]
        clips: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// Fraction of each class held out for test.
        #[arg(long)]
        test_fraction: Option<f64>,
    },
    /// Turn paired score files into label vectors.
    Labels {
        /// audio|visual|and|or|soft-audio|soft-visual|soft-max
        #[arg(long)]
        op: LabelOp,
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Pre-train the configured variant.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Evaluate a checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Retrain over a threshold grid and tabulate sumR.
    Sweep {
        #[command(flatten)]
        data: DataArgs,
        /// Which threshold varies: audio|visual.
        #[arg(long)]
        vary: Option<Modality>,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<f64>>,
        #[arg(long)]
        fixed_other: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        split: Option<Split>,
    },
    /// Synthesize, train and evaluate in one run.
    Pipeline {
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Render metrics reports as a table.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Cross-modal recall@1/5/10 on unmasked embeddings.
    Retrieval {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Fine-tune a linear head and report accuracy or mAP.
    Classify {
        #[command(flatten)]
        eval: EvalArgs,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Train only the head on frozen embeddings.
        #[arg(long)]
        head_only: bool,
    },
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// train|val|test
    #[arg(long)]
    split: Option<Split>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Some causes already repeat their source in their own message.
            let mut parts: Vec<String> = Vec::new();
            for c in e.chain().map(|c| c.to_string().replace('\n', " ")) {
                if !parts.last().is_some_and(|p| p.contains(&c)) {
                    parts.push(c);
                }
            }
            eprintln!("error: {}", parts.join(": "));
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
