//! `smsmix` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use smsmix::augmentor::SelectionPolicy;
use smsmix::mixer::Mode;
use smsmix::wsdeval::MacroUnit;

#[derive(Debug, Parser)]
#[command(name = "smsmix", version, about = "Sense-maintained sentence mixup for WSD training data")]
pub struct Cli {
    /// key=value file; keys are long flag names. Flags on the command line win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Run seeds [seed, seed + n-seeds).
    #[arg(long, global = true, default_value_t = 1)]
    pub n_seeds: u64,
    /// Worker threads for generation.
    #[arg(long, global = true, default_value_t = 1)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sense frequency and imbalance report.
    Stats(StatsArgs),
    /// Generate augmented examples for least frequent senses.
    Augment(AugmentArgs),
    /// Two-stage training of the toy bi-encoder.
    Train(TrainArgs),
    /// Score models or prediction files.
    Eval(EvalArgs),
    /// Embedding overlap between augmented and reference examples.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    #[arg(long)]
    pub train_xml: Option<PathBuf>,
    #[arg(long)]
    pub train_gold: Option<PathBuf>,
    /// Sense inventory, tab-separated: key, lemma, pos, gloss.
    #[arg(long)]
    pub inventory: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 5)]
    pub window: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lr: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Optional evaluation corpus split into MFS/LFS/zero-shot subsets.
    #[arg(long)]
    pub eval_xml: Option<PathBuf>,
    #[arg(long)]
    pub eval_gold: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = Mode::External)]
    pub mode: Mode,
    /// One sentence per line, whitespace tokenized.
    #[arg(long)]
    pub external: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub per_sense: usize,
    #[arg(long, default_value_t = 0.5)]
    pub lfs_fraction: f64,
    #[arg(long, default_value = "random")]
    pub selection_policy: SelectionPolicy,
    #[arg(long, default_value_t = 5)]
    pub retry_limit: usize,
    /// Saliency backend: `toy` or `cmd:<program and args>`.
    #[arg(long, default_value = "toy")]
    pub backend: String,
    /// Toy checkpoint for saliency; trained on the fly when absent.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `template`, `identity` or `cmd:<program and args>`.
    #[arg(long, default_value = "template")]
    pub infill: String,
    /// `rule`, `accept-all`, `reject-all` or `cmd:<program and args>`.
    #[arg(long, default_value = "rule")]
    pub judge: String,
    /// Host saliency label for internal mode: `host` or `source`.
    #[arg(long, default_value = "host")]
    pub host_label: String,
    #[arg(long, default_value_t = 0.5)]
    pub max_span_fraction: f64,
    #[command(flatten)]
    pub toy: ToyArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Augmented dataset for stage 2; without it only stage 1 runs.
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    #[command(flatten)]
    pub toy: ToyArgs,
    /// Stage-2 learning rate; defaults to lr / 100.
    #[arg(long)]
    pub stage2_lr: Option<f64>,
    #[arg(long, default_value_t = 1)]
    pub stage2_epochs: usize,
    #[arg(long)]
    pub dev_xml: Option<PathBuf>,
    #[arg(long)]
    pub dev_gold: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub eval_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Evaluation corpora; pair each with an --eval-gold in the same order.
    #[arg(long)]
    pub eval_xml: Vec<PathBuf>,
    #[arg(long)]
    pub eval_gold: Vec<PathBuf>,
    /// Checkpoints, one per run.
    #[arg(long)]
    pub model: Vec<PathBuf>,
    /// Directory holding model.seed<S>.ckpt for every run seed.
    #[arg(long)]
    pub model_dir: Option<PathBuf>,
    /// `<instance_id> <sense_key>` lines, scored instead of a model.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    #[arg(long, default_value = "by_sense")]
    pub macro_unit: MacroUnit,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long)]
    pub augmented: Option<PathBuf>,
    /// Labeled reference corpus; defaults to the training corpus.
    #[arg(long)]
    pub reference_xml: Option<PathBuf>,
    #[arg(long)]
    pub reference_gold: Option<PathBuf>,
    /// Toy checkpoint used as the target encoder.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// `toy` or `cmd:<program and args>`.
    #[arg(long, default_value = "toy")]
    pub encoder: String,
    /// Precomputed rows `sense_key<TAB>origin<TAB>v1<TAB>v2...`; skips encoding.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub per_sense: usize,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
}

/// Failure classes, each with its own exit code.
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Data(String),
    Backend(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Data(_) => 3,
            Failure::Backend(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Data(m) | Failure::Backend(m) => m,
        }
    }
}

impl From<smsmix::Error> for Failure {
    fn from(e: smsmix::Error) -> Self {
        if e.is_backend() || matches!(e, smsmix::Error::BackendContractViolation(_)) {
            Failure::Backend(e.to_string())
        } else {
            Failure::Data(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match config::parse(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(f) => {
            eprintln!("smsmix: {}", f.message());
            return ExitCode::from(f.code());
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("smsmix: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
