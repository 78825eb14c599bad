//! Command-line driver. [`dispatch`] parses arguments, runs one command and
//! maps the outcome to an exit code: 0 success, 1 domain error, 2 usage
//! error.

mod attrib;
mod commands;
pub mod config;
pub mod manifest;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use manifest::{RunManifest, MANIFEST_NAME};

#[derive(Debug, Parser)]
#[command(name = "attralign", version, about = "Attribute-augmented alignment of object and category embeddings")]
pub struct Cli {
    /// JSON config file or a previous run manifest; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads; 1 forces the sequential path.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic triple dataset.
    GenSynth(GenSynthArgs),
    /// Summarize a dataset.
    Inspect(InspectArgs),
    /// Mine hard negatives (or sample simple ones) for the train split.
    Mine(MineArgs),
    /// Train a projection model.
    Train(TrainArgs),
    /// Run the ablation arms over several seeds.
    Ablate(AblateArgs),
    /// Linear-probe raw or projected object features.
    Probe(ProbeArgs),
    /// Alignment and discriminability diagnostics.
    Diag(DiagArgs),
    /// Multiple-choice evaluation with a confusion matrix.
    Eval(EvalArgs),
    /// Export a 2-D projection of embeddings as TSV.
    Export(ExportArgs),
    /// Attribute description construction.
    #[command(subcommand)]
    Attribgen(AttribgenCommand),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long)]
    pub dim_object: Option<usize>,
    #[arg(long)]
    pub dim_text: Option<usize>,
    /// Spread of class directions around a shared base direction.
    #[arg(long)]
    pub spread: Option<f64>,
    /// Within-class noise of object embeddings.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Norm of the offset shared by all objects.
    #[arg(long)]
    pub gap: Option<f64>,
    #[arg(long)]
    pub attribute_noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct MineArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
    /// hard or simple
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<attralign::mining::NegativeKind>,
    /// Seed for simple negatives.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Defaults to DATASET/negatives.json.
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Clone, Default)]
pub struct TrainFlags {
    /// two-stage, one-stage, stage2-only or finetune-only
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<attralign::training::TrainMode>,
    /// triple or object-category
    #[arg(long, value_parser = parse_objective)]
    pub objective: Option<attralign::losses::Objective>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub micro_batch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup: Option<u64>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub stage2_batch_size: Option<usize>,
    #[arg(long)]
    pub stage2_epochs: Option<usize>,
    #[arg(long)]
    pub stage2_lr: Option<f64>,
    #[arg(long)]
    pub stage2_warmup: Option<u64>,
    #[arg(long)]
    pub one_stage_weight: Option<f64>,
    /// Multiple-choice candidates: a number or "all".
    #[arg(long)]
    pub choices: Option<attralign::diagnostics::Choices>,
    /// Skip linear probes in the metric reports.
    #[arg(long)]
    pub no_probe: bool,
    #[arg(long)]
    pub dim_shared: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    /// Separate heads for attributes and categories.
    #[arg(long)]
    pub untied: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Precomputed negatives; mined on the fly when absent.
    #[arg(long, value_name = "FILE")]
    pub negatives: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Defaults to DATASET/train.
    #[arg(short, long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated arms: hard-negatives, simple-negatives, object-category, one-stage, stage2-only.
    #[arg(long, value_delimiter = ',', value_parser = parse_arm)]
    pub arms: Option<Vec<attralign::training::Arm>>,
    #[command(flatten)]
    pub flags: TrainFlags,
    /// Defaults to DATASET/ablation.
    #[arg(short, long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Also probe features projected by this checkpoint.
    #[arg(long, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Probe against shuffled train labels (chance-level sanity check).
    #[arg(long)]
    pub shuffle_labels: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    /// Without a checkpoint, raw embeddings are used (requires equal dims).
    #[arg(long, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    #[arg(short, long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub choices: Option<attralign::diagnostics::Choices>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Include linear probes.
    #[arg(long)]
    pub probe: bool,
    #[arg(short, long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Space {
    Object,
    Attribute,
    Category,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodArg {
    Pca2d,
    Raw,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_name = "DIR")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "object")]
    pub space: Space,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitArg,
    #[arg(long, value_enum, default_value = "pca2d")]
    pub method: MethodArg,
    #[arg(short, long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Clone, Default)]
pub struct EndpointFlags {
    /// Chat endpoint base URL (".../v1").
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub model: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[arg(long, value_name = "VAR")]
    pub auth_env: Option<String>,
    #[arg(long)]
    pub timeout: Option<f64>,
    #[arg(long)]
    pub max_retries: Option<u32>,
    #[arg(long)]
    pub backoff_ms: Option<u64>,
    /// VQA endpoint; defaults to the chat endpoint.
    #[arg(long)]
    pub vqa_base_url: Option<String>,
    #[arg(long)]
    pub vqa_model: Option<String>,
    /// Response cache directory.
    #[arg(long, value_name = "DIR")]
    pub cache: Option<PathBuf>,
    /// Answer from a recorded transcript instead of the network.
    #[arg(long, value_name = "FILE")]
    pub replay: Option<PathBuf>,
    /// Record every response into this transcript file.
    #[arg(long, value_name = "FILE", conflicts_with = "replay")]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum AttribgenCommand {
    /// Ask the LLM for attribute names of a super-category.
    Discover {
        #[arg(long = "super")]
        super_category: Option<String>,
        /// Plural noun for the subordinate categories, e.g. "models".
        #[arg(long)]
        class_unit: Option<String>,
        #[command(flatten)]
        endpoint: EndpointFlags,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Ask the VQA model one question per attribute for every sample.
    Extract {
        #[arg(long, value_name = "FILE")]
        attributes: PathBuf,
        /// JSONL of {id, category, image}.
        #[arg(long, value_name = "FILE")]
        samples: PathBuf,
        /// Earlier extraction output; only failed keys are re-requested.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointFlags,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Condense extracted attributes into descriptions.
    Summarize {
        #[arg(long, value_name = "FILE")]
        attributes: PathBuf,
        #[arg(long, value_name = "FILE")]
        extracted: PathBuf,
        /// Category names, one per line by id, to scrub from summaries.
        #[arg(long, value_name = "FILE")]
        scrub_names: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointFlags,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
    },
    /// discover, extract and summarize in one go.
    Run {
        #[arg(long = "super")]
        super_category: Option<String>,
        #[arg(long)]
        class_unit: Option<String>,
        #[arg(long, value_name = "FILE")]
        samples: PathBuf,
        #[arg(long, value_name = "FILE")]
        scrub_names: Option<PathBuf>,
        #[command(flatten)]
        endpoint: EndpointFlags,
        #[arg(short, long, value_name = "FILE")]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<attralign::training::TrainMode, String> {
    s.parse()
}

fn parse_objective(s: &str) -> Result<attralign::losses::Objective, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown objective {s:?}; expected triple or object-category"))
}

fn parse_kind(s: &str) -> Result<attralign::mining::NegativeKind, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown negative kind {s:?}; expected hard or simple"))
}

fn parse_arm(s: &str) -> Result<attralign::training::Arm, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| {
        format!("unknown arm {s:?}; expected hard-negatives, simple-negatives, object-category, one-stage or stage2-only")
    })
}

/// Errors that mean the invocation itself was wrong (exit code 2).
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

/// Runs one command. `argv[0]` is the program name.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                eprintln!("\nRun with --help for usage.");
                2
            } else {
                1
            }
        }
    }
}

fn run(cli: Cli, argv: &[String]) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(p) => config::load(p)?,
        None => config::FileConfig::default(),
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(UsageError("--threads must be at least 1".into()).into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build()?;
    let ctx = commands::Ctx { file, argv: argv.to_vec(), threads: cli.threads };
    pool.install(|| match cli.command {
        Command::GenSynth(a) => commands::gen_synth(&ctx, a),
        Command::Inspect(a) => commands::inspect(&ctx, a),
        Command::Mine(a) => commands::mine(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::Ablate(a) => commands::ablate(&ctx, a),
        Command::Probe(a) => commands::probe(&ctx, a),
        Command::Diag(a) => commands::diag(&ctx, a),
        Command::Eval(a) => commands::eval(&ctx, a),
        Command::Export(a) => commands::export(&ctx, a),
        Command::Attribgen(c) => attrib::run(&ctx, c),
    })
}
