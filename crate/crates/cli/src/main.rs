//! `semprobe` command-line driver. Each subcommand reads and writes the
//! dataset_store file formats so every stage can be inspected or rerun on
//! its own.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "semprobe", version, about = "Semantic entropy and semantic entropy probes")]
pub struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run data-parallel stages on one thread.
    #[arg(long, global = true)]
    pub sequential: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a greedy answer and N high-temperature answers per question.
    Sample(SampleArgs),
    /// Cluster sampled answers by bidirectional entailment.
    Cluster(ClusterArgs),
    /// Compute semantic entropy and the log-probability baselines.
    Score(ScoreArgs),
    /// Score the p(True) baseline through the gateway.
    Ptrue(PtrueArgs),
    /// Label greedy answers correct or incorrect.
    Label(LabelArgs),
    /// Threshold semantic entropy into high/low classes.
    Binarize(BinarizeArgs),
    /// Fit a linear probe on hidden states.
    TrainProbe(TrainProbeArgs),
    /// Run an evaluation protocol over tasks.
    Eval(EvalArgs),
    /// Generate a synthetic task with planted ground truth.
    Synth(SynthArgs),
    /// Print a results file as a table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TemplateArg {
    Short,
    Long,
    Context,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long, value_enum)]
    pub template: TemplateArg,
    #[arg(long)]
    pub out: PathBuf,
    /// QA records used as the five short-form examples (default: the first
    /// five records of --qa).
    #[arg(long)]
    pub shots: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Lexical,
    Nli,
    Judge,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    First,
    All,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub gens: PathBuf,
    #[arg(long, value_enum, default_value = "lexical")]
    pub backend: BackendArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "first")]
    pub mode: ModeArg,
    /// Prefix each answer with its question before judging.
    #[arg(long)]
    pub qa: Option<PathBuf>,
    #[arg(long)]
    pub nli_url: Option<String>,
    /// Entailment cache journal.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub gens: PathBuf,
    #[arg(long)]
    pub clusters: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output of `ptrue`, merged into the reports.
    #[arg(long)]
    pub ptrue: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PtrueArgs {
    #[arg(long)]
    pub gens: PathBuf,
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Few-shot blocks taken from the first records of --qa.
    #[arg(long, default_value_t = 10)]
    pub shots: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelMethodArg {
    F1,
    Judge,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub qa: PathBuf,
    #[arg(long)]
    pub gens: PathBuf,
    #[arg(long, value_enum, default_value = "f1")]
    pub method: LabelMethodArg,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Best,
    Even,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SeArg {
    Discrete,
    Mc,
}

#[derive(Debug, Args)]
pub struct BinarizeArgs {
    #[arg(long)]
    pub reports: PathBuf,
    #[arg(long, value_enum, default_value = "best")]
    pub method: SplitArg,
    /// Drop values strictly between these two quantiles, e.g. 0.55,0.80.
    #[arg(long, value_parser = commands::parse_band)]
    pub filter_quantiles: Option<(f64, f64)>,
    #[arg(long, value_enum)]
    pub se: Option<SeArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum LabelsArg {
    Se,
    Acc,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PositionArg {
    Slt,
    Tbg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StreamArg {
    Hidden,
    Residual,
    Mlp,
}

#[derive(Debug, Args)]
pub struct TrainProbeArgs {
    #[arg(long)]
    pub archive: PathBuf,
    #[arg(long, value_enum)]
    pub labels: LabelsArg,
    /// Reports for SE labels; binarized with a best split unless --split is given.
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Output of `binarize`.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Output of `label`, for accuracy labels.
    #[arg(long)]
    pub correctness: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "slt")]
    pub position: PositionArg,
    #[arg(long, value_enum, default_value = "hidden")]
    pub stream: StreamArg,
    /// `a..b` (end excluded), `a..=b`, or a comma list.
    #[arg(long, value_parser = commands::parse_layers)]
    pub layers: commands::Layers,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolArg {
    InDist,
    Holdout,
    Loo,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_enum)]
    pub protocol: ProtocolArg,
    /// Comma-separated `task.json` files or directories holding one.
    #[arg(long, value_delimiter = ',', required = true)]
    pub tasks: Vec<PathBuf>,
    /// Pre-trained probes to score on every task instead of training.
    #[arg(long, value_delimiter = ',')]
    pub probes: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long = "out-dir")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub n_prompts: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
