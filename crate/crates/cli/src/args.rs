use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use fqpe_core::dic::CorrectionOrder;

#[derive(Debug, Parser)]
#[command(
    name = "fqpe",
    version,
    about = "Frequency-decoupled low-light image enhancement"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance one PNG image.
    Enhance(EnhanceArgs),
    /// Apply synthetic low-light degradation to one PNG image.
    Degrade(DegradeArgs),
    /// Train weights on a PNG corpus (or the bundled synthetic one).
    Train(TrainArgs),
    /// Per-difficulty PSNR of degraded versus enhanced images.
    Evaluate(EvaluateArgs),
    /// Train and evaluate the depth and order grid; writes CSV.
    Ablate(AblateArgs),
    /// Parameter and FLOP accounting.
    Info(InfoArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Write freshly initialized weights.
    Init(InitArgs),
    /// Write the bundled synthetic corpus as PNG files.
    GenCorpus(GenCorpusArgs),
}

/// Architecture selection shared by most subcommands.
#[derive(Debug, Args, Default)]
pub struct ModelFlags {
    /// JSON config file; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Pyramid depth: 0 (bypass) or 2..=6.
    #[arg(long)]
    pub levels: Option<usize>,
    /// Correction order: global_to_local or local_to_global.
    #[arg(long)]
    pub order: Option<CorrectionOrder>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Weights file; not needed with --levels 0.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Debug, Args)]
pub struct DegradeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Darkening exponent in [1, 5].
    #[arg(long, default_value_t = 3.0)]
    pub darken: f32,
    /// Read-noise standard deviation in [0, 0.2].
    #[arg(long, default_value_t = 0.0)]
    pub read_noise: f32,
    /// Shot-noise scale in [0, 0.2].
    #[arg(long, default_value_t = 0.0)]
    pub shot_noise: f32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainFlags {
    #[command(flatten)]
    pub model: ModelFlags,
    /// Directory of training PNGs; the bundled corpus when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    /// Evaluate batch items on one thread (the determinism reference).
    #[arg(long)]
    pub single_thread: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Destination weights file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also append the line-JSON log to this file.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Weights file; not needed with --levels 0.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Directory of clean PNGs; the bundled corpus when absent.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Evaluate every image instead of the held-out validation split.
    #[arg(long)]
    pub all: bool,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub train: TrainFlags,
    /// Resolution for the GFLOPs columns, as HxW.
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(usize, usize)>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InfoArgs {
    /// Weights file; the architecture from --levels/--order otherwise.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Resolution for FLOP counts, as HxW.
    #[arg(long, value_parser = parse_resolution)]
    pub resolution: Option<(usize, usize)>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Seeded points per check.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Run only checks whose name contains this text.
    #[arg(long)]
    pub filter: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[command(flatten)]
    pub model: ModelFlags,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_resolution(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<usize>().ok().filter(|&n| n > 0);
    match (parse(h), parse(w)) {
        (Some(h), Some(w)) => Ok((h, w)),
        _ => Err(format!("expected positive HxW extents, got {s:?}")),
    }
}
