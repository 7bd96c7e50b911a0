//! `avwnet`: synthesize data, train artery/vein models, predict and score.

mod commands;
mod config;
mod exit;

use std::path::PathBuf;
use std::process::ExitCode;

use avwnet::data_io::DatasetKind;
use avwnet::VesselKind;
use clap::{ArgAction, Args, Parser, Subcommand};

use crate::exit::{CliError, Status};

#[derive(Debug, Parser)]
#[command(name = "avwnet", version, about = "Artery/vein segmentation of fundus images")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// More progress output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    /// Only errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus with exact labels.
    Synth(SynthArgs),
    /// Train one W-Net for arteries or veins.
    Train(TrainArgs),
    /// Predict probability maps and the fused label image.
    Predict(PredictArgs),
    /// Score fused predictions against ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory (default: <out_root>/synth).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Corpus seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of images.
    #[arg(long)]
    pub count: Option<usize>,
    /// Image side in pixels, a multiple of 8.
    #[arg(long)]
    pub size: Option<usize>,
    /// Vessel trees per class.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Probability that a vein crosses an artery it meets.
    #[arg(long)]
    pub crossover: Option<f64>,
    /// Standard deviation of the pixel noise.
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset root (manifest.json or images/, av/, mask/).
    #[arg(long)]
    pub data: PathBuf,
    /// drive, hrf or synthetic.
    #[arg(long, default_value = "synthetic")]
    pub kind: DatasetKind,
    /// Require the full image count of real datasets.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// artery or vein.
    #[arg(long)]
    pub vessel: VesselKind,
    /// Output directory (default: <out_root>/train).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Split and weight-initialization seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Side of the square network input.
    #[arg(long)]
    pub size: Option<usize>,
    /// Resolution levels per U-Net.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Filters at the first level.
    #[arg(long)]
    pub filters: Option<usize>,
    /// Plain skip connections instead of attention gates.
    #[arg(long)]
    pub no_attention: bool,
    /// Supervise the first U-Net's output as well.
    #[arg(long)]
    pub deep_supervision: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Artery checkpoint written by `train`.
    #[arg(long, value_name = "CKPT")]
    pub artery: PathBuf,
    /// Vein checkpoint written by `train`.
    #[arg(long, value_name = "CKPT")]
    pub vein: PathBuf,
    /// Output directory (default: <out_root>/predict).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Probability below which a pixel is background.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Relative probability gap still labelled uncertain.
    #[arg(long)]
    pub band: Option<f64>,
    /// Also write every recorded feature and attention map as grayscale PNGs.
    #[arg(long)]
    pub dump_activations: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Output directory of `predict` (one `<id>/fused.png` per image).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth dataset root.
    #[arg(long)]
    pub truth: PathBuf,
    /// drive, hrf or synthetic.
    #[arg(long, default_value = "synthetic")]
    pub kind: DatasetKind,
    /// Output directory (default: <out_root>/evaluate).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Score the full ground-truth skeleton, not only its detected part.
    #[arg(long)]
    pub unrestricted_centerline: bool,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = config::RunConfig::load(cli.config.as_deref())?;
    if cli.quiet {
        cfg.verbosity = 0;
    } else {
        cfg.verbosity = cfg.verbosity.max(1).saturating_add(cli.verbose);
    }
    match cli.command {
        Command::Synth(a) => commands::synth(cfg, a),
        Command::Train(a) => commands::train(cfg, a),
        Command::Predict(a) => commands::predict(cfg, a),
        Command::Evaluate(a) => commands::evaluate(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(Status::Usage as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(Status::Success as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.status as u8)
        }
    }
}
