use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use minidiff::ScheduleTable;

use crate::Failure;

#[derive(Debug, Parser)]
#[command(name = "minidiff", version, about = "Train and sample small DDPM/DDIM image models")]
pub struct Cli {
    /// File of `key=value` lines using the long flag names; flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a noise-prediction U-Net.
    Train(TrainArgs),
    /// Generate images from a checkpoint.
    Sample(SampleArgs),
    /// Print the noise schedule table as CSV.
    Schedule(ScheduleArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Mnist,
    FashionMnist,
    Cifar10,
}

impl From<DatasetArg> for minidiff::DatasetKind {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Mnist => minidiff::DatasetKind::Mnist,
            DatasetArg::FashionMnist => minidiff::DatasetKind::FashionMnist,
            DatasetArg::Cifar10 => minidiff::DatasetKind::Cifar10,
        }
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub dataset: DatasetArg,
    /// Directory holding the dataset's native files (IDX for MNIST and
    /// Fashion-MNIST, `data_batch_*.bin` for CIFAR-10).
    #[arg(long, value_name = "DIR")]
    pub data_dir: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 300)]
    pub timesteps: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = minidiff::optim::DEFAULT_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = 128)]
    pub model_channels: usize,
    /// Add the extra conv stages and middle residual block.
    #[arg(long)]
    pub deeper: bool,
    /// Train a class-conditional model with a null label for guidance.
    #[arg(long)]
    pub conditional: bool,
    /// Label dropout probability for conditional training.
    #[arg(long, default_value_t = 0.1)]
    pub p_uncond: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Checkpoint interval in epochs (0: only at the end).
    #[arg(long, default_value_t = 10)]
    pub checkpoint_every: usize,
    #[arg(long, default_value = "runs")]
    pub out_dir: PathBuf,
    /// Rescale gradients whose global norm exceeds this value.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Use only the first N training images.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "CHECKPOINT")]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Ddpm,
    Ddim,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct SampleArgs {
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SamplerArg::Ddpm)]
    pub sampler: SamplerArg,
    /// DDIM step count; required with `--sampler ddim`.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    /// Class to generate (conditional checkpoints only). Without it the
    /// batch cycles through all classes.
    #[arg(long)]
    pub label: Option<usize>,
    /// Classifier-free guidance weight (conditional checkpoints only).
    #[arg(long)]
    pub guidance: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "samples")]
    pub out_dir: PathBuf,
    /// Also write the denoising trajectory as one wide grid.
    #[arg(long)]
    pub trajectory: bool,
    /// Sampler steps between trajectory frames (default: a tenth of the run).
    #[arg(long)]
    pub record_every: Option<usize>,
    /// Grid columns (default: the square root of the batch, rounded up).
    #[arg(long)]
    pub cols: Option<usize>,
    /// Expected schedule length; must match the checkpoint.
    #[arg(long)]
    pub timesteps: Option<usize>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ScheduleArgs {
    #[arg(long, default_value_t = 300)]
    pub timesteps: usize,
    /// Write the CSV here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn schedule(args: ScheduleArgs) -> Result<(), Failure> {
    let out = args.out.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "stdout".into());
    let pairs = vec![
        ("timesteps".to_string(), args.timesteps.to_string()),
        ("schedule".to_string(), "linear".to_string()),
        ("out".to_string(), out),
    ];
    // The CSV may go to stdout, so the config goes to stderr here.
    eprintln!("resolved config:");
    for (k, v) in &pairs {
        eprintln!("  {k} = {v}");
    }
    let table = ScheduleTable::linear(args.timesteps)?;
    let csv = table.to_csv();
    match &args.out {
        Some(path) => std::fs::write(path, csv)?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}
