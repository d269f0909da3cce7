use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hsicgru::recurrent::CellKind;
use hsicgru::training::OptimizerKind;

#[derive(Parser, Debug)]
#[command(name = "hsicgru", version, about = "Battery state-of-health estimation with HSIC-regularized recurrent networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic degradation batteries as canonical CSV
    Synth(SynthArgs),
    /// Train a model and write checkpoint, epoch log and info-plane trace
    Train(TrainArgs),
    /// Evaluate a checkpoint on cycle data
    Eval(EvalArgs),
    /// Train over a learning-rate x beta grid
    Sweep(SweepArgs),
    /// Render a CSV written by another command as SVG
    Plot(PlotArgs),
}

fn parse_cell(s: &str) -> Result<CellKind, String> {
    s.parse().map_err(|e: hsicgru::Error| e.to_string())
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: hsicgru::Error| e.to_string())
}

/// `none` or `/` turns the HSIC term off; a number sets its weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Beta(pub Option<f64>);

pub fn parse_beta(s: &str) -> Result<Beta, String> {
    let s = s.trim();
    if s == "/" || s.eq_ignore_ascii_case("none") {
        return Ok(Beta(None));
    }
    let v: f64 = s.parse().map_err(|_| format!("beta must be a number or `none`, got `{s}`"))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(format!("beta must be >= 0, got {v}"));
    }
    Ok(Beta(Some(v)))
}

#[derive(Args, Debug)]
pub struct OutArgs {
    /// Output directory (created if missing)
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Cycles per battery
    #[arg(long, default_value_t = 150)]
    pub cycles: usize,
    /// Number of batteries, named SYN1..SYNn
    #[arg(long, default_value_t = 5)]
    pub batteries: usize,
    /// Samples per cycle for a fresh cell
    #[arg(long, default_value_t = 40)]
    pub base_length: usize,
    /// Output file name inside --out
    #[arg(long, default_value = "synthetic.csv")]
    pub name: String,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    /// Shipped preset: cs, cx2 or nasa_rw
    #[arg(long)]
    pub preset: Option<String>,
    /// Preset file in the key-value format of the shipped presets
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Preset section to use (defaults to the cell name)
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long, value_parser = parse_cell)]
    pub cell: Option<CellKind>,
    /// HSIC weight; `none` trains without the HSIC term
    #[arg(long, value_parser = parse_beta)]
    pub beta: Option<Beta>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub hidden_size: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, value_parser = parse_optimizer)]
    pub optimizer: Option<OptimizerKind>,
    /// Clip gradients to this global norm
    #[arg(long)]
    pub clip_norm: Option<f64>,
    /// Comma-separated input channels, or `all`
    #[arg(long)]
    pub channels: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Canonical cycle CSV files
    #[arg(long, num_args = 1.., required = true)]
    pub data: Vec<PathBuf>,
    /// Labels file with battery_id,cycle_index,capacity_ah
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Label cycles by coulomb counting this current channel (discharge)
    #[arg(long)]
    pub coulomb: Option<String>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[arg(long)]
    pub test_battery: Option<String>,
    #[arg(long)]
    pub val_battery: Option<String>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Batteries to evaluate (default: all in --data)
    #[arg(long = "battery")]
    pub batteries: Vec<String>,
    /// Fail unless the checkpoint uses this cell type
    #[arg(long, value_parser = parse_cell)]
    pub cell: Option<CellKind>,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Comma-separated learning rates (grid rows)
    #[arg(long, value_delimiter = ',', required = true)]
    pub lrs: Vec<f64>,
    /// Comma-separated beta values (grid columns); `none` allowed
    #[arg(long, value_delimiter = ',', value_parser = parse_beta, required = true)]
    pub betas: Vec<Beta>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// Truth, prediction and relative error per cycle (predictions.csv)
    Capacity,
    /// Grid of a sweep metric (sweep.csv)
    Heatmap,
    /// HSIC(X;H) against training MSE per epoch (info_plane.csv)
    InfoPlane,
    /// Training curves (epoch_log.csv)
    Training,
    /// Bars of the five error metrics (metrics.csv)
    Metrics,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long, value_enum)]
    pub kind: PlotKind,
    #[arg(long)]
    pub input: PathBuf,
    /// Sweep column shown by the heatmap
    #[arg(long, default_value = "test_mse")]
    pub metric: String,
    /// Output file name inside --out (default: input stem + .svg)
    #[arg(long)]
    pub name: Option<String>,
    #[command(flatten)]
    pub out: OutArgs,
}
