use std::path::PathBuf;

use bnfi::criteria::{Criterion, Order};
use bnfi::importance::QuadratureConfig;
use bnfi::search::{parse_ratio_list, Precision};
use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "bnfi", version, about = "Data-free structured channel pruning from batch-norm statistics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print per-channel importance scores of every prunable unit as CSV.
    Score(ScoreArgs),
    /// Remove channels and write the pruned model.
    Prune(PruneArgs),
    /// Accuracy of uniformly pruned models per criterion, order and ratio, as CSV.
    Sweep(SweepArgs),
    /// Search per-unit pruning ratios under an accuracy-drop budget; writes JSON.
    Search(SearchArgs),
    /// Print accuracy, parameter and FLOP counts as CSV.
    Eval(EvalArgs),
    /// Train a small CNN on synthetic blob images; writes the model and dataset.
    TrainToy(TrainToyArgs),
    /// Print the validated structure, prunable units and counts.
    Inspect(InspectArgs),
    /// Compare batch-normalized activations with N(0, 1) across batch sizes, as CSV.
    GaussCheck(GaussCheckArgs),
}

#[derive(Debug, Args)]
pub struct QuadArgs {
    /// Gauss-Legendre nodes per integration piece.
    #[arg(long, default_value_t = 128)]
    pub quad_nodes: usize,
    /// Integration window half-width in standard deviations.
    #[arg(long, default_value_t = 8.0)]
    pub quad_half_width: f64,
    /// Nonzero probability below which the sparsity-corrected score is 0.
    #[arg(long, default_value_t = 1e-12)]
    pub sparse_floor: f64,
}

impl QuadArgs {
    pub fn config(&self) -> Result<QuadratureConfig, CliError> {
        let cfg = QuadratureConfig {
            node_count: self.quad_nodes,
            half_width: self.quad_half_width,
            sparse_floor: self.sparse_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Significant digits for CSV numbers, or `full` for round-trip precision.
    #[arg(long, default_value = "6", value_parser = parse_precision)]
    pub precision: Precision,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value = "bnfi", value_parser = parse_criterion)]
    pub criterion: Criterion,
    /// Seed for the random criterion.
    #[arg(long, env = "BNFI_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
#[group(id = "amount", required = true, multiple = false, args = ["ratio", "ratios", "ratio_file", "plan"])]
pub struct PruneArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pruned model path.
    #[arg(long)]
    pub output: PathBuf,
    /// Same ratio for every prunable unit.
    #[arg(long, value_parser = parse_ratio)]
    pub ratio: Option<f64>,
    /// One ratio per prunable unit, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_ratio)]
    pub ratios: Option<Vec<f64>>,
    /// JSON ratio vector as written by `search`.
    #[arg(long)]
    pub ratio_file: Option<PathBuf>,
    /// JSON pruning plan as written by `--plan-output`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Also write the applied plan as JSON.
    #[arg(long)]
    pub plan_output: Option<PathBuf>,
    #[arg(long, default_value = "bnfi", value_parser = parse_criterion)]
    pub criterion: Criterion,
    #[arg(long, default_value = "aoi", value_parser = parse_order)]
    pub order: Order,
    #[arg(long, env = "BNFI_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Evaluation dataset (BNDS file).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "bnfi,l1,random", value_parser = parse_criterion)]
    pub criteria: Vec<Criterion>,
    #[arg(long, value_delimiter = ',', default_value = "aoi,doi", value_parser = parse_order)]
    pub orders: Vec<Order>,
    /// `start:stop:step` (stop included up to half a step) or a comma list.
    #[arg(long, default_value = "0:0.9:0.1", value_parser = parse_sweep_ratios)]
    pub ratios: SweepRatios,
    /// CSV path; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Base seed for the random criterion (averaged over three seeds from here).
    #[arg(long, env = "BNFI_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub quad: QuadArgs,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone)]
pub struct SweepRatios(pub Vec<f64>);

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset the accuracy drop is measured on (BNDS file).
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "bnfi", value_parser = parse_criterion)]
    pub criterion: Criterion,
    /// Tolerated accuracy drop per unit.
    #[arg(long)]
    pub delta: f64,
    /// Per-unit drop budgets, overriding --delta.
    #[arg(long, value_delimiter = ',')]
    pub unit_deltas: Option<Vec<f64>>,
    #[arg(long, default_value_t = 5)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lower: f64,
    #[arg(long, default_value_t = 0.95)]
    pub upper: f64,
    /// Search each unit on the model already pruned at earlier units' ratios.
    #[arg(long)]
    pub cumulative: bool,
    /// JSON path; standard output if omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long, env = "BNFI_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub quad: QuadArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct TrainToyArgs {
    /// Trained model path.
    #[arg(long)]
    pub output: PathBuf,
    /// Training split path (BNDS).
    #[arg(long)]
    pub data_output: PathBuf,
    /// Validation split path (BNDS).
    #[arg(long)]
    pub val_output: Option<PathBuf>,
    /// Initialization and shuffling seed.
    #[arg(long, env = "BNFI_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Seed of the synthetic dataset.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 32])]
    pub widths: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub samples_per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub image_size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Emit JSON instead of text.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GaussCheckArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Node index of the batch norm to probe; defaults to the first one.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 10, 100])]
    pub batch_sizes: Vec<usize>,
    /// Batch sampling seed.
    #[arg(long, env = "BNFI_SEED", default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutputArgs,
}

fn parse_criterion(s: &str) -> Result<Criterion, String> {
    s.parse().map_err(|e: bnfi::criteria::CriterionError| e.to_string())
}

fn parse_order(s: &str) -> Result<Order, String> {
    s.parse().map_err(|e: bnfi::criteria::CriterionError| e.to_string())
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let r: f64 = s.trim().parse().map_err(|_| format!("bad ratio '{s}'"))?;
    if (0.0..1.0).contains(&r) {
        Ok(r)
    } else {
        Err(format!("ratio {r} outside [0, 1)"))
    }
}

fn parse_sweep_ratios(s: &str) -> Result<SweepRatios, String> {
    let values = parse_ratio_list(s)?;
    if let Some(r) = values.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(format!("ratio {r} outside [0, 1)"));
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err("ratios must be strictly increasing".into());
    }
    Ok(SweepRatios(values))
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    if s.eq_ignore_ascii_case("full") {
        return Ok(Precision::Full);
    }
    match s.parse::<usize>() {
        Ok(d) if (1..=17).contains(&d) => Ok(Precision::Significant(d)),
        _ => Err(format!("precision must be 1..=17 or 'full', got '{s}'")),
    }
}
