use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use ecko::metrics::Method;

#[derive(Debug, Parser)]
#[command(
    name = "ecko",
    version,
    about = "Spatially tolerant FDR-controlled support recovery on voxel grids"
)]
pub struct Cli {
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, env = "ECKO_THREADS", default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw a synthetic dataset with cubic regions of signal and write it to disk.
    Simulate(SimulateArgs),
    /// Run ECKO (or single-clustering CKO) on a dataset and write the selection.
    Infer(InferArgs),
    /// Run methods over a grid of SNR levels and seeds and write scores.
    #[command(after_long_help = BENCHMARK_COLUMNS)]
    Benchmark(BenchmarkArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulationFlags {
    /// Grid shape as X,Y,Z.
    #[arg(long, value_parser = parse_shape, default_value = "50,50,50")]
    pub shape: [usize; 3],
    #[arg(long, default_value_t = 100)]
    pub n_samples: usize,
    /// Number of cubic regions of signal (0 gives a null dataset).
    #[arg(long, default_value_t = 5)]
    pub n_rois: usize,
    /// Edge length of each region, in voxels.
    #[arg(long, default_value_t = 6)]
    pub roi_size: usize,
    /// Width (standard deviation, in voxels) of the Gaussian smoothing of X; 0 disables it.
    #[arg(long, default_value_t = 1.0)]
    pub smoothing: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimulationFlags,
    /// Signal-to-noise ratio ||Xw||^2 / ||sigma eps||^2.
    #[arg(long, default_value_t = 3.6)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct InferenceFlags {
    /// Nominal FDR level, in (0, 1).
    #[arg(long, value_parser = parse_open_unit, default_value_t = 0.1)]
    pub fdr: f64,
    /// Quantile level of the p-value aggregation, in (0, 1).
    #[arg(long, value_parser = parse_open_unit, default_value_t = 0.5)]
    pub gamma: f64,
    /// Fraction of samples used to build each clustering.
    #[arg(long, default_value_t = 0.7)]
    pub subsample: f64,
    /// Fixed per-sample lasso penalty; cross-validated when absent.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Use the (count + 1) / (q + 1) knockoff p-values.
    #[arg(long)]
    pub pvalue_offset: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Dataset manifest.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub n_clusters: usize,
    /// Knockoff draws per clustering.
    #[arg(long, default_value_t = 25)]
    pub n_draws: usize,
    #[arg(long, default_value_t = 25)]
    pub n_clusterings: usize,
    #[arg(long, default_value_t = Method::Ecko)]
    pub method: Method,
    #[command(flatten)]
    pub inference: InferenceFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Record wall time in the summary (makes it non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.5,2,8,32")]
    pub snr_grid: Vec<f64>,
    #[arg(long, default_value_t = 20)]
    pub n_seeds: usize,
    #[arg(long, value_delimiter = ',', default_value = "ecko,cko")]
    pub methods: Vec<Method>,
    /// Grid shape as X,Y,Z.
    #[arg(long, value_parser = parse_shape, default_value = "16,16,16")]
    pub shape: [usize; 3],
    #[arg(long, default_value_t = 100)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 2)]
    pub n_rois: usize,
    #[arg(long, default_value_t = 4)]
    pub roi_size: usize,
    #[arg(long, default_value_t = 1.0)]
    pub smoothing: f64,
    #[arg(long, default_value_t = 100)]
    pub n_clusters: usize,
    #[arg(long, default_value_t = 10)]
    pub n_draws: usize,
    #[arg(long, default_value_t = 10)]
    pub n_clusterings: usize,
    #[command(flatten)]
    pub inference: InferenceFlags,
    /// Seeds both the simulated datasets and the inference runs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Add runtime columns (makes the outputs non-reproducible).
    #[arg(long)]
    pub timing: bool,
}

const BENCHMARK_COLUMNS: &str = "\
Outputs (comma separated, one header row):
  records.csv  one row per (method, snr, seed):
    method, snr, seed, status (ok|failed), fdp, delta_fdp, precision,
    recall, pr_auc, delta, n_selected, error [, runtime_s with --timing]
  summary.csv  one row per (method, snr):
    method, snr, n_ok, n_failed, then mean and standard error over the ok
    rows of fdp, delta_fdp, precision, recall and pr_auc, then delta_mean
    [, runtime_mean_s with --timing]
Score columns are empty for failed rows.";

fn parse_shape(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected X,Y,Z, got {s:?}"));
    }
    let mut shape = [0usize; 3];
    for (dim, part) in shape.iter_mut().zip(parts) {
        *dim = part.trim().parse().map_err(|e| format!("bad extent {part:?}: {e}"))?;
    }
    Ok(shape)
}

fn parse_open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("must be in (0, 1), got {v}"))
    }
}
