use std::fs;
use std::path::Path;
use std::time::Instant;

use log::info;
use serde::Serialize;

use ecko::knockoff::PValueMode;
use ecko::metrics::{snr_sweep, BenchmarkReport, Method};
use ecko::pipeline::PenaltyRule;
use ecko::simdata::{generate_synthetic, SimulationSpec};
use ecko::{EckoParams, GridGeometry, SelectionResult};

use crate::args::{BenchmarkArgs, InferArgs, InferenceFlags, SimulateArgs, SimulationFlags};
use crate::error::CliError;
use crate::manifest::{f64s_to_bytes, read_dataset, write_dataset, SimulationBlock};

pub const SELECTION_FILE: &str = "selection.tsv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const QTILDE_FILE: &str = "q_tilde.f64";
pub const RECORDS_FILE: &str = "records.csv";
pub const AGGREGATE_FILE: &str = "summary.csv";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))
}

fn base_spec(sim: &SimulationFlags, snr: f64, seed: u64) -> SimulationSpec {
    SimulationSpec {
        target_snr: snr,
        smoothing_width: sim.smoothing,
        seed,
        ..SimulationSpec::new(sim.shape, sim.n_samples, sim.n_rois, sim.roi_size)
    }
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let spec = base_spec(&args.sim, args.snr, args.seed);
    spec.validate()?;
    let (dataset, truth) = generate_synthetic(&spec)?;
    let block = SimulationBlock {
        n_rois: spec.n_rois,
        roi_size: spec.roi_size,
        roi_amplitudes: spec.roi_amplitudes.clone(),
        target_snr: spec.target_snr,
        smoothing_width: spec.smoothing_width,
        seed: spec.seed,
    };
    let path = write_dataset(&args.out, &dataset, Some(&truth), Some(block))?;
    info!(
        "wrote n = {}, p = {}, |support| = {}, sigma = {:.4} to {}",
        dataset.n_samples(),
        dataset.n_features(),
        truth.support().len(),
        truth.sigma(),
        path.display()
    );
    Ok(())
}

fn build_params(
    flags: &InferenceFlags,
    n_clusters: usize,
    n_draws: usize,
    n_clusterings: usize,
    seed: u64,
) -> Result<EckoParams, CliError> {
    let params = EckoParams {
        n_clusters,
        n_draws,
        n_clusterings,
        alpha: flags.fdr,
        gamma: flags.gamma,
        subsample_fraction: flags.subsample,
        master_seed: seed,
        penalty: match flags.lambda {
            Some(l) => PenaltyRule::Fixed(l),
            None => PenaltyRule::default(),
        },
        pvalue_mode: if flags.pvalue_offset {
            PValueMode::Offset
        } else {
            PValueMode::Plain
        },
    };
    params.validate()?;
    Ok(params)
}

#[derive(Serialize)]
struct InferSummary {
    method: String,
    seed: u64,
    fdr: f64,
    n_clusters: usize,
    n_draws: usize,
    n_clusterings: usize,
    gamma: f64,
    subsample: f64,
    penalty: String,
    pvalue_mode: String,
    n: usize,
    p: usize,
    delta: f64,
    n_selected: usize,
    n_positive: usize,
    n_negative: usize,
    /// Per-sample penalty of each clustering run, in run order.
    lambdas: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_s: Option<f64>,
}

/// Writes one row per selected voxel: `index x y z q_tilde sign`.
pub fn write_selection(path: &Path, result: &SelectionResult, geometry: &GridGeometry) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_path(path)?;
    w.write_record(["index", "x", "y", "z", "q_tilde", "sign"])?;
    for &k in &result.selected {
        let [x, y, z] = geometry.coord(k)?;
        w.write_record([
            k.to_string(),
            x.to_string(),
            y.to_string(),
            z.to_string(),
            result.q_tilde[k].to_string(),
            result.signs[k].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn infer(args: &InferArgs) -> Result<(), CliError> {
    let (dataset, _, _) = read_dataset(&args.data)?;
    let params = build_params(
        &args.inference,
        args.n_clusters,
        args.n_draws,
        args.n_clusterings,
        args.seed,
    )?;
    if params.n_clusters > dataset.n_features() {
        return Err(CliError::Usage(format!(
            "--n-clusters {} exceeds the number of features p = {}",
            params.n_clusters,
            dataset.n_features()
        )));
    }
    let start = Instant::now();
    let (result, trace) = args.method.run(&dataset, &params)?;
    let wall = start.elapsed().as_secs_f64();
    info!(
        "{} selected {} of {} voxels (delta = {:.3}) in {wall:.2} s",
        args.method,
        result.selected.len(),
        dataset.n_features(),
        trace.delta
    );

    create_dir(&args.out)?;
    let geometry = dataset.geometry().expect("manifest data has geometry");
    write_selection(&args.out.join(SELECTION_FILE), &result, geometry)?;
    fs::write(
        args.out.join(QTILDE_FILE),
        f64s_to_bytes(result.q_tilde.iter().copied()),
    )?;

    let n = dataset.n_samples() as f64;
    let summary = InferSummary {
        method: args.method.to_string(),
        seed: args.seed,
        fdr: params.alpha,
        n_clusters: params.n_clusters,
        n_draws: if args.method == Method::Cko { 1 } else { params.n_draws },
        n_clusterings: if args.method == Method::Cko {
            1
        } else {
            params.n_clusterings
        },
        gamma: params.gamma,
        subsample: params.subsample_fraction,
        penalty: match params.penalty {
            PenaltyRule::Fixed(l) => format!("fixed {l}"),
            PenaltyRule::CrossValidated { n_folds, grid_size } => format!("cv {n_folds} folds, {grid_size} values"),
        },
        pvalue_mode: format!("{:?}", params.pvalue_mode).to_lowercase(),
        n: dataset.n_samples(),
        p: dataset.n_features(),
        delta: trace.delta,
        n_selected: result.selected.len(),
        n_positive: result.signs.iter().filter(|&&s| s > 0).count(),
        n_negative: result.signs.iter().filter(|&&s| s < 0).count(),
        lambdas: trace.clusterings.iter().map(|c| c.lambda / n).collect(),
        wall_time_s: args.timing.then_some(wall),
    };
    let text = toml::to_string(&summary).map_err(|e| CliError::Internal(e.to_string()))?;
    fs::write(args.out.join(SUMMARY_FILE), text)?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the per-cell records and the per-(method, snr) aggregates.
pub fn write_report(dir: &Path, report: &BenchmarkReport, timing: bool) -> Result<(), CliError> {
    create_dir(dir)?;
    let mut w = csv::Writer::from_path(dir.join(RECORDS_FILE))?;
    let mut header = vec![
        "method",
        "snr",
        "seed",
        "status",
        "fdp",
        "delta_fdp",
        "precision",
        "recall",
        "pr_auc",
        "delta",
        "n_selected",
        "error",
    ];
    if timing {
        header.push("runtime_s");
    }
    w.write_record(&header)?;
    for r in &report.records {
        let s = r.outcome.as_ref().ok();
        let mut row = vec![
            r.method.to_string(),
            r.snr.to_string(),
            r.seed.to_string(),
            if s.is_some() { "ok" } else { "failed" }.to_string(),
            opt(s.map(|s| s.fdp)),
            opt(s.map(|s| s.delta_fdp)),
            opt(s.map(|s| s.precision)),
            opt(s.map(|s| s.recall)),
            opt(s.map(|s| s.pr_auc)),
            opt(s.map(|s| s.delta)),
            s.map(|s| s.n_selected.to_string()).unwrap_or_default(),
            r.outcome.as_ref().err().cloned().unwrap_or_default(),
        ];
        if timing {
            row.push(r.runtime_s.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join(AGGREGATE_FILE))?;
    let mut header = vec![
        "method",
        "snr",
        "n_ok",
        "n_failed",
        "fdp_mean",
        "fdp_se",
        "delta_fdp_mean",
        "delta_fdp_se",
        "precision_mean",
        "precision_se",
        "recall_mean",
        "recall_se",
        "pr_auc_mean",
        "pr_auc_se",
        "delta_mean",
    ];
    if timing {
        header.push("runtime_mean_s");
    }
    w.write_record(&header)?;
    for a in &report.aggregates {
        let mut row = vec![
            a.method.to_string(),
            a.snr.to_string(),
            a.n_ok.to_string(),
            a.n_failed.to_string(),
        ];
        row.extend(
            [
                a.fdp_mean,
                a.fdp_se,
                a.delta_fdp_mean,
                a.delta_fdp_se,
                a.precision_mean,
                a.precision_se,
                a.recall_mean,
                a.recall_se,
                a.pr_auc_mean,
                a.pr_auc_se,
                a.delta_mean,
            ]
            .map(|v| v.to_string()),
        );
        if timing {
            let times: Vec<f64> = report.records_for(a.method, a.snr).map(|r| r.runtime_s).collect();
            row.push((times.iter().sum::<f64>() / times.len().max(1) as f64).to_string());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<(), CliError> {
    if args.snr_grid.is_empty() || args.methods.is_empty() || args.n_seeds == 0 {
        return Err(CliError::Usage("benchmark grid is empty".into()));
    }
    if let Some(bad) = args.snr_grid.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
        return Err(CliError::Usage(format!("SNR levels must be positive, got {bad}")));
    }
    let sim = SimulationFlags {
        shape: args.shape,
        n_samples: args.n_samples,
        n_rois: args.n_rois,
        roi_size: args.roi_size,
        smoothing: args.smoothing,
    };
    let spec = base_spec(&sim, args.snr_grid[0], args.seed);
    let params = build_params(
        &args.inference,
        args.n_clusters,
        args.n_draws,
        args.n_clusterings,
        args.seed,
    )?;
    let start = Instant::now();
    let report = snr_sweep(&args.methods, &args.snr_grid, args.n_seeds, &spec, &params)?;
    info!(
        "{} records in {:.1} s",
        report.records.len(),
        start.elapsed().as_secs_f64()
    );
    for a in &report.aggregates {
        info!(
            "{:>4} snr {:>6}: delta-FDP {:.3} ± {:.3}, precision {:.3}, recall {:.3}, AUC {:.3} ({} failed)",
            a.method,
            a.snr,
            a.delta_fdp_mean,
            a.delta_fdp_se,
            a.precision_mean,
            a.recall_mean,
            a.pr_auc_mean,
            a.n_failed
        );
    }
    write_report(&args.out, &report, args.timing)
}
