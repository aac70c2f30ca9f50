//! Scoring selections against a known support, and the SNR sweep benchmark.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EckoError, Result};
use crate::geometry::{coord_distance, GridGeometry};
use crate::pipeline::{run_cko, run_ecko, EckoParams};
use crate::seed::derive_seed;
use crate::simdata::{generate_synthetic, SimulationSpec};

/// `|selected \ support| / |selected|`, zero for an empty selection.
pub fn fdp(selected: &BTreeSet<usize>, support: &BTreeSet<usize>) -> f64 {
    if selected.is_empty() {
        return 0.0;
    }
    selected.difference(support).count() as f64 / selected.len() as f64
}

/// Fraction of selected voxels farther than `delta` from every support voxel.
pub fn delta_fdp(
    selected: &BTreeSet<usize>,
    support: &BTreeSet<usize>,
    delta: f64,
    geometry: &GridGeometry,
) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(EckoError::arg(format!("delta must be nonnegative, got {delta}")));
    }
    if selected.is_empty() {
        return Ok(0.0);
    }
    let coords = geometry.feature_coords();
    let p = coords.len();
    if let Some(&k) = selected.iter().chain(support.iter()).find(|&&k| k >= p) {
        return Err(EckoError::arg(format!("feature index {k} out of range")));
    }
    let far = selected
        .iter()
        .filter(|&&k| !support.contains(&k) && support.iter().all(|&j| coord_distance(coords[j], coords[k]) > delta))
        .count();
    Ok(far as f64 / selected.len() as f64)
}

/// `(1 - fdp, |selected & support| / |support|)`.
pub fn precision_recall(selected: &BTreeSet<usize>, support: &BTreeSet<usize>) -> Result<(f64, f64)> {
    if support.is_empty() {
        return Err(EckoError::arg("recall is undefined for an empty support"));
    }
    let hits = selected.intersection(support).count() as f64;
    Ok((1.0 - fdp(selected, support), hits / support.len() as f64))
}

/// Jaccard similarity of two selections; two empty sets count as identical.
pub fn jaccard(a: &BTreeSet<usize>, b: &BTreeSet<usize>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Precision and recall of `{k : q_k <= t}` for every distinct value `t` of
/// `q_tilde`, in increasing threshold order.
pub fn pr_curve(q_tilde: &[f64], support: &BTreeSet<usize>) -> Result<Vec<PrPoint>> {
    if support.is_empty() {
        return Err(EckoError::arg("precision-recall curve needs a non-empty support"));
    }
    if let Some(&k) = support.iter().find(|&&k| k >= q_tilde.len()) {
        return Err(EckoError::arg(format!("support index {k} out of range")));
    }
    if q_tilde.iter().any(|v| v.is_nan()) {
        return Err(EckoError::arg("q-values contain NaN"));
    }
    let mut order: Vec<usize> = (0..q_tilde.len()).collect();
    order.sort_by(|&a, &b| q_tilde[a].total_cmp(&q_tilde[b]));
    let mut points = Vec::new();
    let (mut tp, mut taken) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = q_tilde[order[i]];
        while i < order.len() && q_tilde[order[i]] == t {
            taken += 1;
            if support.contains(&order[i]) {
                tp += 1;
            }
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / taken as f64,
            recall: tp as f64 / support.len() as f64,
        });
    }
    Ok(points)
}

/// Step-wise area under a precision-recall curve: `sum (R_i - R_{i-1}) P_i`
/// starting from recall zero.
pub fn pr_auc(points: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for pt in points {
        area += (pt.recall - prev) * pt.precision;
        prev = pt.recall;
    }
    area
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ecko,
    Cko,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ecko => "ecko",
            Method::Cko => "cko",
        })
    }
}

impl FromStr for Method {
    type Err = EckoError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ecko" => Ok(Method::Ecko),
            "cko" => Ok(Method::Cko),
            other => Err(EckoError::arg(format!(
                "unknown method {other:?}; expected ecko or cko"
            ))),
        }
    }
}

impl Method {
    pub fn run(
        self,
        dataset: &crate::types::Dataset,
        params: &EckoParams,
    ) -> Result<(crate::types::SelectionResult, crate::pipeline::EckoTrace)> {
        match self {
            Method::Ecko => run_ecko(dataset, params),
            Method::Cko => run_cko(dataset, params),
        }
    }
}

/// Scores of one successful benchmark cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScores {
    pub fdp: f64,
    pub delta_fdp: f64,
    pub precision: f64,
    pub recall: f64,
    pub pr_auc: f64,
    pub delta: f64,
    pub n_selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRecord {
    pub method: Method,
    pub snr: f64,
    pub seed: usize,
    pub outcome: std::result::Result<CellScores, String>,
    pub selected: BTreeSet<usize>,
    pub runtime_s: f64,
}

/// Mean and standard error of each score over the successful seeds of one
/// `(method, snr)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub method: Method,
    pub snr: f64,
    pub n_ok: usize,
    pub n_failed: usize,
    pub fdp_mean: f64,
    pub fdp_se: f64,
    pub delta_fdp_mean: f64,
    pub delta_fdp_se: f64,
    pub precision_mean: f64,
    pub precision_se: f64,
    pub recall_mean: f64,
    pub recall_se: f64,
    pub pr_auc_mean: f64,
    pub pr_auc_se: f64,
    pub delta_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// Sorted by `(method, snr, seed)`.
    pub records: Vec<BenchmarkRecord>,
    /// Sorted by `(method, snr)`.
    pub aggregates: Vec<Aggregate>,
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let k = values.len();
    if k == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    if k == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}

impl BenchmarkReport {
    /// Builds the report and recomputes the aggregates from `records`.
    pub fn from_records(mut records: Vec<BenchmarkRecord>) -> Self {
        records.sort_by(|a, b| {
            a.method
                .cmp(&b.method)
                .then(a.snr.total_cmp(&b.snr))
                .then(a.seed.cmp(&b.seed))
        });
        let mut aggregates = Vec::new();
        let mut start = 0;
        while start < records.len() {
            let key = (records[start].method, records[start].snr);
            let end = start + records[start..].iter().take_while(|r| (r.method, r.snr) == key).count();
            let ok: Vec<&CellScores> = records[start..end]
                .iter()
                .filter_map(|r| r.outcome.as_ref().ok())
                .collect();
            let col = |f: fn(&CellScores) -> f64| mean_se(&ok.iter().map(|s| f(s)).collect::<Vec<_>>());
            let (fdp_mean, fdp_se) = col(|s| s.fdp);
            let (delta_fdp_mean, delta_fdp_se) = col(|s| s.delta_fdp);
            let (precision_mean, precision_se) = col(|s| s.precision);
            let (recall_mean, recall_se) = col(|s| s.recall);
            let (pr_auc_mean, pr_auc_se) = col(|s| s.pr_auc);
            let (delta_mean, _) = col(|s| s.delta);
            aggregates.push(Aggregate {
                method: key.0,
                snr: key.1,
                n_ok: ok.len(),
                n_failed: end - start - ok.len(),
                fdp_mean,
                fdp_se,
                delta_fdp_mean,
                delta_fdp_se,
                precision_mean,
                precision_se,
                recall_mean,
                recall_se,
                pr_auc_mean,
                pr_auc_se,
                delta_mean,
            });
            start = end;
        }
        BenchmarkReport { records, aggregates }
    }

    pub fn aggregate(&self, method: Method, snr: f64) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.method == method && a.snr == snr)
    }

    pub fn records_for(&self, method: Method, snr: f64) -> impl Iterator<Item = &BenchmarkRecord> {
        self.records.iter().filter(move |r| r.method == method && r.snr == snr)
    }
}

/// Seed of the simulated dataset for grid cell `(snr_index, seed)`.
pub fn cell_data_seed(base_seed: u64, snr_index: usize, seed: usize) -> u64 {
    derive_seed(base_seed, &[snr_index as u64, seed as u64])
}

/// Master seed of the inference run for grid cell `(snr_index, seed)`.
pub fn cell_master_seed(master: u64, snr_index: usize, seed: usize) -> u64 {
    derive_seed(master, &[snr_index as u64, seed as u64])
}

/// Scores one selection run against the truth, using the run's reported
/// `delta`.
pub fn score_run(
    result: &crate::types::SelectionResult,
    delta: f64,
    support: &BTreeSet<usize>,
    geometry: &GridGeometry,
) -> Result<CellScores> {
    let (precision, recall) = precision_recall(&result.selected, support)?;
    Ok(CellScores {
        fdp: fdp(&result.selected, support),
        delta_fdp: delta_fdp(&result.selected, support, delta, geometry)?,
        precision,
        recall,
        pr_auc: pr_auc(&pr_curve(&result.q_tilde, support)?),
        delta,
        n_selected: result.selected.len(),
    })
}

/// Runs every method on `n_seeds` simulated datasets per SNR level.
///
/// Datasets depend only on `(base_spec.seed, snr index, seed)`, so all
/// methods see the same data. Failed cells are kept with their error.
pub fn snr_sweep(
    methods: &[Method],
    snr_grid: &[f64],
    n_seeds: usize,
    base_spec: &SimulationSpec,
    params: &EckoParams,
) -> Result<BenchmarkReport> {
    if methods.is_empty() || snr_grid.is_empty() || n_seeds == 0 {
        return Err(EckoError::arg("benchmark grid is empty"));
    }
    if base_spec.n_rois == 0 {
        return Err(EckoError::arg("benchmark needs at least one ROI"));
    }
    params.validate()?;
    base_spec.validate()?;
    let cells: Vec<(usize, usize)> = (0..snr_grid.len())
        .flat_map(|i| (0..n_seeds).map(move |s| (i, s)))
        .collect();
    let records: Vec<BenchmarkRecord> = cells
        .par_iter()
        .flat_map_iter(|&(si, seed)| {
            let snr = snr_grid[si];
            let spec = SimulationSpec {
                target_snr: snr,
                seed: cell_data_seed(base_spec.seed, si, seed),
                ..base_spec.clone()
            };
            let cell_params = EckoParams {
                master_seed: cell_master_seed(params.master_seed, si, seed),
                ..params.clone()
            };
            let data = generate_synthetic(&spec);
            methods
                .iter()
                .map(|&method| {
                    let start = Instant::now();
                    let outcome = data.as_ref().map_err(|e| e.to_string()).and_then(|(dataset, truth)| {
                        let (result, trace) = method.run(dataset, &cell_params).map_err(|e| e.to_string())?;
                        let geometry = dataset.geometry().expect("simulated data has geometry");
                        score_run(&result, trace.delta, truth.support(), geometry)
                            .map(|s| (s, result.selected))
                            .map_err(|e| e.to_string())
                    });
                    let runtime_s = start.elapsed().as_secs_f64();
                    let (outcome, selected) = match outcome {
                        Ok((s, sel)) => (Ok(s), sel),
                        Err(e) => (Err(e), BTreeSet::new()),
                    };
                    BenchmarkRecord {
                        method,
                        snr,
                        seed,
                        outcome,
                        selected,
                        runtime_s,
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    Ok(BenchmarkReport::from_records(records))
}
