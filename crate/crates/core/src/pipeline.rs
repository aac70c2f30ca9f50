//! End-to-end ensemble of clustered knockoffs.
//!
//! For each of `C` clusterings (each learned on a random row subsample) the
//! voxels are reduced to cluster averages, `B` knockoff copies are drawn, and
//! the per-draw knockoff p-values are quantile-aggregated and turned into
//! Benjamini-Hochberg q-values. Cluster q-values are broadcast back to voxels
//! and averaged over clusterings before thresholding.
//!
//! Every `(c, b)` cell is a pure function of the dataset, the parameters and
//! `derive_seed(master_seed, [c])` / `derive_seed(master_seed, [c, b])`, so
//! results do not depend on how rayon schedules the grid.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::cluster::{
    broadcast_qvalues, max_diameter, reduce_features, subsample_rows, ward_cluster, Clustering,
    DEFAULT_SUBSAMPLE_FRACTION,
};
use crate::error::{EckoError, Result};
use crate::geometry::GridGeometry;
use crate::knockoff::{
    fit_knockoff_model, knockoff_design, knockoff_pvalues_with, lcd_fit, sample_knockoffs, KnockoffModel, PValueMode,
    StatVector,
};
use crate::linmodel::{center, lasso_cv_lambda, standardize_columns, DEFAULT_CV_FOLDS, DEFAULT_CV_GRID};
use crate::multtest::{bhq_qvalues, quantile_aggregate, PValueMatrix, DEFAULT_GAMMA};
use crate::seed::derive_seed;
use crate::types::{Dataset, SelectionResult};

// label appended to a clustering's seed path for its CV folds
const CV_LABEL: u64 = 0x6376;

/// How the lasso penalty of the LCD statistic is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyRule {
    /// K-fold cross-validation on draw 0 of each clustering, reused for all
    /// draws of that clustering.
    CrossValidated { n_folds: usize, grid_size: usize },
    /// A fixed per-sample penalty `alpha`; the solver uses `alpha * n`.
    Fixed(f64),
}

impl Default for PenaltyRule {
    fn default() -> Self {
        PenaltyRule::CrossValidated {
            n_folds: DEFAULT_CV_FOLDS,
            grid_size: DEFAULT_CV_GRID,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EckoParams {
    pub n_clusters: usize,
    pub n_draws: usize,
    pub n_clusterings: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub subsample_fraction: f64,
    pub master_seed: u64,
    pub penalty: PenaltyRule,
    pub pvalue_mode: PValueMode,
}

impl Default for EckoParams {
    fn default() -> Self {
        EckoParams {
            n_clusters: 500,
            n_draws: 25,
            n_clusterings: 25,
            alpha: 0.1,
            gamma: DEFAULT_GAMMA,
            subsample_fraction: DEFAULT_SUBSAMPLE_FRACTION,
            master_seed: 0,
            penalty: PenaltyRule::default(),
            pvalue_mode: PValueMode::Plain,
        }
    }
}

impl EckoParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_clusters == 0 || self.n_draws == 0 || self.n_clusterings == 0 {
            return Err(EckoError::arg("cluster, draw and clustering counts must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(EckoError::arg(format!(
                "FDR level must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(EckoError::arg(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(EckoError::arg("subsample fraction must be in (0, 1]"));
        }
        match self.penalty {
            PenaltyRule::Fixed(a) if !(a > 0.0 && a.is_finite()) => {
                Err(EckoError::arg("fixed penalty must be positive"))
            }
            PenaltyRule::CrossValidated { n_folds, grid_size } if n_folds < 2 || grid_size == 0 => {
                Err(EckoError::arg("cross-validation needs >= 2 folds and a non-empty grid"))
            }
            _ => Ok(()),
        }
    }

    /// Same parameters with a single clustering and a single knockoff draw.
    pub fn as_cko(&self) -> Self {
        EckoParams {
            n_clusterings: 1,
            n_draws: 1,
            ..self.clone()
        }
    }
}

/// Intermediates of one knockoff draw.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawTrace {
    pub z: StatVector,
    pub pvalues: Vec<f64>,
    /// Sign of the lasso coefficient of each cluster's original column.
    pub coef_signs: Vec<i8>,
    pub lasso_converged: bool,
}

/// Intermediates of one clustering `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteringTrace {
    pub clustering: Clustering,
    /// Lasso penalty in solver units (per-sample penalty times `n`).
    pub lambda: f64,
    pub draws: Vec<DrawTrace>,
    pub aggregated_p: Vec<f64>,
    pub cluster_q: Vec<f64>,
    pub voxel_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EckoTrace {
    pub clusterings: Vec<ClusteringTrace>,
    pub q_tilde: Vec<f64>,
    /// Largest cluster diameter over all clusterings.
    pub delta: f64,
}

impl EckoTrace {
    /// Re-thresholds the averaged q-values at another level.
    pub fn select(&self, alpha: f64) -> Result<SelectionResult> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(EckoError::arg(format!("FDR level must be in (0, 1), got {alpha}")));
        }
        let selected = crate::multtest::threshold_select(&self.q_tilde, alpha);
        let signs = sign_vote(self, &selected);
        SelectionResult::new(self.q_tilde.clone(), signs, alpha)
    }
}

/// Majority sign over all `(b, c)` of the lasso coefficient of the cluster
/// enclosing each selected voxel; zero coefficients abstain and exact ties
/// give 0. Unselected voxels get 0.
pub fn sign_vote(trace: &EckoTrace, selected: &std::collections::BTreeSet<usize>) -> Vec<i8> {
    let p = trace.q_tilde.len();
    let mut signs = vec![0i8; p];
    for &k in selected.iter().filter(|&&k| k < p) {
        let mut tally = 0i64;
        for ct in &trace.clusterings {
            let j = ct.clustering.assignment()[k];
            for d in &ct.draws {
                tally += d.coef_signs[j] as i64;
            }
        }
        signs[k] = tally.signum() as i8;
    }
    signs
}

fn sign_of(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Runs the full ensemble and thresholds the averaged q-values at
/// `params.alpha`.
pub fn run_ecko(dataset: &Dataset, params: &EckoParams) -> Result<(SelectionResult, EckoTrace)> {
    params.validate()?;
    let geometry = dataset
        .geometry()
        .ok_or_else(|| EckoError::arg("dataset has no voxel geometry"))?;
    let p = dataset.n_features();
    if params.n_clusters > p {
        return Err(EckoError::arg(format!(
            "{} clusters requested but only {p} features",
            params.n_clusters
        )));
    }
    let y = center(dataset.y().view());

    let clusterings: Vec<ClusteringTrace> = (0..params.n_clusterings)
        .into_par_iter()
        .map(|c| {
            run_clustering(dataset.x().view(), y.view(), geometry, params, c)
                .map_err(|e| EckoError::Clustering { c, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;

    let mut q_tilde = vec![0.0; p];
    for ct in &clusterings {
        for (acc, v) in q_tilde.iter_mut().zip(&ct.voxel_q) {
            *acc += v;
        }
    }
    let n_c = clusterings.len() as f64;
    q_tilde.iter_mut().for_each(|v| *v /= n_c);

    let parts: Vec<Clustering> = clusterings.iter().map(|c| c.clustering.clone()).collect();
    let trace = EckoTrace {
        delta: max_diameter(&parts)?,
        clusterings,
        q_tilde,
    };
    let result = trace.select(params.alpha)?;
    Ok((result, trace))
}

/// Single clustering, single draw: `run_ecko` with `C = B = 1`.
pub fn run_cko(dataset: &Dataset, params: &EckoParams) -> Result<(SelectionResult, EckoTrace)> {
    run_ecko(dataset, &params.as_cko())
}

fn run_clustering(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    geometry: &GridGeometry,
    params: &EckoParams,
    c: usize,
) -> Result<ClusteringTrace> {
    let n = x.nrows();
    let seed_c = derive_seed(params.master_seed, &[c as u64]);
    let rows = subsample_rows(n, params.subsample_fraction, seed_c)?;
    let x_sub = standardize_columns(x.select(Axis(0), &rows).view())?;
    let clustering = ward_cluster(x_sub.view(), geometry, params.n_clusters)?;

    let reduced = standardize_columns(reduce_features(x, &clustering)?.view())?;
    let model = fit_knockoff_model(reduced.view())?;
    let draw_seed = |b: usize| derive_seed(params.master_seed, &[c as u64, b as u64]);

    let first = knockoff_design(
        reduced.view(),
        sample_knockoffs(&model, reduced.view(), draw_seed(0))?.view(),
    )?;
    let alpha = match params.penalty {
        PenaltyRule::Fixed(a) => a,
        PenaltyRule::CrossValidated { n_folds, grid_size } => {
            lasso_cv_lambda(first.view(), y, n_folds, grid_size, derive_seed(seed_c, &[CV_LABEL]))?
        }
    };
    let lambda = alpha * n as f64;

    let draws: Vec<DrawTrace> = (0..params.n_draws)
        .into_par_iter()
        .map(|b| {
            let design = if b == 0 {
                first.clone()
            } else {
                draw_design(&model, reduced.view(), draw_seed(b))?
            };
            run_draw(&design, y, lambda, params.pvalue_mode)
        })
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<f64>> = draws.iter().map(|d| d.pvalues.clone()).collect();
    let aggregated_p = quantile_aggregate(&PValueMatrix::from_rows(&rows)?, params.gamma)?;
    let cluster_q = bhq_qvalues(&aggregated_p)?;
    let voxel_q = broadcast_qvalues(&cluster_q, &clustering)?;
    Ok(ClusteringTrace {
        clustering,
        lambda,
        draws,
        aggregated_p,
        cluster_q,
        voxel_q,
    })
}

fn draw_design(model: &KnockoffModel, reduced: ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
    knockoff_design(reduced, sample_knockoffs(model, reduced, seed)?.view())
}

fn run_draw(design: &Array2<f64>, y: ArrayView1<f64>, lambda: f64, mode: PValueMode) -> Result<DrawTrace> {
    let q = design.ncols() / 2;
    let (orig, knock) = design.view().split_at(Axis(1), q);
    let (z, fit) = lcd_fit(orig, knock, y, lambda)?;
    let pvalues = knockoff_pvalues_with(&z, mode)?;
    Ok(DrawTrace {
        coef_signs: fit.w_hat.iter().take(q).map(|&w| sign_of(w)).collect(),
        lasso_converged: fit.converged,
        z,
        pvalues,
    })
}
