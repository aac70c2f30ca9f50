//! Lasso by cyclic coordinate descent, plus K-fold cross-validation of the
//! penalty.
//!
//! The solver minimizes `0.5 * ||y - D w||^2 + lambda * ||w||_1` without an
//! intercept; callers center `y` and the columns of `D` beforehand.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{EckoError, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITERS: usize = 1000;
pub const DEFAULT_CV_FOLDS: usize = 5;
pub const DEFAULT_CV_GRID: usize = 20;

/// Ratio between the largest and smallest penalty of the CV grid.
const CV_GRID_SPAN: f64 = 1000.0;
/// KKT tolerance of the CV path fits, relative to the fold's largest useful penalty.
const CV_REL_TOL: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub w_hat: Array1<f64>,
    pub lambda: f64,
    /// Number of full coordinate sweeps performed.
    pub n_iters: usize,
    pub converged: bool,
    /// Largest per-coordinate KKT violation at `w_hat`.
    pub kkt_violation: f64,
    /// Objective value after each sweep, starting with the initial point.
    pub objective_trace: Vec<f64>,
}

/// Column-major copy of a design with cached squared column norms.
struct Columns {
    n: usize,
    data: Vec<f64>,
    sq_norms: Vec<f64>,
}

impl Columns {
    fn new(design: ArrayView2<f64>) -> Self {
        let (n, m) = design.dim();
        let mut data = Vec::with_capacity(n * m);
        for col in design.columns() {
            data.extend(col.iter().copied());
        }
        let sq_norms = data.chunks_exact(n.max(1)).map(|c| dot(c, c)).collect();
        Columns { n, data, sq_norms }
    }

    fn m(&self) -> usize {
        self.sq_norms.len()
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    fn residual(&self, y: &[f64], w: &[f64]) -> Vec<f64> {
        let mut r = y.to_vec();
        for (j, &wj) in w.iter().enumerate() {
            if wj != 0.0 {
                axpy(-wj, self.col(j), &mut r);
            }
        }
        r
    }

    fn kkt(&self, r: &[f64], w: &[f64], lambda: f64) -> f64 {
        (0..self.m())
            .map(|j| {
                let g = dot(self.col(j), r);
                if w[j] != 0.0 {
                    (g - lambda * w[j].signum()).abs()
                } else {
                    (g.abs() - lambda).max(0.0)
                }
            })
            .fold(0.0, f64::max)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

fn objective_from_residual(r: &[f64], w: &[f64], lambda: f64) -> f64 {
    0.5 * dot(r, r) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Cyclic coordinate descent. Zero-norm columns keep a zero coefficient.
fn solve(cols: &Columns, y: &[f64], lambda: f64, tol: f64, max_iters: usize, w0: Vec<f64>) -> LassoFit {
    let mut w = w0;
    let mut r = cols.residual(y, &w);
    let mut trace = vec![objective_from_residual(&r, &w, lambda)];
    let mut kkt = cols.kkt(&r, &w, lambda);
    let mut sweeps = 0;
    while kkt > tol && sweeps < max_iters {
        for (j, wj) in w.iter_mut().enumerate() {
            let nj = cols.sq_norms[j];
            if nj == 0.0 {
                continue;
            }
            let col = cols.col(j);
            let old = *wj;
            let rho = dot(col, &r) + nj * old;
            let new = soft_threshold(rho, lambda) / nj;
            if new != old {
                axpy(old - new, col, &mut r);
                *wj = new;
            }
        }
        sweeps += 1;
        // refresh the residual so accumulated rounding never masks a violation
        r = cols.residual(y, &w);
        trace.push(objective_from_residual(&r, &w, lambda));
        kkt = cols.kkt(&r, &w, lambda);
    }
    LassoFit {
        w_hat: Array1::from(w),
        lambda,
        n_iters: sweeps,
        converged: kkt <= tol,
        kkt_violation: kkt,
        objective_trace: trace,
    }
}

fn check_inputs(design: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<()> {
    if design.nrows() != y.len() {
        return Err(EckoError::dims(format!(
            "design has {} rows, response has {}",
            design.nrows(),
            y.len()
        )));
    }
    if design.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(EckoError::arg("non-finite value in lasso input"));
    }
    Ok(())
}

/// Solves the lasso at a single penalty.
///
/// `converged` is true iff the largest KKT violation is at most `tol` after at
/// most `max_iters` sweeps. An all-zero column is rejected.
pub fn lasso_fit(
    design: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<LassoFit> {
    lasso_fit_warm(design, y, lambda, tol, max_iters, None)
}

/// [`lasso_fit`] started from `init` instead of the zero vector.
pub fn lasso_fit_warm(
    design: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    tol: f64,
    max_iters: usize,
    init: Option<ArrayView1<f64>>,
) -> Result<LassoFit> {
    check_inputs(design, y)?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(EckoError::arg(format!("lambda must be positive, got {lambda}")));
    }
    if !(tol > 0.0) {
        return Err(EckoError::arg(format!("tolerance must be positive, got {tol}")));
    }
    let cols = Columns::new(design);
    if let Some(j) = cols.sq_norms.iter().position(|&s| s == 0.0) {
        return Err(EckoError::arg(format!("design column {j} is all zeros")));
    }
    let w0 = match init {
        Some(w) if w.len() != cols.m() => {
            return Err(EckoError::dims("warm start has the wrong length"));
        }
        Some(w) => w.to_vec(),
        None => vec![0.0; cols.m()],
    };
    let y = y.to_vec();
    Ok(solve(&cols, &y, lambda, tol, max_iters, w0))
}

/// Largest per-coordinate KKT violation of `w` for the lasso at `lambda`.
pub fn kkt_violation(design: ArrayView2<f64>, y: ArrayView1<f64>, w: ArrayView1<f64>, lambda: f64) -> f64 {
    let r = &y - &design.dot(&w);
    let g = design.t().dot(&r);
    g.iter()
        .zip(w.iter())
        .map(|(&gj, &wj)| {
            if wj != 0.0 {
                (gj - lambda * wj.signum()).abs()
            } else {
                (gj.abs() - lambda).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// `0.5 * ||y - D w||^2 + lambda * ||w||_1`.
pub fn lasso_objective(design: ArrayView2<f64>, y: ArrayView1<f64>, w: ArrayView1<f64>, lambda: f64) -> f64 {
    let r = &y - &design.dot(&w);
    0.5 * r.dot(&r) + lambda * w.iter().map(|v| v.abs()).sum::<f64>()
}

/// Per-sample penalty above which the lasso solution is identically zero:
/// `max_j |D_j^T y| / n`.
pub fn alpha_max(design: ArrayView2<f64>, y: ArrayView1<f64>) -> f64 {
    let n = design.nrows().max(1) as f64;
    design.t().dot(&y).iter().fold(0.0f64, |acc, v| acc.max(v.abs())) / n
}

/// Descending log-spaced grid from `alpha_max` down to `alpha_max / 1000`.
pub fn alpha_grid(alpha_max: f64, grid_size: usize) -> Vec<f64> {
    if grid_size == 1 {
        return vec![alpha_max];
    }
    let step = CV_GRID_SPAN.ln() / (grid_size - 1) as f64;
    (0..grid_size).map(|i| alpha_max * (-(i as f64) * step).exp()).collect()
}

/// Selects a per-sample penalty by K-fold cross-validation.
///
/// The returned value is on the per-sample scale (`lambda / n`), matching the
/// grid `[alpha_max / 1000, alpha_max]`; fit the full data with
/// `lasso_fit(.., alpha * n, ..)`. Each fold is centered with its own training
/// means. Ties in held-out error go to the larger penalty.
pub fn lasso_cv_lambda(
    design: ArrayView2<f64>,
    y: ArrayView1<f64>,
    n_folds: usize,
    grid_size: usize,
    seed: u64,
) -> Result<f64> {
    check_inputs(design, y)?;
    let n = design.nrows();
    if n_folds < 2 {
        return Err(EckoError::arg(format!("need at least 2 folds, got {n_folds}")));
    }
    if n < n_folds {
        return Err(EckoError::arg(format!("{n} samples cannot fill {n_folds} folds")));
    }
    if grid_size == 0 {
        return Err(EckoError::arg("grid size must be positive"));
    }
    let a_max = alpha_max(design, y);
    if !(a_max > 0.0) {
        return Err(EckoError::arg(
            "response is orthogonal to every column; no penalty to select",
        ));
    }
    let grid = alpha_grid(a_max, grid_size);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let folds: Vec<Vec<usize>> = (0..n_folds)
        .map(|f| {
            let (lo, hi) = (f * n / n_folds, (f + 1) * n / n_folds);
            let mut idx = order[lo..hi].to_vec();
            idx.sort_unstable();
            idx
        })
        .collect();

    let errors: Vec<Vec<f64>> = folds
        .par_iter()
        .map(|test| fold_errors(design, y, test, &grid))
        .collect();

    let mut best = (f64::INFINITY, grid[0]);
    for (i, &alpha) in grid.iter().enumerate() {
        let mse = errors.iter().map(|e| e[i]).sum::<f64>() / n_folds as f64;
        if mse < best.0 {
            best = (mse, alpha);
        }
    }
    Ok(best.1)
}

/// Held-out mean squared error along the grid for one fold.
fn fold_errors(design: ArrayView2<f64>, y: ArrayView1<f64>, test: &[usize], grid: &[f64]) -> Vec<f64> {
    let n = design.nrows();
    let mut is_test = vec![false; n];
    for &i in test {
        is_test[i] = true;
    }
    let train: Vec<usize> = (0..n).filter(|&i| !is_test[i]).collect();
    let n_train = train.len() as f64;

    let xtr = design.select(ndarray::Axis(0), &train);
    let xte = design.select(ndarray::Axis(0), test);
    let col_means = xtr.mean_axis(ndarray::Axis(0)).expect("non-empty training fold");
    let y_mean = train.iter().map(|&i| y[i]).sum::<f64>() / n_train;
    let xtr = xtr - &col_means;
    let xte = xte - &col_means;
    let ytr: Vec<f64> = train.iter().map(|&i| y[i] - y_mean).collect();
    let yte: Vec<f64> = test.iter().map(|&i| y[i] - y_mean).collect();

    let cols = Columns::new(xtr.view());
    let fold_lambda_max = (0..cols.m()).map(|j| dot(cols.col(j), &ytr).abs()).fold(0.0, f64::max);
    let tol = (CV_REL_TOL * fold_lambda_max).max(f64::MIN_POSITIVE);

    let mut w = vec![0.0; cols.m()];
    grid.iter()
        .map(|&alpha| {
            let fit = solve(&cols, &ytr, alpha * n_train, tol, DEFAULT_MAX_ITERS, w.clone());
            w = fit.w_hat.to_vec();
            let pred = xte.dot(&fit.w_hat);
            pred.iter().zip(&yte).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / yte.len() as f64
        })
        .collect()
}

/// Centers and scales every column to zero mean and unit (population)
/// variance. Returns the error index of a constant column.
pub fn standardize_columns(x: ArrayView2<f64>) -> Result<ndarray::Array2<f64>> {
    let mut out = x.to_owned();
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        let n = col.len() as f64;
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        let sd = (col.dot(&col) / n).sqrt();
        if !(sd > 0.0) {
            return Err(EckoError::arg(format!("column {j} has zero variance")));
        }
        col.mapv_inplace(|v| v / sd);
    }
    Ok(out)
}

/// `y` minus its mean.
pub fn center(y: ArrayView1<f64>) -> Array1<f64> {
    let mean = y.mean().unwrap_or(0.0);
    y.mapv(|v| v - mean)
}
