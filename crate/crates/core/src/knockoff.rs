//! Gaussian model-X knockoffs, the lasso-coefficient-difference statistic and
//! the intermediate knockoff p-values.
//!
//! Knockoffs are drawn from the Gaussian conditional
//! `X~ | X ~ N(mu + (X - mu)(I - S^-1 D), 2D - D S^-1 D)` where `S` is a
//! shrunk covariance estimate and `D = diag(s)` the equicorrelated
//! construction. Under that model `(X, X~)` has joint covariance
//! `[[S, S - D], [S - D, S]]`, which is invariant under swapping any subset of
//! original/knockoff pairs.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{EckoError, Result};
use crate::linmodel::{lasso_fit, LassoFit, DEFAULT_MAX_ITERS, DEFAULT_TOL};

/// Most negative eigenvalue tolerated in the knockoff noise covariance.
const PSD_TOL: f64 = 1e-10;
/// Smallest eigenvalue allowed for the shrunk covariance, relative to its
/// mean variance.
const MIN_REL_EIGENVALUE: f64 = 1e-10;

fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Fitted Gaussian model for the joint law of features and their knockoffs.
#[derive(Debug, Clone)]
pub struct KnockoffModel {
    pub mu: Array1<f64>,
    pub sigma_hat: Array2<f64>,
    pub s: Array1<f64>,
    /// Ledoit-Wolf shrinkage intensity used for `sigma_hat`.
    pub shrinkage: f64,
    // I - sigma_hat^-1 diag(s)
    projection: DMatrix<f64>,
    // symmetric square root of 2 diag(s) - diag(s) sigma_hat^-1 diag(s)
    noise_factor: DMatrix<f64>,
}

impl KnockoffModel {
    /// Assembles a model from explicit parameters and precomputes the sampling
    /// operators. Fails if `sigma_hat` is not symmetric positive-definite or
    /// `s` makes the joint covariance indefinite.
    pub fn new(mu: Array1<f64>, sigma_hat: Array2<f64>, s: Array1<f64>, shrinkage: f64) -> Result<Self> {
        let q = mu.len();
        if sigma_hat.dim() != (q, q) || s.len() != q {
            return Err(EckoError::dims(format!(
                "model parts disagree: mu {q}, sigma {:?}, s {}",
                sigma_hat.dim(),
                s.len()
            )));
        }
        if s.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(EckoError::arg("s must be finite and nonnegative"));
        }
        let sigma = to_na(sigma_hat.view());
        if (&sigma - sigma.transpose()).amax() > 1e-12 * sigma.amax().max(1.0) {
            return Err(EckoError::arg("sigma_hat is not symmetric"));
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| EckoError::Numerical("sigma_hat is not positive-definite".into()))?;
        let sigma_inv = chol.inverse();
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(q, s.iter().copied()));
        let projection = DMatrix::identity(q, q) - &sigma_inv * &d;
        let mut noise_cov = &d * 2.0 - &d * &sigma_inv * &d;
        noise_cov = (&noise_cov + noise_cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(noise_cov);
        let lo = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        if lo < -PSD_TOL {
            return Err(EckoError::arg(format!(
                "s makes the knockoff covariance indefinite (eigenvalue {lo:e})"
            )));
        }
        let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        let noise_factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose();
        Ok(KnockoffModel {
            mu,
            sigma_hat,
            s,
            shrinkage,
            projection,
            noise_factor,
        })
    }

    pub fn n_features(&self) -> usize {
        self.mu.len()
    }

    /// `2 diag(s) - diag(s) sigma_hat^-1 diag(s)`, the conditional covariance of
    /// a knockoff row given the original row.
    pub fn conditional_covariance(&self) -> Array2<f64> {
        let root = &self.noise_factor;
        from_na(&(root * root))
    }
}

/// Ledoit-Wolf shrinkage towards a scaled identity.
///
/// Returns `(sigma_hat, rho)` with `sigma_hat = (1 - rho) S + rho * nu * I`,
/// `S` the empirical covariance of the centered rows and `nu = tr(S) / q`.
pub fn ledoit_wolf(centered: ArrayView2<f64>) -> (Array2<f64>, f64) {
    let (n, q) = centered.dim();
    let nf = n as f64;
    let emp = centered.t().dot(&centered) / nf;
    let nu = emp.diag().sum() / q as f64;

    let sq = centered.mapv(|v| v * v);
    let beta_sum = sq.t().dot(&sq).sum();
    let delta_sum = emp.iter().map(|v| v * v).sum::<f64>();
    let beta = (beta_sum / nf - delta_sum) / nf / q as f64;
    let delta = emp
        .indexed_iter()
        .map(|((i, j), &v)| if i == j { (v - nu).powi(2) } else { v * v })
        .sum::<f64>()
        / q as f64;
    let rho = if delta > 0.0 {
        (beta.max(0.0) / delta).min(1.0)
    } else {
        1.0
    };

    let shrunk = |rho: f64| {
        let mut m = emp.mapv(|v| (1.0 - rho) * v);
        m.diag_mut().mapv_inplace(|v| v + rho * nu);
        m
    };
    let mut sigma = shrunk(rho);
    // eigenvalues move linearly in rho: lambda(rho) = (1 - rho) lambda_S + rho nu
    let floor = MIN_REL_EIGENVALUE * nu;
    let lo = min_eigenvalue(&to_na(sigma.view()));
    if lo < floor {
        let emp_lo = min_eigenvalue(&to_na(emp.view()));
        let rho_needed = ((floor - emp_lo) / (nu - emp_lo)).clamp(rho, 1.0);
        sigma = shrunk(rho_needed);
        return (sigma, rho_needed);
    }
    (sigma, rho)
}

/// Fits the Gaussian knockoff model on the rows of `x` (`n x q`).
pub fn fit_knockoff_model(x: ArrayView2<f64>) -> Result<KnockoffModel> {
    let (n, q) = x.dim();
    if n < 2 {
        return Err(EckoError::arg(format!("need at least 2 samples, got {n}")));
    }
    if q == 0 {
        return Err(EckoError::arg("no features"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(EckoError::arg("non-finite value in knockoff design"));
    }
    let mu = x.mean_axis(Axis(0)).expect("n >= 2");
    let centered = &x - &mu;
    if let Some(j) = centered.columns().into_iter().position(|c| c.iter().all(|&v| v == 0.0)) {
        return Err(EckoError::arg(format!("column {j} has zero variance")));
    }
    let (sigma_hat, shrinkage) = ledoit_wolf(centered.view());
    let s = equicorrelated_s(&sigma_hat)?;
    KnockoffModel::new(mu, sigma_hat, s, shrinkage)
}

/// Equicorrelated `s_j = min(2 lambda_min(corr), 1) * sigma_jj`, shrunk until
/// `2 diag(s) - diag(s) sigma^-1 diag(s)` is PSD within tolerance.
pub fn equicorrelated_s(sigma_hat: &Array2<f64>) -> Result<Array1<f64>> {
    let q = sigma_hat.nrows();
    let sd: Vec<f64> = sigma_hat.diag().iter().map(|v| v.sqrt()).collect();
    let sigma = to_na(sigma_hat.view());
    let corr = DMatrix::from_fn(q, q, |i, j| sigma[(i, j)] / (sd[i] * sd[j]));
    let lambda_min = min_eigenvalue(&corr).max(0.0);
    let mut scale = (2.0 * lambda_min).min(1.0);

    let sigma_inv = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| EckoError::Numerical("sigma_hat is not positive-definite".into()))?
        .inverse();
    for _ in 0..200 {
        let d = DMatrix::from_fn(q, q, |i, j| if i == j { scale * sd[i] * sd[i] } else { 0.0 });
        let v = &d * 2.0 - &d * &sigma_inv * &d;
        if min_eigenvalue(&((&v + v.transpose()) * 0.5)) >= -PSD_TOL {
            return Ok(sd.iter().map(|v| scale * v * v).collect());
        }
        scale *= 0.99;
    }
    Err(EckoError::Numerical(
        "could not make the knockoff covariance positive semidefinite".into(),
    ))
}

/// Draws one knockoff copy of `x` from `model`.
pub fn sample_knockoffs(model: &KnockoffModel, x: ArrayView2<f64>, seed: u64) -> Result<Array2<f64>> {
    let (n, q) = x.dim();
    if q != model.n_features() {
        return Err(EckoError::dims(format!(
            "model has {} features, design has {q}",
            model.n_features()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = DMatrix::<f64>::zeros(n, q);
    // row-major fill so the stream layout does not depend on storage order
    for i in 0..n {
        for j in 0..q {
            noise[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let centered = to_na((&x - &model.mu).view());
    let mut out = centered * &model.projection + noise * &model.noise_factor;
    for i in 0..n {
        for j in 0..q {
            out[(i, j)] += model.mu[j];
        }
    }
    let out = from_na(&out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(EckoError::Numerical("knockoff draw produced a non-finite value".into()));
    }
    Ok(out)
}

/// Knockoff statistics `z_j`, one per original feature.
#[derive(Debug, Clone, PartialEq)]
pub struct StatVector {
    z: Vec<f64>,
}

impl StatVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.iter().any(|v| !v.is_finite()) {
            return Err(EckoError::arg("knockoff statistics must be finite"));
        }
        Ok(StatVector { z })
    }

    pub fn values(&self) -> &[f64] {
        &self.z
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Concatenates originals and knockoffs into `[x, xk]`, centering every
/// column and scaling each original/knockoff pair by their pooled standard
/// deviation so both members of a pair sit on the same scale.
pub fn knockoff_design(x: ArrayView2<f64>, xk: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.dim() != xk.dim() {
        return Err(EckoError::dims(format!(
            "originals {:?} and knockoffs {:?} differ in shape",
            x.dim(),
            xk.dim()
        )));
    }
    let q = x.ncols();
    let mut d = concatenate(Axis(1), &[x, xk]).expect("same row count");
    let n = d.nrows() as f64;
    let mut var = vec![0.0; 2 * q];
    for (j, mut col) in d.columns_mut().into_iter().enumerate() {
        let mean = col.sum() / n;
        col.mapv_inplace(|v| v - mean);
        var[j] = col.dot(&col) / n;
    }
    for j in 0..q {
        let sd = ((var[j] + var[j + q]) / 2.0).sqrt();
        if !(sd > 0.0) {
            return Err(EckoError::arg(format!(
                "feature {j} and its knockoff are both constant"
            )));
        }
        d.column_mut(j).mapv_inplace(|v| v / sd);
        d.column_mut(j + q).mapv_inplace(|v| v / sd);
    }
    Ok(d)
}

/// Lasso on `[x, xk]` as given (no rescaling) and the resulting
/// `z_j = |w_j| - |w_{j+q}|`, together with the fit itself.
pub fn lcd_fit(
    x: ArrayView2<f64>,
    xk: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
) -> Result<(StatVector, LassoFit)> {
    if x.dim() != xk.dim() {
        return Err(EckoError::dims("originals and knockoffs differ in shape"));
    }
    let q = x.ncols();
    let design = concatenate(Axis(1), &[x, xk]).expect("same row count");
    let fit = lasso_fit(design.view(), y, lambda, DEFAULT_TOL, DEFAULT_MAX_ITERS)?;
    let z = (0..q).map(|j| fit.w_hat[j].abs() - fit.w_hat[j + q].abs()).collect();
    Ok((StatVector::new(z)?, fit))
}

/// Lasso-coefficient-difference statistic on the concatenated design.
pub fn lcd_statistic(x: ArrayView2<f64>, xk: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> Result<StatVector> {
    lcd_fit(x, xk, y, lambda).map(|(z, _)| z)
}

/// How knockoff p-values are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PValueMode {
    /// `#{k : z_k <= -z_j} / q`; can be exactly zero.
    #[default]
    Plain,
    /// `(1 + #{k : z_k <= -z_j}) / (q + 1)`, never zero.
    Offset,
}

/// `p_j = #{k : z_k <= -z_j} / q`.
pub fn knockoff_pvalues(z: &StatVector) -> Result<Vec<f64>> {
    knockoff_pvalues_with(z, PValueMode::Plain)
}

pub fn knockoff_pvalues_with(z: &StatVector, mode: PValueMode) -> Result<Vec<f64>> {
    let q = z.len();
    if q == 0 {
        return Err(EckoError::arg("empty statistic vector"));
    }
    let mut sorted = z.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(z.values()
        .iter()
        .map(|&zj| {
            let count = sorted.partition_point(|&v| v <= -zj);
            match mode {
                PValueMode::Plain => count as f64 / q as f64,
                PValueMode::Offset => (count + 1) as f64 / (q + 1) as f64,
            }
        })
        .collect())
}
