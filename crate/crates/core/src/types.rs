use std::collections::BTreeSet;

use ndarray::{Array1, Array2};

use crate::error::{EckoError, Result};
use crate::geometry::GridGeometry;

/// Design matrix, response and optional voxel geometry for one regression
/// problem `y = X w* + sigma * eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    geometry: Option<GridGeometry>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, geometry: Option<GridGeometry>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(EckoError::dims(format!(
                "X has {} rows but y has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        if let Some(j) = x
            .columns()
            .into_iter()
            .position(|col| col.iter().any(|v| !v.is_finite()))
        {
            return Err(EckoError::arg(format!("column {j} of X has a non-finite entry")));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(EckoError::arg("y has a non-finite entry"));
        }
        if let Some(g) = &geometry {
            if g.n_features() != x.ncols() {
                return Err(EckoError::dims(format!(
                    "X has {} columns but the mask has {} active voxels",
                    x.ncols(),
                    g.n_features()
                )));
            }
        }
        Ok(Dataset { x, y, geometry })
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn geometry(&self) -> Option<&GridGeometry> {
        self.geometry.as_ref()
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Copy with rows reordered by `order` (a permutation of `0..n`).
    pub fn permute_rows(&self, order: &[usize]) -> Result<Self> {
        let n = self.n_samples();
        let mut seen = vec![false; n];
        if order.len() != n || order.iter().any(|&i| i >= n || std::mem::replace(&mut seen[i], true)) {
            return Err(EckoError::arg("row order is not a permutation"));
        }
        let x = self.x.select(ndarray::Axis(0), order);
        let y = order.iter().map(|&i| self.y[i]).collect();
        Ok(Dataset {
            x,
            y,
            geometry: self.geometry.clone(),
        })
    }
}

/// The generating weights of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    w_star: Array1<f64>,
    sigma: f64,
    support: BTreeSet<usize>,
}

impl GroundTruth {
    pub fn new(w_star: Array1<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(EckoError::arg(format!("noise level must be positive, got {sigma}")));
        }
        let support = w_star
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(k, _)| k)
            .collect();
        Ok(GroundTruth { w_star, sigma, support })
    }

    pub fn w_star(&self) -> &Array1<f64> {
        &self.w_star
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn support(&self) -> &BTreeSet<usize> {
        &self.support
    }
}

/// Voxel-level output of an inference run.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub q_tilde: Vec<f64>,
    pub selected: BTreeSet<usize>,
    pub signs: Vec<i8>,
    pub alpha: f64,
}

impl SelectionResult {
    /// Thresholds `q_tilde` at `alpha` and masks `signs` outside the selection.
    pub fn new(q_tilde: Vec<f64>, mut signs: Vec<i8>, alpha: f64) -> Result<Self> {
        if signs.len() != q_tilde.len() {
            return Err(EckoError::dims("signs and q-values differ in length"));
        }
        let selected = crate::multtest::threshold_select(&q_tilde, alpha);
        for (k, s) in signs.iter_mut().enumerate() {
            if !selected.contains(&k) {
                *s = 0;
            }
        }
        Ok(SelectionResult {
            q_tilde,
            selected,
            signs,
            alpha,
        })
    }
}
