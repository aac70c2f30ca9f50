//! Multiple-testing utilities: quantile aggregation of p-values over
//! repeated knockoff draws, Benjamini-Hochberg q-values and thresholding.

use std::collections::BTreeSet;

use ndarray::{Array2, ArrayView2};

use crate::error::{EckoError, Result};

pub const DEFAULT_GAMMA: f64 = 0.5;

/// `B x q` matrix of per-draw p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct PValueMatrix {
    values: Array2<f64>,
}

impl PValueMatrix {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 {
            return Err(EckoError::arg("need at least one draw"));
        }
        if values.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(EckoError::arg("p-values must lie in [0, 1]"));
        }
        Ok(PValueMatrix { values })
    }

    /// Stacks one p-value vector per draw.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let q = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != q) {
            return Err(EckoError::dims("p-value rows differ in length"));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let values = Array2::from_shape_vec((rows.len(), q), flat).expect("checked shape");
        Self::new(values)
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn n_draws(&self) -> usize {
        self.values.nrows()
    }
}

/// Fixed-`gamma` quantile aggregation: `min(1, Q_gamma(p^(b)) / gamma)` per
/// column, where `Q_gamma` is the lower empirical quantile (order statistic
/// `ceil(gamma * B)`).
pub fn quantile_aggregate(pvals: &PValueMatrix, gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(EckoError::arg(format!("gamma must be in (0, 1), got {gamma}")));
    }
    let b = pvals.n_draws();
    let rank = ((gamma * b as f64).ceil() as usize).clamp(1, b);
    Ok(pvals
        .view()
        .columns()
        .into_iter()
        .map(|col| {
            let mut v = col.to_vec();
            let (_, kth, _) = v.select_nth_unstable_by(rank - 1, f64::total_cmp);
            (*kth / gamma).min(1.0)
        })
        .collect())
}

/// Benjamini-Hochberg adjusted p-values:
/// `q_(i) = min_{k >= i} m p_(k) / k`, capped at one.
pub fn bhq_qvalues(pvals: &[f64]) -> Result<Vec<f64>> {
    if let Some(p) = pvals.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(EckoError::arg(format!("p-value {p} outside [0, 1]")));
    }
    let m = pvals.len();
    let mut order: Vec<usize> = (0..m).collect();
    // stable sort keeps original index order among ties
    order.sort_by(|&a, &b| pvals[a].total_cmp(&pvals[b]));
    let mut q = vec![0.0; m];
    let mut running = 1.0f64;
    for (rank, &i) in order.iter().enumerate().rev() {
        let adjusted = pvals[i] * m as f64 / (rank + 1) as f64;
        running = running.min(adjusted);
        q[i] = running;
    }
    Ok(q)
}

/// Indices whose q-value is at most `alpha` (inclusive).
pub fn threshold_select(qvals: &[f64], alpha: f64) -> BTreeSet<usize> {
    qvals
        .iter()
        .enumerate()
        .filter(|(_, &q)| q <= alpha)
        .map(|(j, _)| j)
        .collect()
}
