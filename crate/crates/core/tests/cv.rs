use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ecko::linmodel::{
    alpha_grid, alpha_max, center, lasso_cv_lambda, lasso_fit, standardize_columns, DEFAULT_CV_FOLDS, DEFAULT_CV_GRID,
    DEFAULT_MAX_ITERS, DEFAULT_TOL,
};

fn problem(seed: u64, n: usize, p: usize) -> (Array2<f64>, Array1<f64>, ChaCha8Rng) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| rng.sample(StandardNormal));
    let noise: Array1<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    (standardize_columns(x.view()).unwrap(), noise, rng)
}

#[test]
fn pure_noise_prefers_heavy_shrinkage() {
    let mut upper = 0;
    for seed in 0..50 {
        let (d, y, _) = problem(seed, 100, 50);
        let y = center(y.view());
        let alpha = lasso_cv_lambda(d.view(), y.view(), DEFAULT_CV_FOLDS, DEFAULT_CV_GRID, seed).unwrap();
        let grid = alpha_grid(alpha_max(d.view(), y.view()), DEFAULT_CV_GRID);
        // the grid is descending, so its first half holds the larger penalties
        if alpha >= grid[DEFAULT_CV_GRID / 2 - 1] {
            upper += 1;
        }
    }
    assert!(upper > 25, "only {upper}/50 seeds chose the upper half");
}

#[test]
fn strong_signal_is_recovered() {
    for seed in 0..10 {
        let (d, noise, mut rng) = problem(200 + seed, 100, 50);
        let j = rng.random_range(0..50);
        let y = center((&d.column(j).mapv(|v| 4.0 * v) + &noise.mapv(|v| 0.5 * v)).view());
        let alpha = lasso_cv_lambda(d.view(), y.view(), DEFAULT_CV_FOLDS, DEFAULT_CV_GRID, seed).unwrap();
        let fit = lasso_fit(d.view(), y.view(), alpha * 100.0, DEFAULT_TOL, DEFAULT_MAX_ITERS).unwrap();
        assert!(fit.converged);
        let top = fit
            .w_hat
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0;
        assert_eq!(top, j);
        assert!(fit.w_hat[j] > 0.0);
    }
}

#[test]
fn selection_lies_on_the_grid() {
    let (d, y, _) = problem(9, 60, 20);
    let y = center(y.view());
    let alpha = lasso_cv_lambda(d.view(), y.view(), 3, 7, 1).unwrap();
    let grid = alpha_grid(alpha_max(d.view(), y.view()), 7);
    assert!(grid.contains(&alpha));
}
