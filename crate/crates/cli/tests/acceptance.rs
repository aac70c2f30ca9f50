//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use nalgebra::DMatrix;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ecko::knockoff::{fit_knockoff_model, knockoff_design, lcd_fit, sample_knockoffs};
use ecko::linmodel::{alpha_max, kkt_violation, lasso_fit, DEFAULT_MAX_ITERS, DEFAULT_TOL};
use ecko::metrics::{
    cell_data_seed, cell_master_seed, delta_fdp, fdp, jaccard, pr_curve, snr_sweep, BenchmarkReport, Method,
};
use ecko::multtest::{bhq_qvalues, quantile_aggregate, threshold_select, PValueMatrix};
use ecko::simdata::{generate_synthetic, SimulationSpec};
use ecko::{EckoParams, GridGeometry};

const SNR_GRID: [f64; 4] = [0.5, 2.0, 8.0, 32.0];
const N_SEEDS: usize = 20;
const ALPHA: f64 = 0.1;
const BASE_SEED: u64 = 0;
const MASTER_SEED: u64 = 0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn desk_spec() -> SimulationSpec {
    SimulationSpec {
        seed: BASE_SEED,
        ..SimulationSpec::new([16, 16, 16], 100, 2, 4)
    }
}

fn desk_params() -> EckoParams {
    EckoParams {
        n_clusters: 100,
        n_draws: 10,
        n_clusterings: 10,
        alpha: ALPHA,
        master_seed: MASTER_SEED,
        ..EckoParams::default()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn criterion_1(report: &BenchmarkReport) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for &snr in &SNR_GRID {
        let a = report.aggregate(Method::Ecko, snr).expect("cell present");
        let ok = a.n_failed == 0 && a.delta_fdp_mean <= ALPHA + 2.0 * a.delta_fdp_se;
        pass &= ok;
        parts.push(format!(
            "snr {snr}: {:.3}±{:.3}{}",
            a.delta_fdp_mean,
            a.delta_fdp_se,
            if a.n_failed > 0 {
                format!(" ({} failed)", a.n_failed)
            } else {
                String::new()
            }
        ));
    }
    Outcome {
        pass,
        detail: format!("ECKO mean delta-FDP vs {ALPHA} + 2 SE; {}", parts.join(", ")),
    }
}

fn criterion_2(report: &BenchmarkReport) -> Outcome {
    let snr_index = SNR_GRID.len() - 1;
    let snr = SNR_GRID[snr_index];
    let ecko = report.aggregate(Method::Ecko, snr).expect("cell present");
    let cko = report.aggregate(Method::Cko, snr).expect("cell present");

    // rerun each seed's dataset with an independent master seed and compare
    // the two selections of the same method
    let spec = desk_spec();
    let params = desk_params();
    let mut jac = [Vec::new(), Vec::new()];
    for seed in 0..N_SEEDS {
        let (dataset, _) = generate_synthetic(&SimulationSpec {
            target_snr: snr,
            seed: cell_data_seed(spec.seed, snr_index, seed),
            ..spec.clone()
        })
        .expect("simulation");
        let rerun = EckoParams {
            master_seed: cell_master_seed(MASTER_SEED + 1, snr_index, seed),
            ..params.clone()
        };
        for (slot, method) in [Method::Ecko, Method::Cko].into_iter().enumerate() {
            let first = &report
                .records_for(method, snr)
                .find(|r| r.seed == seed)
                .expect("record present")
                .selected;
            let (second, _) = method.run(&dataset, &rerun).expect("rerun");
            jac[slot].push(jaccard(first, &second.selected));
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (j_ecko, j_cko) = (mean(&jac[0]), mean(&jac[1]));
    Outcome {
        pass: cko.delta_fdp_mean > ecko.delta_fdp_mean && j_cko < j_ecko,
        detail: format!(
            "snr {snr}: delta-FDP CKO {:.3} vs ECKO {:.3}; Jaccard CKO {j_cko:.3} vs ECKO {j_ecko:.3}",
            cko.delta_fdp_mean, ecko.delta_fdp_mean
        ),
    }
}

fn criterion_3(report: &BenchmarkReport) -> Outcome {
    let snr = 8.0;
    let a = report.aggregate(Method::Ecko, snr).expect("cell present");
    let auc = |method: Method, seed: usize| {
        report
            .records_for(method, snr)
            .find(|r| r.seed == seed)
            .and_then(|r| r.outcome.as_ref().ok())
            .map(|s| s.pr_auc)
    };
    let wins = (0..N_SEEDS)
        .filter(|&s| matches!((auc(Method::Ecko, s), auc(Method::Cko, s)), (Some(e), Some(c)) if e >= c))
        .count();
    Outcome {
        pass: a.recall_mean >= 0.2 && a.precision_mean >= 0.8 && wins >= 15,
        detail: format!(
            "snr {snr}: ECKO recall {:.3} (>= 0.2), precision {:.3} (>= 0.8), AUC >= CKO in {wins}/{N_SEEDS} seeds (>= 15)",
            a.recall_mean, a.precision_mean
        ),
    }
}

/// Largest `k` with `#{i : p_i m / k <= alpha} >= k`, then every hypothesis
/// passing at that `k`.
fn step_up_oracle(p: &[f64], alpha: f64) -> BTreeSet<usize> {
    let m = p.len();
    let passing = |k: usize| -> BTreeSet<usize> { (0..m).filter(|&i| p[i] * m as f64 / k as f64 <= alpha).collect() };
    for k in (1..=m).rev() {
        let s = passing(k);
        if s.len() >= k {
            return s;
        }
    }
    BTreeSet::new()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let alphas: Vec<f64> = (1..=20).map(|i| i as f64 * 0.01).collect();
    let (mut cases, mut agree) = (0usize, 0usize);
    for vector in 0..1000 {
        let m = rng.random_range(1..=10);
        // half the vectors sit on a coarse grid so ties and boundary hits occur
        let p: Vec<f64> = if vector % 2 == 0 {
            (0..m).map(|_| rng.random::<f64>()).collect()
        } else {
            (0..m).map(|_| rng.random_range(0..=40) as f64 * 0.005).collect()
        };
        let q = bhq_qvalues(&p).expect("valid p-values");
        for &alpha in &alphas {
            cases += 1;
            if threshold_select(&q, alpha) == step_up_oracle(&p, alpha) {
                agree += 1;
            }
        }
    }
    Outcome {
        pass: agree == cases,
        detail: format!("{agree}/{cases} (p-vector, alpha) cases match exhaustive step-up"),
    }
}

fn criterion_5() -> Outcome {
    let (q, n) = (10, 50_000);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = DMatrix::from_fn(q, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma = &a * a.transpose() / q as f64 + DMatrix::identity(q, q) * 0.2;
    let chol = sigma.clone().cholesky().expect("positive definite");
    let z = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal));
    let xm = z * chol.l().transpose();
    let x = Array2::from_shape_fn((n, q), |(i, j)| xm[(i, j)]);

    let model = fit_knockoff_model(x.view()).expect("knockoff model");
    let xk = sample_knockoffs(&model, x.view(), 55).expect("knockoffs");
    let joint = ndarray::concatenate(ndarray::Axis(1), &[x.view(), xk.view()]).expect("same rows");
    let means = joint.mean_axis(ndarray::Axis(0)).expect("non-empty");
    let centered = &joint - &means;
    let gram = centered.t().dot(&centered) / n as f64;

    let s = &model.s;
    let sh = &model.sigma_hat;
    let mut dev: f64 = 0.0;
    for i in 0..q {
        for j in 0..q {
            let d = if i == j { s[i] } else { 0.0 };
            dev = dev
                .max((gram[[i, j]] - sh[[i, j]]).abs())
                .max((gram[[q + i, q + j]] - sh[[i, j]]).abs())
                .max((gram[[i, q + j]] - (sh[[i, j]] - d)).abs());
        }
    }
    let s_min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    Outcome {
        pass: dev <= 0.05 && s_min > 0.0,
        detail: format!("max |Gram - target| = {dev:.4} (<= 0.05), min s = {s_min:.3}"),
    }
}

fn soft(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut max_err: f64 = 0.0;
    let mut max_kkt: f64 = 0.0;
    let (mut fits, mut converged) = (0usize, 0usize);
    let mut record = |d: &Array2<f64>, y: &Array1<f64>, lambda: f64, w: &Array1<f64>, ok: bool| {
        fits += 1;
        if ok {
            converged += 1;
            max_kkt = max_kkt.max(kkt_violation(d.view(), y.view(), w.view(), lambda));
        }
    };

    // orthonormal designs: the solution is soft-thresholding of D'y
    for _ in 0..100 {
        let p = rng.random_range(2..=30);
        let n = rng.random_range(p..=80);
        let g = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qm = g.qr().q();
        let d = Array2::from_shape_fn((n, p), |(i, j)| qm[(i, j)]);
        let y: Array1<f64> = (0..n).map(|_| 3.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let dty = d.t().dot(&y);
        let lambda = rng.random_range(0.01..1.2) * dty.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let fit = lasso_fit(d.view(), y.view(), lambda, DEFAULT_TOL, DEFAULT_MAX_ITERS).expect("fit");
        for j in 0..p {
            max_err = max_err.max((fit.w_hat[j] - soft(dty[j], lambda)).abs());
        }
        record(&d, &y, lambda, &fit.w_hat, fit.converged);
    }

    // correlated random designs across the penalty path
    for _ in 0..50 {
        let (n, p) = (40, 80);
        let base = gaussian(&mut rng, n, p);
        let mut d = base.clone();
        for j in 1..p {
            let prev = d.column(j - 1).to_owned();
            d.column_mut(j).scaled_add(0.6, &prev);
        }
        let mut y: Array1<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        y.scaled_add(2.0, &d.column(3));
        y.scaled_add(-1.5, &d.column(40));
        let lmax = alpha_max(d.view(), y.view()) * n as f64;
        for frac in [0.5, 0.1, 0.01] {
            let fit = lasso_fit(d.view(), y.view(), frac * lmax, DEFAULT_TOL, DEFAULT_MAX_ITERS).expect("fit");
            record(&d, &y, frac * lmax, &fit.w_hat, fit.converged);
        }
    }

    // knockoff designs as the pipeline builds them
    for seed in 0..10 {
        let n = 100;
        let x = gaussian(&mut rng, n, 30);
        let mut y: Array1<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        y.scaled_add(1.0, &x.column(0));
        let model = fit_knockoff_model(x.view()).expect("model");
        let xk = sample_knockoffs(&model, x.view(), seed).expect("knockoffs");
        let design = knockoff_design(x.view(), xk.view()).expect("design");
        let q = x.ncols();
        let (xs, xks) = (design.slice(ndarray::s![.., ..q]), design.slice(ndarray::s![.., q..]));
        let yc = &y - y.mean().unwrap();
        let lambda = 0.1 * alpha_max(design.view(), yc.view()) * n as f64;
        let (_, fit) = lcd_fit(xs, xks, yc.view(), lambda).expect("lcd");
        record(&design, &yc, lambda, &fit.w_hat, fit.converged);
    }

    Outcome {
        pass: max_err <= 1e-6 && max_kkt <= 1e-6,
        detail: format!(
            "closed-form max error {max_err:.2e} over 100 instances (<= 1e-6); KKT max {max_kkt:.2e} over {converged}/{fits} converged fits (<= 1e-6)"
        ),
    }
}

fn criterion_7() -> Outcome {
    let (b, trials) = (25, 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let values = Array2::from_shape_fn((b, trials), |_| rng.random::<f64>());
    let agg = quantile_aggregate(&PValueMatrix::new(values).expect("matrix"), 0.5).expect("aggregate");
    let mut pass = true;
    let mut parts = Vec::new();
    for alpha in [0.05, 0.1] {
        let rate = agg.iter().filter(|&&p| p <= alpha).count() as f64 / trials as f64;
        let bound = alpha + 3.0 * (alpha * (1.0 - alpha) / trials as f64).sqrt();
        pass &= rate <= bound;
        parts.push(format!("alpha {alpha}: {rate:.4} <= {bound:.4}"));
    }
    Outcome {
        pass,
        detail: parts.join(", "),
    }
}

fn run_ecko(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ecko"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .expect("output dir")
        .map(|e| {
            let e = e.expect("dir entry");
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).expect("readable"),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().expect("tempdir");
    let p = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let sim = |out: &str| {
        run_ecko(&[
            "simulate",
            "--shape",
            "12,12,12",
            "--n-samples",
            "60",
            "--n-rois",
            "2",
            "--roi-size",
            "3",
            "--snr",
            "8",
            "--seed",
            "3",
            "--out",
            out,
        ])
    };
    let manifest = format!("{}/manifest.toml", p("data"));
    let infer = |out: &str, threads: &str| {
        run_ecko(&[
            "infer",
            "--data",
            &manifest,
            "--n-clusters",
            "60",
            "--n-draws",
            "5",
            "--n-clusterings",
            "6",
            "--seed",
            "11",
            "--threads",
            threads,
            "--out",
            out,
        ])
    };
    let steps = sim(&p("data"))
        .and_then(|_| sim(&p("data2")))
        .and_then(|_| infer(&p("a"), "4"))
        .and_then(|_| infer(&p("b"), "4"))
        .and_then(|_| infer(&p("c"), "1"));
    if let Err(e) = steps {
        return Outcome { pass: false, detail: e };
    }
    let a = dir_contents(&tmp.path().join("a"));
    let b = dir_contents(&tmp.path().join("b"));
    let c = dir_contents(&tmp.path().join("c"));
    let sims_equal = dir_contents(&tmp.path().join("data")) == dir_contents(&tmp.path().join("data2"));
    let table = |files: &[(String, Vec<u8>)]| files.iter().find(|(n, _)| n == "selection.tsv").map(|(_, v)| v.clone());
    let rows = table(&a).map(|t| t.iter().filter(|&&ch| ch == b'\n').count().saturating_sub(1));
    let repeat_equal = a == b;
    let threads_equal = table(&a).is_some() && table(&a) == table(&c);
    Outcome {
        pass: repeat_equal && threads_equal && sims_equal,
        detail: format!(
            "repeat run byte-identical: {repeat_equal} ({} files); --threads 1 vs 4 selection identical: {threads_equal} ({} rows); simulate repeat identical: {sims_equal}",
            a.len(),
            rows.unwrap_or(0)
        ),
    }
}

fn random_subset(rng: &mut ChaCha8Rng, p: usize, rate: f64) -> BTreeSet<usize> {
    (0..p).filter(|_| rng.random::<f64>() < rate).collect()
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut fdp_ok, mut curve_ok, mut curves) = (0usize, 0usize, 0usize);
    for _ in 0..100 {
        let shape = [
            rng.random_range(1..=8),
            rng.random_range(1..=5),
            rng.random_range(1..=5),
        ];
        let geom = GridGeometry::full(shape).expect("geometry");
        let p = geom.n_features();
        let rate = rng.random_range(0.05..0.5);
        let mut support = random_subset(&mut rng, p, rate);
        if support.is_empty() {
            support.insert(rng.random_range(0..p));
        }
        let rate = rng.random_range(0.0..0.6);
        let selected = random_subset(&mut rng, p, rate);
        if delta_fdp(&selected, &support, 0.0, &geom).expect("delta_fdp") == fdp(&selected, &support) {
            fdp_ok += 1;
        }

        let q: Vec<f64> = (0..p).map(|_| rng.random_range(0..=20) as f64 * 0.05).collect();
        let mut thresholds = q.clone();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let brute: Vec<(f64, f64, f64)> = thresholds
            .iter()
            .map(|&t| {
                let sel: Vec<usize> = (0..p).filter(|&k| q[k] <= t).collect();
                let tp = sel.iter().filter(|k| support.contains(k)).count() as f64;
                (t, tp / sel.len() as f64, tp / support.len() as f64)
            })
            .collect();
        let curve = pr_curve(&q, &support).expect("curve");
        curves += 1;
        let same = curve.len() == brute.len()
            && curve.iter().zip(&brute).all(|(pt, &(t, pr, rc))| {
                pt.threshold == t && (pt.precision - pr).abs() <= 1e-12 && (pt.recall - rc).abs() <= 1e-12
            });
        if same {
            curve_ok += 1;
        }
    }
    Outcome {
        pass: fdp_ok == 100 && curve_ok == curves,
        detail: format!("delta_fdp(0) == fdp on {fdp_ok}/100 fixtures; pr_curve == brute force on {curve_ok}/{curves} fixtures (p <= 200)"),
    }
}

fn report(index: usize, name: &str, start: Instant, outcome: &Outcome) {
    println!(
        "criterion {index} [{name}] {}: {} ({:.1} s)",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        start.elapsed().as_secs_f64()
    );
}

fn main() {
    let mut results = Vec::new();

    let start = Instant::now();
    let sweep = snr_sweep(
        &[Method::Ecko, Method::Cko],
        &SNR_GRID,
        N_SEEDS,
        &desk_spec(),
        &desk_params(),
    );
    let sweep_s = start.elapsed().as_secs_f64();
    match &sweep {
        Ok(r) => println!("desk-scale sweep: {} records in {sweep_s:.1} s", r.records.len()),
        Err(e) => println!("desk-scale sweep failed: {e}"),
    }
    type Check<'a> = Box<dyn Fn() -> Outcome + 'a>;
    let sweep = &sweep;
    let swept = |f: fn(&BenchmarkReport) -> Outcome| -> Check<'_> {
        Box::new(move || match sweep {
            Ok(r) => f(r),
            Err(e) => Outcome {
                pass: false,
                detail: format!("sweep failed: {e}"),
            },
        })
    };
    let criteria: Vec<(&str, Check)> = vec![
        ("delta-FDR control", swept(criterion_1)),
        ("CKO instability", swept(criterion_2)),
        ("sensitivity", swept(criterion_3)),
        ("BHq oracle equivalence", Box::new(criterion_4)),
        ("knockoff exchangeability", Box::new(criterion_5)),
        ("lasso correctness", Box::new(criterion_6)),
        ("aggregation validity", Box::new(criterion_7)),
        ("determinism", Box::new(criterion_8)),
        ("metric identities", Box::new(criterion_9)),
    ];
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        report(i + 1, name, t, &outcome);
        results.push(outcome.pass);
    }
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
