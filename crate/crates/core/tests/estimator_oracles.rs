//! Estimators checked against independent oracles: a 1-D grid search over
//! the feasible segment for two classes, central finite differences for the
//! objective gradient, and closed-form confusion-matrix solves.

use labelshift::data::{gen_gaussian_mixture, posterior_matrix, GaussianMixtureSpec};
use labelshift::estimators::{
    empirical_objective, estimate_bbse, estimate_mlls_em, estimate_mlls_gd, estimate_rlls, objective_gradient,
    EstimatorOptions, Method,
};
use labelshift::metrics::linf;
use labelshift::seed::{derive_seed, rng_from_seed};
use labelshift::{LabelMarginal, ProbabilityMatrix, RatioVector, PROB_FLOOR};
use ndarray::{array, Array2};
use rand::Rng;

/// Maximizes the objective over `r = (t / tr0, (1 - t) / tr1)` on a grid of
/// `t` with spacing 1e-5. Written without the library's objective.
fn grid_oracle(rows: &Array2<f64>, tr: [f64; 2]) -> [f64; 2] {
    let steps = 100_000;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let r = [t / tr[0], (1.0 - t) / tr[1]];
        let mut ll = 0.0;
        for row in rows.outer_iter() {
            ll += (row[0] * r[0] + row[1] * r[1]).max(PROB_FLOOR).ln();
        }
        if ll > best.0 {
            best = (ll, t);
        }
    }
    [best.1 / tr[0], (1.0 - best.1) / tr[1]]
}

/// A two-class instance: calibrated posteriors on a shifted test draw.
fn instance(seed: u64) -> (ProbabilityMatrix, LabelMarginal) {
    let mut rng = rng_from_seed(seed);
    let sep = rng.random_range(1.0..4.0);
    let spec = GaussianMixtureSpec::new(array![[-sep / 2.0], [sep / 2.0]], 1.0).unwrap();
    let t0 = rng.random_range(0.2..0.8);
    let tr = LabelMarginal::new(vec![t0, 1.0 - t0]).unwrap();
    let q0 = rng.random_range(0.1..0.9);
    let te = LabelMarginal::new(vec![q0, 1.0 - q0]).unwrap();
    let n = rng.random_range(100..400);
    let test = gen_gaussian_mixture(&spec, &te, n, derive_seed(seed, &[1])).unwrap();
    (posterior_matrix(&spec, &tr, test.features()).unwrap(), tr)
}

#[test]
fn three_row_instance_matches_grid_oracle() {
    let rows = array![[0.8, 0.2], [0.8, 0.2], [0.2, 0.8]];
    let oracle = grid_oracle(&rows, [0.5, 0.5]);
    assert!((oracle[0] - 1.5556).abs() < 1e-4, "{oracle:?}");
    let preds = ProbabilityMatrix::new(rows).unwrap();
    let tr = LabelMarginal::uniform(2).unwrap();
    let em = estimate_mlls_em(&preds, &tr, &EstimatorOptions::default()).unwrap();
    let gd = estimate_mlls_gd(&preds, &tr, &EstimatorOptions::default()).unwrap();
    assert!(linf(em.ratio.ratios(), &oracle) < 1e-3);
    assert!(linf(gd.ratio.ratios(), &oracle) < 1e-3);
}

#[test]
fn symmetric_instance_gives_ones() {
    let rows = array![[0.8, 0.2], [0.2, 0.8]];
    let oracle = grid_oracle(&rows, [0.5, 0.5]);
    assert!(linf(&oracle, &[1.0, 1.0]) < 1e-4);
    let preds = ProbabilityMatrix::new(rows).unwrap();
    let tr = LabelMarginal::uniform(2).unwrap();
    let em = estimate_mlls_em(&preds, &tr, &EstimatorOptions::default()).unwrap();
    assert!(linf(em.ratio.ratios(), &[1.0, 1.0]) < 1e-9);
}

#[test]
fn two_class_solvers_match_grid_oracle() {
    let opts = EstimatorOptions::default();
    for seed in 0..20 {
        let (preds, tr) = instance(seed);
        let oracle = grid_oracle(&preds.rows().to_owned(), [tr.get(0), tr.get(1)]);
        let em = estimate_mlls_em(&preds, &tr, &opts).unwrap();
        let gd = estimate_mlls_gd(&preds, &tr, &opts).unwrap();
        assert!(
            linf(em.ratio.ratios(), &oracle) < 1e-3,
            "seed {seed}: em {:?} vs {oracle:?}",
            em.ratio.ratios()
        );
        assert!(
            linf(gd.ratio.ratios(), &oracle) < 1e-3,
            "seed {seed}: gd {:?} vs {oracle:?}",
            gd.ratio.ratios()
        );
        let gap = (em.final_objective.unwrap() - gd.final_objective.unwrap()).abs();
        assert!(gap < 1e-6, "seed {seed}: objective gap {gap}");
    }
}

fn random_rows(seed: u64, n: usize, m: usize) -> ProbabilityMatrix {
    let mut rng = rng_from_seed(seed);
    let rows = Array2::from_shape_fn((n, m), |_| rng.random_range(0.01..1.0f64).powi(3));
    let sums = rows.sum_axis(ndarray::Axis(1));
    ProbabilityMatrix::new(&rows / &sums.insert_axis(ndarray::Axis(1))).unwrap()
}

fn random_marginal(seed: u64, m: usize) -> LabelMarginal {
    let mut rng = rng_from_seed(seed);
    let w: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    LabelMarginal::from_weights(&w).unwrap()
}

#[test]
fn em_and_gd_reach_the_same_objective() {
    let opts = EstimatorOptions::default();
    for seed in 0..20 {
        let m = 3 + (seed as usize % 3);
        let preds = random_rows(seed, 200, m);
        let tr = random_marginal(seed + 1000, m);
        let em = estimate_mlls_em(&preds, &tr, &opts).unwrap();
        let gd = estimate_mlls_gd(&preds, &tr, &opts).unwrap();
        let gap = (em.final_objective.unwrap() - gd.final_objective.unwrap()).abs();
        assert!(gap < 1e-6, "seed {seed}: gap {gap}");
    }
}

#[test]
fn em_objective_never_decreases() {
    let opts = EstimatorOptions::default();
    for seed in 0..100 {
        let m = 2 + (seed as usize % 4);
        let preds = random_rows(seed, 150, m);
        let tr = random_marginal(seed + 7, m);
        let rep = estimate_mlls_em(&preds, &tr, &opts).unwrap();
        for w in rep.objective_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "seed {seed}: {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn gd_objective_never_decreases() {
    for seed in 0..20 {
        for step in [0.1, 0.05, 0.01] {
            let preds = random_rows(seed, 100, 3);
            let tr = random_marginal(seed + 3, 3);
            let opts = EstimatorOptions {
                step_size: step,
                ..EstimatorOptions::with_method(Method::MllsGd)
            };
            let rep = estimate_mlls_gd(&preds, &tr, &opts).unwrap();
            assert!(rep.objective_trace.windows(2).all(|w| w[1] >= w[0]));
        }
    }
}

#[test]
fn returned_ratios_are_feasible() {
    for seed in 0..20 {
        let preds = random_rows(seed, 80, 4);
        let tr = random_marginal(seed, 4);
        for rep in [
            estimate_mlls_em(&preds, &tr, &EstimatorOptions::default()).unwrap(),
            estimate_mlls_gd(&preds, &tr, &EstimatorOptions::default()).unwrap(),
        ] {
            let r = rep.ratio.ratios();
            assert!(r.iter().all(|&v| v >= 0.0));
            let mass: f64 = r.iter().zip(tr.probs()).map(|(a, b)| a * b).sum();
            assert!((mass - 1.0).abs() < 1e-9);
            assert!(rep.iterations_used <= 1000);
        }
    }
}

#[test]
fn objective_gradient_matches_central_differences() {
    let h = 1e-6;
    for seed in 0..10 {
        let preds = random_rows(seed, 50, 4);
        let mut rng = rng_from_seed(seed + 99);
        let r: Vec<f64> = (0..4).map(|_| rng.random_range(0.5..1.5)).collect();
        let analytic = objective_gradient(&r, &preds);
        let f = |x: &[f64]| {
            preds
                .rows()
                .outer_iter()
                .map(|p| p.iter().zip(x).map(|(a, b)| a * b).sum::<f64>().ln())
                .sum::<f64>()
                / preds.len() as f64
        };
        for c in 0..4 {
            let mut up = r.clone();
            let mut down = r.clone();
            up[c] += h;
            down[c] -= h;
            let numeric = (f(&up) - f(&down)) / (2.0 * h);
            let rel = (analytic[c] - numeric).abs() / analytic[c].abs().max(numeric.abs());
            assert!(rel < 1e-5, "seed {seed} class {c}: rel {rel}");
        }
    }
}

#[test]
fn objective_is_concave_along_segments() {
    let preds = random_rows(5, 60, 3);
    let tr = random_marginal(6, 3);
    let a = RatioVector::ones(&tr);
    let b = RatioVector::project_feasible(&[2.0, 0.5, 0.1], &tr).unwrap();
    let fa = empirical_objective(&a, &preds);
    let fb = empirical_objective(&b, &preds);
    for k in 1..10 {
        let t = k as f64 / 10.0;
        let mid: Vec<f64> = a
            .ratios()
            .iter()
            .zip(b.ratios())
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect();
        let fm = empirical_objective(&RatioVector::new(mid, tr.clone()).unwrap(), &preds);
        assert!(fm >= (1.0 - t) * fa + t * fb - 1e-12);
    }
}

#[test]
fn rlls_without_regularization_matches_bbse() {
    let spec = GaussianMixtureSpec::equidistant(3, 3, 2.5, 1.0).unwrap();
    let uniform = LabelMarginal::uniform(3).unwrap();
    let val = gen_gaussian_mixture(&spec, &uniform, 3000, 1).unwrap();
    let te = LabelMarginal::new(vec![0.6, 0.3, 0.1]).unwrap();
    let test = gen_gaussian_mixture(&spec, &te, 3000, 2).unwrap();
    let pv = posterior_matrix(&spec, &uniform, val.features()).unwrap();
    let pt = posterior_matrix(&spec, &uniform, test.features()).unwrap();
    let tr = val.empirical_marginal();
    let bbse = estimate_bbse(&pv, val.labels(), &pt, &tr).unwrap();
    let rlls = estimate_rlls(&pv, val.labels(), &pt, &tr, 0.0).unwrap();
    assert!(linf(bbse.ratio.ratios(), rlls.ratio.ratios()) < 1e-9);
    let truth = [1.8, 0.9, 0.3];
    assert!(linf(bbse.ratio.ratios(), &truth) < 0.15, "{:?}", bbse.ratio.ratios());
    let heavy = estimate_rlls(&pv, val.labels(), &pt, &tr, 1e9).unwrap();
    assert!(linf(heavy.ratio.ratios(), &[1.0; 3]) < 1e-3);
}
