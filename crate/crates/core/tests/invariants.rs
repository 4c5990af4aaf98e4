//! Randomized checks of invariants that must hold for any valid input.

use labelshift::data::{gen_gaussian_mixture_counts, GaussianMixtureSpec};
use labelshift::estimators::{empirical_objective, estimate_mlls_em, project_simplex, EstimatorOptions};
use labelshift::federated::aggregate_ratios;
use labelshift::{LabelMarginal, ProbabilityMatrix};
use ndarray::Array2;
use proptest::prelude::*;

fn marginal(m: usize) -> impl Strategy<Value = LabelMarginal> {
    prop::collection::vec(0.05f64..1.0, m).prop_map(|w| LabelMarginal::from_weights(&w).unwrap())
}

fn predictions(m: usize, n: usize) -> impl Strategy<Value = ProbabilityMatrix> {
    prop::collection::vec(0.01f64..1.0, m * n).prop_map(move |v| {
        let mut a = Array2::from_shape_vec((n, m), v).unwrap();
        for mut row in a.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|x| x / s);
        }
        ProbabilityMatrix::new(a).unwrap()
    })
}

proptest! {
    #[test]
    fn simplex_projection_lands_on_the_simplex(
        v in prop::collection::vec(-3.0f64..3.0, 2..8),
        mask in prop::collection::vec(any::<bool>(), 8),
    ) {
        let mut active = mask[..v.len()].to_vec();
        active[0] = true;
        let p = project_simplex(&v, &active);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, a) in p.iter().zip(&active) {
            prop_assert!(*x >= 0.0);
            if !a {
                prop_assert_eq!(*x, 0.0);
            }
        }
        let again = project_simplex(&p, &active);
        for (x, y) in p.iter().zip(&again) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn em_returns_feasible_ratios_and_never_decreases(
        (tr, preds) in (2usize..5).prop_flat_map(|m| (marginal(m), predictions(m, 40))),
    ) {
        let report = estimate_mlls_em(&preds, &tr, &EstimatorOptions::default()).unwrap();
        let r = report.ratio.ratios();
        let mass: f64 = r.iter().zip(tr.probs()).map(|(a, b)| a * b).sum();
        prop_assert!((mass - 1.0).abs() < 1e-9);
        prop_assert!(r.iter().all(|&x| x >= 0.0));
        for pair in report.objective_trace.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-12);
        }
        let start = empirical_objective(&labelshift::RatioVector::ones(&tr), &preds);
        prop_assert!(report.final_objective.unwrap() >= start - 1e-9);
    }

    #[test]
    fn aggregated_weights_carry_one_unit_of_mass_per_node(
        (tr, tes) in (2usize..6).prop_flat_map(|m| (marginal(m), prop::collection::vec(marginal(m), 1..6))),
    ) {
        let w = aggregate_ratios(&tes, &tr).unwrap();
        let mass: f64 = w.iter().zip(tr.probs()).map(|(a, b)| a * b).sum();
        prop_assert!((mass - tes.len() as f64).abs() < 1e-9);
    }

    #[test]
    fn count_generator_realizes_the_requested_counts(
        counts in prop::collection::vec(0usize..30, 3),
        seed in any::<u64>(),
    ) {
        prop_assume!(counts.iter().sum::<usize>() > 0);
        let spec = GaussianMixtureSpec::equidistant(3, 2, 1.0, 1.0).unwrap();
        let data = gen_gaussian_mixture_counts(&spec, &counts, seed).unwrap();
        let realized: Vec<usize> = data.class_counts().iter().map(|&c| c as usize).collect();
        prop_assert_eq!(realized, counts);
    }
}
