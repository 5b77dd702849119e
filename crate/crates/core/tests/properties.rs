use proptest::prelude::*;
use stepchain::metrics::{binary_auc, macro_auc, per_step_metrics};
use stepchain::numerics::{Graph, Tensor, SENTINEL};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-20.0f64..20.0, rows * cols)
        .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn scored_labels() -> impl Strategy<Value = (Tensor, Vec<i64>)> {
    (2usize..12, 2usize..6).prop_flat_map(|(n, c)| {
        (
            matrix(n, c),
            prop::collection::vec(prop_oneof![4 => 0..c as i64, 1 => Just(SENTINEL)], n),
        )
    })
}

proptest! {
    #[test]
    fn softmax_slices_are_distributions(x in matrix(4, 5), axis in 0usize..2) {
        let mut g = Graph::new();
        let v = g.constant(x).unwrap();
        let p = g.softmax(v, axis).unwrap();
        let p = g.value(p);
        prop_assert!(p.data.iter().all(|v| *v >= 0.0));
        let sums: Vec<f64> = if axis == 1 {
            (0..4).map(|i| p.row(i).iter().sum()).collect()
        } else {
            (0..5).map(|j| (0..4).map(|i| p.data[i * 5 + j]).sum()).collect()
        };
        for s in sums {
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn log_softmax_matches_log_of_softmax(x in matrix(3, 6)) {
        let mut g = Graph::new();
        let v = g.constant(x).unwrap();
        let p = g.softmax(v, 1).unwrap();
        let lp = g.log_softmax(v, 1).unwrap();
        for (a, b) in g.value(p).data.iter().zip(&g.value(lp).data) {
            prop_assert!((a.ln() - b).abs() < 1e-9);
        }
    }

    #[test]
    fn log_softmax_finite_on_large_inputs(scale in 1.0f64..1e4, sign in prop::bool::ANY) {
        let s = if sign { scale } else { -scale };
        let x = Tensor::new(vec![1, 3], vec![s, 0.0, -s]).unwrap();
        let mut g = Graph::new();
        let v = g.constant(x).unwrap();
        let lp = g.log_softmax(v, 1).unwrap();
        prop_assert!(g.value(lp).data.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn auc_invariant_to_row_order((probs, labels) in scored_labels(), rot in 0usize..12) {
        let n = labels.len();
        let order: Vec<usize> = (0..n).map(|i| (i + rot) % n).collect();
        let permuted = probs.select_rows(&order);
        let plabels: Vec<i64> = order.iter().map(|&i| labels[i]).collect();
        let a = macro_auc(&probs, &labels, SENTINEL).unwrap();
        let b = macro_auc(&permuted, &plabels, SENTINEL).unwrap();
        match (a, b) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn auc_invariant_to_monotone_rescoring(scores in prop::collection::vec(-5.0f64..5.0, 2..20), seed in 0u64..1000) {
        let positive: Vec<bool> = (0..scores.len()).map(|i| (seed >> (i % 10)) & 1 == 1).collect();
        let squashed: Vec<f64> = scores.iter().map(|s| 3.0 * s.tanh() + 1.0).collect();
        prop_assert_eq!(binary_auc(&scores, &positive), binary_auc(&squashed, &positive));
    }

    #[test]
    fn auc_and_rates_in_range((probs, labels) in scored_labels()) {
        if let Some(a) = macro_auc(&probs, &labels, SENTINEL).unwrap() {
            prop_assert!((0.0..=1.0).contains(&a));
        }
        let m = per_step_metrics("s", &probs, &labels, SENTINEL).unwrap();
        for v in [m.accuracy, m.sensitivity, m.specificity, m.f1, m.precision] {
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }
}
