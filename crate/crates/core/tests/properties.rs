use gradshift::data::{make_two_moons, rotate, split, RotationSpec};
use gradshift::diagnostics::{probe_config, proxy_a_distance};
use gradshift::ensemble::{propagate_closed_form, ClusterModel, PropagationGraph};
use gradshift::selection::{
    score_source_features, select_top, source_count, target_count, top_k_indices, Kernel, Prototypes, ScoreTable,
    Scorer,
};
use ndarray::Array2;
use proptest::prelude::*;

fn table(scores: &[f64]) -> ScoreTable {
    ScoreTable::new(scores.to_vec(), Scorer::MaxProbability).unwrap()
}

fn scores_and_k() -> impl Strategy<Value = (Vec<f64>, usize)> {
    prop::collection::vec(0.0f64..=1.0, 1..60).prop_flat_map(|s| {
        let n = s.len();
        (Just(s), 0..=n)
    })
}

fn matrix(rows: std::ops::Range<usize>, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    rows.prop_flat_map(move |r| {
        prop::collection::vec(-3.0f64..3.0, r * cols).prop_map(move |v| Array2::from_shape_vec((r, cols), v).unwrap())
    })
}

proptest! {
    #[test]
    fn select_top_picks_exactly_k_of_the_best((scores, k) in scores_and_k()) {
        let ind = select_top(&table(&scores), k).unwrap();
        prop_assert_eq!(ind.iter().filter(|&&a| a).count(), k);
        let worst_in = scores.iter().zip(&ind).filter(|(_, &a)| a).map(|(s, _)| *s).fold(f64::INFINITY, f64::min);
        let best_out = scores.iter().zip(&ind).filter(|(_, &a)| !a).map(|(s, _)| *s).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(worst_in >= best_out);
    }

    #[test]
    fn selection_is_invariant_to_monotone_maps((scores, k) in scores_and_k()) {
        let squashed: Vec<f64> = scores.iter().map(|s| s * s * 0.5 + 0.25).collect();
        prop_assert_eq!(select_top(&table(&scores), k).unwrap(), select_top(&table(&squashed), k).unwrap());
    }

    #[test]
    fn larger_selections_contain_smaller_ones((scores, k) in scores_and_k()) {
        let small = top_k_indices(&scores, k / 2).unwrap();
        let large = top_k_indices(&scores, k).unwrap();
        prop_assert!(small.iter().all(|i| large.contains(i)));
    }

    #[test]
    fn stage_counts_are_monotone_with_exact_endpoints(stages in 1usize..50, n_t in 0usize..500, n_s in 0usize..500) {
        prop_assert_eq!(target_count(0, stages, n_t), 0);
        prop_assert_eq!(target_count(stages, stages, n_t), n_t);
        prop_assert_eq!(source_count(0, stages, n_s), n_s);
        prop_assert_eq!(source_count(stages, stages, n_s), 0);
        for m in 1..=stages {
            prop_assert!(target_count(m, stages, n_t) >= target_count(m - 1, stages, n_t));
            prop_assert!(source_count(m, stages, n_s) <= source_count(m - 1, stages, n_s));
        }
    }

    #[test]
    fn rotation_keeps_norms_and_labels(seed in any::<u64>(), lo in -180.0f64..180.0, width in 0.0f64..90.0) {
        let set = make_two_moons(40, 0.1, seed).unwrap();
        let out = rotate(&set, &RotationSpec::new(lo, lo + width, seed).unwrap()).unwrap();
        prop_assert_eq!(out.labels(), set.labels());
        for i in 0..set.len() {
            let (a, b) = (set.row(i), out.row(i));
            prop_assert!((a.dot(&a).sqrt() - b.dot(&b).sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn split_is_a_partition(n in 2usize..200, fraction in 0.01f64..0.99, seed in any::<u64>()) {
        let set = make_two_moons(n, 0.1, seed).unwrap();
        let left = (n as f64 * fraction + 0.5).floor() as usize;
        let Ok((a, b)) = split(&set, fraction, seed) else {
            prop_assert!(left == 0 || left >= n);
            return Ok(());
        };
        prop_assert_eq!(a.len(), left);
        prop_assert_eq!(a.len() + b.len(), n);
        let mut rows: Vec<Vec<u64>> = a.features().rows().into_iter()
            .chain(b.features().rows())
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        let mut original: Vec<Vec<u64>> = set.features().rows().into_iter()
            .map(|r| r.iter().map(|v| v.to_bits()).collect())
            .collect();
        rows.sort();
        original.sort();
        prop_assert_eq!(rows, original);
    }

    #[test]
    fn prototypes_ignore_row_order(x in matrix(3..40, 3), seed in any::<u64>()) {
        let labels: Vec<usize> = (0..x.nrows()).map(|i| (i * 7 + seed as usize) % 3).collect();
        let mut order: Vec<usize> = (0..x.nrows()).collect();
        order.rotate_left(seed as usize % x.nrows());
        order.reverse();
        let shuffled = x.select(ndarray::Axis(0), &order);
        let shuffled_labels: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let a = Prototypes::from_features(x.view(), &labels, 3).unwrap();
        let b = Prototypes::from_features(shuffled.view(), &shuffled_labels, 3).unwrap();
        prop_assert_eq!(a.counts(), b.counts());
        for (u, v) in a.centers().iter().zip(b.centers().iter()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn source_scores_ignore_a_common_shift(x in matrix(6..30, 2), shift in -5.0f64..5.0) {
        let labels: Vec<usize> = (0..x.nrows()).map(|i| i % 2).collect();
        let protos = Prototypes::from_features(x.view(), &labels, 2).unwrap();
        let moved = &x + shift;
        let moved_protos = Prototypes::from_features(moved.view(), &labels, 2).unwrap();
        let a = score_source_features(x.view(), &labels, &protos, Kernel::SoftmaxNegSq).unwrap();
        let b = score_source_features(moved.view(), &labels, &moved_protos, Kernel::SoftmaxNegSq).unwrap();
        for (u, v) in a.scores().iter().zip(b.scores()) {
            prop_assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn propagated_scores_are_nonnegative(x in matrix(4..30, 3), lambda in 0.0f64..10.0) {
        let n_l = x.nrows() / 2;
        let labels: Vec<usize> = (0..n_l).map(|i| i % 2).collect();
        let g = PropagationGraph::from_features(
            x.slice(ndarray::s![..n_l, ..]), &labels, x.slice(ndarray::s![n_l.., ..]), 2, lambda,
        ).unwrap();
        let f = propagate_closed_form(&g).unwrap();
        prop_assert!(f.iter().all(|&v| v >= -1e-12));
    }

    #[test]
    fn kmeans_inertia_never_increases(src in matrix(4..20, 2), tgt in matrix(4..40, 2)) {
        let labels: Vec<usize> = (0..src.nrows()).map(|i| i % 2).collect();
        let cm = ClusterModel::fit(src.view(), &labels, tgt.view(), 2, 100, Kernel::SoftmaxNegSq).unwrap();
        for w in cm.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn a_distance_is_symmetric(seed in any::<u64>()) {
        let a = make_two_moons(40, 0.1, seed).unwrap();
        let b = make_two_moons(30, 0.3, seed ^ 1).unwrap();
        let cfg = probe_config(seed);
        let ab = proxy_a_distance(a.features(), b.features(), &cfg).unwrap();
        let ba = proxy_a_distance(b.features(), a.features(), &cfg).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=2.0).contains(&ab));
    }
}
