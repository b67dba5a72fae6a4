use std::collections::BTreeSet;

use ndarray::Array2;
use proptest::prelude::*;

use disco::engine::{Exemplar, RehearsalBuffer};
use disco::losses::{cosine_similarity, triplet};
use disco::metrics::{
    average_accuracy, forgetting_measure, high_magnitude_set, initial_accuracy, jaccard,
    masked_accuracy, percentile_linear, AccuracyMatrix,
};
use disco::prototypes::PrototypePool;
use disco::rng::{stream, Stream};
use disco::scenario::{split_base_increment, split_even, ClassId};

fn matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=10).prop_flat_map(|t| {
        (1..=t)
            .map(|k| prop::collection::vec(0.0f64..=100.0, k))
            .collect::<Vec<_>>()
    })
}

fn nonzero_vec(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, d)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
}

proptest! {
    #[test]
    fn aa_and_ia_are_bounded_means(rows in matrix()) {
        let m = AccuracyMatrix::new(rows.clone()).unwrap();
        let (curve, aa) = average_accuracy(&m);
        prop_assert_eq!(curve.len(), rows.len());
        for (k, row) in rows.iter().enumerate() {
            let lo = row.iter().copied().fold(f64::MAX, f64::min);
            let hi = row.iter().copied().fold(f64::MIN, f64::max);
            prop_assert!(curve[k] >= lo - 1e-9 && curve[k] <= hi + 1e-9);
        }
        prop_assert!((0.0..=100.0).contains(&aa));
        let ia = initial_accuracy(&m);
        prop_assert!((0.0..=100.0).contains(&ia));
    }

    #[test]
    fn forgetting_is_zero_for_constant_columns(rows in matrix()) {
        let t = rows.len();
        prop_assume!(t >= 2);
        // Column j keeps its diagonal value forever.
        let flat: Vec<Vec<f64>> = (0..t).map(|k| (0..=k).map(|j| rows[j][j]).collect()).collect();
        let (per, fm) = forgetting_measure(&AccuracyMatrix::new(flat).unwrap()).unwrap();
        prop_assert!(per.iter().all(|f| f.abs() < 1e-12));
        prop_assert!(fm.abs() < 1e-12);
    }

    #[test]
    fn forgetting_is_never_below_diagonal_drop(rows in matrix()) {
        let t = rows.len();
        prop_assume!(t >= 2);
        let (per, _) = forgetting_measure(&AccuracyMatrix::new(rows.clone()).unwrap()).unwrap();
        for j in 0..t - 1 {
            prop_assert!(per[j] >= rows[j][j] - rows[t - 1][j] - 1e-12);
        }
    }

    #[test]
    fn high_set_separates_magnitudes(delta in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        let p = high_magnitude_set(&delta).unwrap();
        let mags: Vec<f64> = delta.iter().map(|d| d.abs()).collect();
        let lo = mags.iter().copied().fold(f64::MAX, f64::min);
        let hi = mags.iter().copied().fold(f64::MIN, f64::max);
        prop_assert!(p.threshold >= lo && p.threshold <= hi);
        for (i, m) in mags.iter().enumerate() {
            prop_assert_eq!(p.high.contains(&i), *m > p.threshold);
        }
        prop_assert!(p.high.len() * 4 <= delta.len() + 3);
    }

    #[test]
    fn percentile_matches_order_statistics(values in prop::collection::vec(-1e3f64..1e3, 1..50)) {
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(percentile_linear(&values, 0.0).unwrap(), sorted[0]);
        prop_assert_eq!(percentile_linear(&values, 1.0).unwrap(), *sorted.last().unwrap());
    }

    #[test]
    fn jaccard_is_symmetric_and_bounded(
        a in prop::collection::btree_set(0usize..40, 0..20),
        b in prop::collection::btree_set(0usize..40, 0..20),
    ) {
        let j = jaccard(&a, &b);
        prop_assert_eq!(j, jaccard(&b, &a));
        prop_assert!((0.0..=1.0).contains(&j));
        if !a.is_empty() {
            prop_assert_eq!(jaccard(&a, &a), 1.0);
        }
    }

    #[test]
    fn masked_accuracy_with_full_mask_is_plain_accuracy(
        values in prop::collection::vec(-3i32..3, 4 * 12),
        labels in prop::collection::vec(0u32..4, 12),
    ) {
        let logits = Array2::from_shape_vec((12, 4), values.iter().map(|&v| v as f64).collect()).unwrap();
        let head: Vec<ClassId> = vec![2, 0, 3, 1];
        let plain = logits.rows().into_iter().zip(&labels).filter(|(row, &l)| {
            let best = (0..4).fold(0, |b, i| if row[i] > row[b] { i } else { b });
            head[best] == l
        }).count() as f64 * 100.0 / 12.0;
        prop_assert_eq!(masked_accuracy(logits.view(), &head, &labels, &[2, 0, 3, 1]).unwrap(), plain);
    }

    #[test]
    fn triplet_is_bounded_and_scale_invariant(
        a in nonzero_vec(6), p in nonzero_vec(6), n in nonzero_vec(6), c in 0.01f64..100.0,
    ) {
        let t = triplet(&a, &p, &n).unwrap();
        let lo = (1.0 + (-1.0f64).exp()).ln();
        let hi = (1.0 + 3.0f64.exp()).ln();
        prop_assert!(t >= lo - 1e-12 && t <= hi + 1e-12);
        let scaled: Vec<f64> = a.iter().map(|x| x * c).collect();
        prop_assert!((triplet(&scaled, &p, &n).unwrap() - t).abs() < 1e-9);
        let s = cosine_similarity(&a, &p).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&s));
    }

    #[test]
    fn running_mean_is_arithmetic_mean(
        batches in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..300),
    ) {
        let mut pool = PrototypePool::new();
        for b in &batches {
            pool.accumulate(b).unwrap();
        }
        let p = pool.finalize_task(1).unwrap().to_vec();
        for i in 0..3 {
            let mean = batches.iter().map(|b| b[i]).sum::<f64>() / batches.len() as f64;
            prop_assert!((p[i] - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        }
        prop_assert!(pool.accumulator().count() == 0);
    }

    #[test]
    fn even_split_partitions_classes(tasks in 1usize..12, per in 1usize..12, seed in any::<u64>()) {
        let n = tasks * per;
        let s = split_even(n, tasks, seed).unwrap();
        let mut seen = BTreeSet::new();
        for t in s.tasks() {
            prop_assert_eq!(t.label_set.len(), per);
            for &c in &t.label_set {
                prop_assert!(seen.insert(c));
            }
        }
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(s, split_even(n, tasks, seed).unwrap());
    }

    #[test]
    fn base_increment_sizes(base in 1usize..60, inc in 1usize..8, per in 1usize..10, seed in any::<u64>()) {
        let n = base + inc * per;
        let s = split_base_increment(n, base, inc, seed).unwrap();
        let sizes: Vec<usize> = s.tasks().iter().map(|t| t.label_set.len()).collect();
        let mut want = vec![base];
        want.extend(std::iter::repeat_n(per, inc));
        prop_assert_eq!(sizes, want);
    }

    #[test]
    fn buffer_stays_balanced_and_bounded(capacity in 0usize..60, classes in 1u32..6, tasks in 1u32..5, seed in any::<u64>()) {
        let mut buf = RehearsalBuffer::new(capacity);
        let mut rng = stream(seed, Stream::Buffer);
        for t in 0..tasks {
            let labels: Vec<ClassId> = (t * classes..(t + 1) * classes).collect();
            let candidates = labels.iter().flat_map(|&l| (0..15).map(move |i| Exemplar {
                source_index: l as usize * 100 + i,
                label: l,
                task_id: t as usize + 1,
                features: vec![l as f64],
            })).collect();
            buf.update(candidates, &labels, &mut rng).unwrap();
            prop_assert!(buf.len() <= capacity);
            let quota = (capacity / ((t + 1) * classes) as usize).min(15);
            for c in buf.classes() {
                prop_assert_eq!(buf.exemplars(c).len(), quota);
            }
        }
    }
}
