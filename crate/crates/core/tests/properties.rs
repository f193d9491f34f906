//! Property tests for the invariants each module promises.

use ehps_core::benchmark::{mpe, rank_entries, select_topk, BasketEntry, BenchmarkBasket, LeaderboardEntry};
use ehps_core::body_model::{forward, gen_toy_model, rodrigues, FullPoseState, Layout, Vec3};
use ehps_core::data_store::{
    convert_gendered, gen_synthetic_records, parse_records, records_to_jsonl, HandComplexity,
};
use ehps_core::hand_analysis::{histogram, stats_from_samples};
use ehps_core::metrics::{detection_normalized, position_error, AlignmentMode, MetricKind, MetricPart, MetricSpec};
use ehps_core::sampler::{materialize, plan_lengths, SampleStrategy};
use ehps_core::shape_adapter::LinearAdapter;
use indexmap::IndexMap;
use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

fn point() -> impl Strategy<Value = Vec3> {
    [-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64]
}

fn cloud(min: usize, max: usize) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(point(), min..max)
}

fn axis_angle() -> impl Strategy<Value = Vec3> {
    [-3.0..3.0f64, -3.0..3.0f64, -3.0..3.0f64]
}

fn transform(points: &[Vec3], s: f64, r: &Matrix3<f64>, t: Vec3) -> Vec<Vec3> {
    points
        .iter()
        .map(|p| {
            let q = s * (r * Vector3::from(*p)) + Vector3::from(t);
            [q.x, q.y, q.z]
        })
        .collect()
}

fn ranked(sizes: &[usize]) -> Vec<(String, usize)> {
    sizes.iter().enumerate().map(|(i, &s)| (format!("ds{i:02}"), s)).collect()
}

mod body_model {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn rotations_are_proper(w in axis_angle()) {
            let r = rodrigues(w).unwrap();
            let defect = (r.transpose() * r - Matrix3::identity()).abs().max();
            prop_assert!(defect < 1e-12);
            prop_assert!((r.determinant() - 1.0).abs() < 1e-12);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn zero_pose_returns_shaped_rest_mesh(
            seed in 0u64..1000,
            beta in prop::collection::vec(-2.0..2.0f64, 10),
            psi in prop::collection::vec(-2.0..2.0f64, 10),
        ) {
            let model = gen_toy_model(seed, 80, 12, Layout::Minimal).unwrap();
            let state = FullPoseState { beta: beta.clone(), psi: psi.clone(), ..FullPoseState::zero(12) };
            let mesh = forward(&model, &state).unwrap();
            let rest = ehps_core::body_model::shape_mesh(&model, &beta, &psi).unwrap();
            for (a, b) in mesh.vertices.iter().zip(&rest) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn global_motion_is_rigid(
            seed in 0u64..1000,
            beta in prop::collection::vec(-2.0..2.0f64, 10),
            w in axis_angle(),
            t in point(),
        ) {
            let model = gen_toy_model(seed, 80, 12, Layout::Minimal).unwrap();
            let still = forward(&model, &FullPoseState { beta: beta.clone(), ..FullPoseState::zero(12) }).unwrap();
            let mut moved_state = FullPoseState { beta, translation: t, ..FullPoseState::zero(12) };
            moved_state.theta[0] = w;
            let moved = forward(&model, &moved_state).unwrap();
            // Rotation about the root joint, then translation.
            let r = rodrigues(w).unwrap();
            let root = Vector3::from(still.joints[0]);
            let expected: Vec<Vec3> = still
                .vertices
                .iter()
                .map(|v| {
                    let q = r * (Vector3::from(*v) - root) + root + Vector3::from(t);
                    [q.x, q.y, q.z]
                })
                .collect();
            for (a, b) in moved.vertices.iter().zip(&expected) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }
        }
    }
}

mod metrics {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn procrustes_error_ignores_similarities_of_pred(
            (pred, gt) in (5usize..40).prop_flat_map(|n| (cloud(n, n + 1), cloud(n, n + 1))),
            s in 0.2..5.0f64,
            w in axis_angle(),
            t in point(),
        ) {
            let r = rodrigues(w).unwrap();
            let pa = AlignmentMode::ProcrustesSimilarity;
            let base = position_error(&pred, &gt, &pa, None).unwrap();
            let moved = position_error(&transform(&pred, s, &r, t), &gt, &pa, None).unwrap();
            prop_assert!((base - moved).abs() < 1e-9, "{base} vs {moved}");
            prop_assert!(base <= position_error(&pred, &gt, &AlignmentMode::None, None).unwrap() + 1e-9);
        }

        #[test]
        fn root_alignment_ignores_offsets(
            (pred, gt) in (1usize..40).prop_flat_map(|n| (cloud(n, n + 1), cloud(n, n + 1))),
            offset in point(),
        ) {
            let mode = AlignmentMode::RootTranslation { joint: None };
            let base = position_error(&pred, &gt, &mode, Some((pred[0], gt[0]))).unwrap();
            let shifted = transform(&pred, 1.0, &Matrix3::identity(), offset);
            let moved = position_error(&shifted, &gt, &mode, Some((shifted[0], gt[0]))).unwrap();
            prop_assert!((base - moved).abs() < 1e-9);
        }

        #[test]
        fn doubling_pred_changes_raw_error_only(
            (pred, gt) in (5usize..40).prop_flat_map(|n| (cloud(n, n + 1), cloud(n, n + 1))),
        ) {
            let doubled = transform(&pred, 2.0, &Matrix3::identity(), [0.0; 3]);
            let pa = AlignmentMode::ProcrustesSimilarity;
            let a = position_error(&pred, &gt, &pa, None).unwrap();
            let b = position_error(&doubled, &gt, &pa, None).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
            let raw_a = position_error(&pred, &gt, &AlignmentMode::None, None).unwrap();
            let raw_b = position_error(&doubled, &gt, &AlignmentMode::None, None).unwrap();
            prop_assert!(raw_a != raw_b);
        }

        #[test]
        fn detection_normalisation_is_linear_and_decreasing(
            e in 0.0..500.0f64,
            c in 0.0..10.0f64,
            f1 in 0.01..0.99f64,
            df in 0.001..0.01f64,
        ) {
            let base = detection_normalized(e, f1).unwrap();
            prop_assert!((detection_normalized(c * e, f1).unwrap() - c * base).abs() <= 1e-9 * (1.0 + c * base));
            let e = e + 1.0;
            prop_assert!(detection_normalized(e, f1 + df).unwrap() < detection_normalized(e, f1).unwrap());
        }
    }
}

mod benchmark {
    use super::*;

    fn basket(n: usize) -> BenchmarkBasket {
        let spec = MetricSpec::aligned(MetricKind::Pve, MetricPart::All);
        BenchmarkBasket {
            name: "prop".into(),
            entries: (0..n)
                .map(|i| BasketEntry::new(&format!("b{i}"), Some(&format!("d{i}")), spec))
                .collect(),
        }
    }

    fn entry(subject: &str, values: &[f64], trained_on: &[String]) -> LeaderboardEntry {
        let ids: Vec<String> = (0..values.len()).map(|i| format!("b{i}")).collect();
        LeaderboardEntry::new(
            subject,
            ids.iter().map(String::as_str).zip(values.iter().copied()),
            trained_on.iter().map(String::as_str),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn mpe_is_order_free_linear_and_plain_without_exclusion(
            values in prop::collection::vec(1.0..300.0f64, 1..8),
            c in 0.1..10.0f64,
            rotate in 0usize..8,
        ) {
            let n = values.len();
            let b = basket(n);
            let e = entry("s", &values, &[]);
            let m = mpe(&e, &b).unwrap();
            let plain = values.iter().sum::<f64>() / n as f64;
            prop_assert!((m - plain).abs() < 1e-9);
            let mut shuffled = b.clone();
            shuffled.entries.rotate_left(rotate % n);
            shuffled.entries.reverse();
            prop_assert!((mpe(&e, &shuffled).unwrap() - m).abs() < 1e-9);
            let scaled: Vec<f64> = values.iter().map(|v| v * c).collect();
            prop_assert!((mpe(&entry("s", &scaled, &[]), &b).unwrap() - c * m).abs() < 1e-9 * c * m);
        }

        #[test]
        fn ranks_are_a_permutation_and_topk_nests(
            rows in prop::collection::vec(prop::collection::vec(prop::sample::select(vec![10.0, 20.0, 30.0, 45.5]), 3), 1..12),
            excluded in prop::collection::vec(prop::option::of(0usize..3), 12),
        ) {
            let b = basket(3);
            let entries: Vec<LeaderboardEntry> = rows
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let trained: Vec<String> = excluded[i].iter().map(|d| format!("d{d}")).collect();
                    entry(&format!("subject{i:02}"), v, &trained)
                })
                .collect();
            let ranked = rank_entries(entries, &b).unwrap();
            let mut ranks: Vec<usize> = ranked.iter().map(|e| e.rank).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=ranked.len()).collect::<Vec<_>>());
            for pair in ranked.windows(2) {
                let (a, z) = (&pair[0], &pair[1]);
                prop_assert!(a.mpe_mm < z.mpe_mm || (a.mpe_mm == z.mpe_mm && a.subject_id < z.subject_id));
            }
            for k in 0..ranked.len() {
                let small = select_topk(&ranked, k).unwrap();
                let large = select_topk(&ranked, k + 1).unwrap();
                prop_assert_eq!(&large[..k], &small[..]);
            }
        }
    }
}

mod sampler {
    use super::*;

    fn strategy() -> impl Strategy<Value = SampleStrategy> {
        prop_oneof![
            Just(SampleStrategy::Balanced),
            (2u32..9).prop_map(|ratio| SampleStrategy::Weighted { ratio }),
            Just(SampleStrategy::Weighted { ratio: 4 }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]

        #[test]
        fn lengths_sum_to_total(
            sizes in prop::collection::vec(1usize..100_000, 1..=64),
            total_frac in 0.0..1.0f64,
            s in strategy(),
        ) {
            let n = sizes.len();
            let total = n + ((1_000_000 - n) as f64 * total_frac) as usize;
            let plan = plan_lengths(&ranked(&sizes), s, total).unwrap();
            prop_assert_eq!(plan.values().sum::<usize>(), total);
            let lengths: Vec<usize> = plan.values().copied().collect();
            if let SampleStrategy::Weighted { ratio } = s {
                prop_assert!(lengths.windows(2).all(|w| w[0] >= w[1]));
                if n > 1 {
                    let (first, last) = (lengths[0] as i128, lengths[n - 1] as i128);
                    prop_assert!((i128::from(ratio) * last - first).abs() <= i128::from(ratio));
                }
            } else {
                prop_assert!(lengths.iter().max().unwrap() - lengths.iter().min().unwrap() <= 1);
            }
        }

        #[test]
        fn concatenation_keeps_source_sizes(sizes in prop::collection::vec(0usize..100_000, 1..=64)) {
            let plan = plan_lengths(&ranked(&sizes), SampleStrategy::Concatenated, 0).unwrap();
            prop_assert_eq!(plan.values().copied().collect::<Vec<_>>(), sizes);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn schedules_cover_sources_and_ignore_worker_count(
            sizes in prop::collection::vec(1usize..200, 1..8),
            total in 8usize..3000,
            s in strategy(),
            seed: u64,
            jobs in 2usize..8,
        ) {
            let ranked = ranked(&sizes);
            let source: IndexMap<String, usize> = ranked.iter().cloned().collect();
            let plan = plan_lengths(&ranked, s, total).unwrap();
            let one = materialize(s, &plan, &source, seed, 1).unwrap();
            let many = materialize(s, &plan, &source, seed, jobs).unwrap();
            prop_assert_eq!(&one, &many);
            for (id, indices) in &one.index_map {
                let size = source[id];
                prop_assert_eq!(indices.len(), plan[id]);
                let mut counts = vec![0usize; size];
                for &i in indices {
                    prop_assert!(i < size);
                    counts[i] += 1;
                }
                let floor = plan[id] / size;
                prop_assert!(counts.iter().all(|&c| c >= floor && c <= floor + 1));
            }
        }
    }
}

mod hand_analysis {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn stats_are_ordered_complete_and_order_free(
            samples in prop::collection::vec(0.0..60.0f64, 1..200),
            rotate in 0usize..200,
        ) {
            let a = stats_from_samples("d", &samples).unwrap();
            prop_assert!(a.q1_mm <= a.median_mm && a.median_mm <= a.q3_mm);
            prop_assert_eq!(histogram(&samples).iter().sum::<usize>(), samples.len());
            prop_assert_eq!(a.histogram.iter().sum::<usize>(), samples.len());
            let mut permuted = samples.clone();
            permuted.rotate_left(rotate % samples.len());
            permuted.reverse();
            prop_assert_eq!(stats_from_samples("d", &permuted).unwrap(), a);
        }
    }
}

mod data_store {
    use super::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn records_round_trip_and_neutral_conversion_is_identity(seed: u64, n in 0usize..12) {
            let records = gen_synthetic_records(seed, n, "prop", HandComplexity::Mixed);
            let text = records_to_jsonl(&records);
            let parsed = parse_records(&text, 55, "prop.jsonl").unwrap();
            prop_assert_eq!(&parsed, &records);
            let adapter = LinearAdapter { matrix: [[0.5; 10]; 10], bias: [1.0; 10] };
            prop_assert_eq!(convert_gendered(&records, &adapter, &adapter).unwrap(), records);
        }
    }
}
