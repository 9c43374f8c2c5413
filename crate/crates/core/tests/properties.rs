mod common;

use ndarray::{Array1, Array2};
use proptest::prelude::*;

use duoreid_core::assignment::linear_assignment;
use duoreid_core::ccm::{match_clusters, relabel, Direction};
use duoreid_core::clustering::{cosine_distances, dbscan, DbscanConfig};
use duoreid_core::data::Modality;
use duoreid_core::encoder::EncoderParams;
use duoreid_core::evaluation::{cmc, joint_feature, map_score, minp, rank_gallery};
use duoreid_core::memory::softmax;
use duoreid_core::objectives::{ce_logit_gradient, ra_logit_gradient};

use common::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    proptest::collection::vec(-1.0f64..1.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn square() -> impl Strategy<Value = Array2<f64>> {
    (1usize..=6).prop_flat_map(|k| matrix(k, k))
}

fn centers() -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (1usize..12, 1usize..12, 2usize..6).prop_flat_map(|(p, q, d)| (matrix(p, d), matrix(q, d)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assignment_is_optimal_permutation(cost in square()) {
        let got = linear_assignment(cost.view()).unwrap();
        let mut cols = got.row_to_col.clone();
        cols.sort_unstable();
        prop_assert_eq!(cols, (0..cost.nrows()).collect::<Vec<_>>());
        let sum: f64 = got.row_to_col.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
        prop_assert!((sum - got.total).abs() < 1e-9);
        let (perm, best) = brute_assignment(cost.view());
        prop_assert!((got.total - best).abs() < 1e-9);
        prop_assert_eq!(got.row_to_col, perm);
    }

    #[test]
    fn matching_covers_both_sides((p, q) in centers()) {
        prop_assume!(p.rows().into_iter().chain(q.rows()).all(|r| r.dot(&r) > 1e-6));
        let m = match_clusters(p.view(), q.view()).unwrap();
        prop_assert!(m.is_complete());
        prop_assert_eq!(m.round_one().count(), p.nrows().min(q.nrows()));
        prop_assert_eq!(m.pairs.len(), p.nrows().max(q.nrows()));
        let labels: Vec<Option<usize>> = (0..p.nrows()).map(Some).chain([None]).collect();
        let mapped = relabel(&labels, &m, Direction::PToQ).unwrap();
        prop_assert!(mapped[..p.nrows()].iter().all(|l| l.is_some_and(|l| l < q.nrows())));
        prop_assert_eq!(*mapped.last().unwrap(), None);
        // Round-one pairs are one-to-one.
        let mut qs: Vec<usize> = m.round_one().map(|x| x.q).collect();
        qs.sort_unstable();
        qs.dedup();
        prop_assert_eq!(qs.len(), p.nrows().min(q.nrows()));
    }

    #[test]
    fn dbscan_matches_reference(x in (1usize..40, 2usize..4).prop_flat_map(|(n, d)| matrix(n, d)),
                                eps in 0.001f64..0.5, min_pts in 1usize..6) {
        prop_assume!(x.rows().into_iter().all(|r| r.dot(&r) > 1e-6));
        let got = dbscan(x.view(), &DbscanConfig { eps, min_pts }).unwrap();
        prop_assert_eq!(&got.labels, &brute_dbscan(x.view(), eps, min_pts));
        let d = cosine_distances(x.view()).unwrap();
        for i in 0..x.nrows() {
            prop_assert!(d[[i, i]].abs() < 1e-12);
            for j in 0..x.nrows() {
                prop_assert!((d[[i, j]] - d[[j, i]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn metrics_match_recount(q in (1usize..6).prop_flat_map(|n| matrix(n, 2)),
                             g in (1usize..30).prop_flat_map(|n| matrix(n, 2)),
                             seed in any::<u64>()) {
        use rand::Rng;
        let mut r = rng(seed);
        let qid: Vec<usize> = (0..q.nrows()).map(|_| r.random_range(0..3)).collect();
        let gid: Vec<usize> = (0..g.nrows()).map(|_| r.random_range(0..3)).collect();
        let rankings = rank_gallery(q.view(), &qid, g.view(), &gid).unwrap();
        let want = recount(q.view(), &qid, g.view(), &gid);
        let ks = [1, 10, 20];
        for (t, k) in ks.iter().enumerate() {
            prop_assert!((cmc(&rankings, *k) - want.cmc[t]).abs() < 1e-12);
        }
        prop_assert!(cmc(&rankings, 1) <= cmc(&rankings, 10));
        prop_assert!((map_score(&rankings) - want.map).abs() < 1e-12);
        prop_assert!((minp(&rankings) - want.minp).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&map_score(&rankings)));
    }

    #[test]
    fn analytic_gradient_matches_differences(seed in any::<u64>()) {
        let err = GradInstance::random(seed).relative_error(1e-5);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn embeddings_are_unit_length(x in matrix(5, 4), hidden in proptest::option::of(1usize..6), seed in any::<u64>()) {
        let enc = EncoderParams::init(4, hidden, 3, seed);
        for m in [Modality::Visible, Modality::Infrared] {
            let f = enc.get(m).forward_rows(x.view()).unwrap();
            for row in f.rows() {
                prop_assert!((row.dot(&row) - 1.0).abs() < 1e-12);
            }
        }
        let a = enc.visible.forward(x.row(0)).unwrap();
        let b = enc.visible.forward(x.row(1)).unwrap();
        let j = joint_feature(a.view(), b.view());
        let n = j.dot(&j);
        prop_assert!((n - 1.0).abs() < 1e-12 || n == 0.0);
    }

    #[test]
    fn robust_gradient_is_scaled_cross_entropy(logits in proptest::collection::vec(-10.0f64..10.0, 2..10),
                                               gamma in 0.001f64..=1.0, pick in any::<proptest::sample::Index>()) {
        let probs = softmax(Array1::from(logits).view());
        let y = pick.index(probs.len());
        let ra = ra_logit_gradient(probs.view(), y, gamma);
        let ce = ce_logit_gradient(probs.view(), y);
        let scale = gamma * probs[y].max(1e-12).powf(gamma);
        for (a, c) in ra.iter().zip(&ce) {
            prop_assert!((a - scale * c).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }
}
