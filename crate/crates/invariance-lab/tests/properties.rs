//! Cross-module property tests.

use proptest::prelude::*;

use invariance_lab::chains::{self, ArBernoulli, ChainModel, FiniteChain};
use invariance_lab::coupling::{
    self, generalized_inverse, prokhorov_finite, total_variation, FiniteDist,
};
use invariance_lab::mixing::{cf_joint, cf_past, IntervalPattern};
use invariance_lab::partition::{self, SegmentKind};

fn two_state() -> FiniteChain {
    FiniteChain::new(
        vec![vec![0.75, 0.25], vec![0.25, 0.75]],
        vec![-0.5, 0.5],
        0,
    )
    .unwrap()
}

/// Distribution on up to 6 distinct quarter-grid points in [-2, 2].
fn finite_dist_strategy() -> impl Strategy<Value = FiniteDist> {
    (1usize..=6)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(-8i32..=8, n..=n),
                proptest::collection::vec(1u32..=100, n..=n),
            )
        })
        .prop_filter_map("points must be distinct", |(raw_pts, raw_w)| {
            let mut pts: Vec<f64> = raw_pts.iter().map(|&p| p as f64 / 4.0).collect();
            pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            pts.dedup();
            if pts.len() != raw_pts.len() {
                return None;
            }
            let total: f64 = raw_w.iter().map(|&w| w as f64).sum();
            let mut probs: Vec<f64> = raw_w.iter().map(|&w| w as f64 / total).collect();
            let fix: f64 = 1.0 - probs.iter().sum::<f64>();
            probs[0] += fix;
            FiniteDist::on_line(pts, probs).ok()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prokhorov_symmetry_and_tv_bound(a in finite_dist_strategy(), b in finite_dist_strategy()) {
        let pab = prokhorov_finite(&a, &b).unwrap();
        let pba = prokhorov_finite(&b, &a).unwrap();
        prop_assert!((pab - pba).abs() < 1e-12);
        prop_assert!(pab <= total_variation(&a, &b) + 1e-12);
        prop_assert!(pab >= 0.0);
        prop_assert!(prokhorov_finite(&a, &a).unwrap() == 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn prokhorov_triangle(
        a in finite_dist_strategy(),
        b in finite_dist_strategy(),
        c in finite_dist_strategy(),
    ) {
        let ab = prokhorov_finite(&a, &b).unwrap();
        let bc = prokhorov_finite(&b, &c).unwrap();
        let ac = prokhorov_finite(&a, &c).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12, "{ac} > {ab} + {bc}");
    }

    #[test]
    fn partition_blocks_cover_exactly(
        eps_m in 2u32..35,
        beta_m in 30u32..80,
        k in 2u32..18,
    ) {
        let eps = eps_m as f64 / 100.0;
        let beta = beta_m as f64 / 100.0;
        prop_assume!(eps + beta < 0.95);
        let Ok(segs) = partition::build_block(k, eps, beta) else {
            return Ok(()); // infeasible blocks must error, checked elsewhere
        };
        let ek = partition::floor_index(eps, k);
        let bk = partition::floor_index(beta, k);
        // alternation and exact coverage
        let mut cursor = 1u64 << k;
        for (i, s) in segs.iter().enumerate() {
            prop_assert_eq!(s.start, cursor);
            prop_assert_eq!(s.kind == SegmentKind::Gap, i % 2 == 0);
            prop_assert!(s.len() >= 1);
            cursor = s.end;
        }
        prop_assert_eq!(cursor, 1u64 << (k + 1));
        let n_islands = segs.iter().filter(|s| s.kind == SegmentKind::Island).count() as u64;
        prop_assert_eq!(n_islands, 1u64 << bk);
        let gap_total: u64 = segs
            .iter()
            .filter(|s| s.kind == SegmentKind::Gap)
            .map(|s| s.len())
            .sum();
        // (2+[bk])·2^{[ek]+[bk]-1}, which is 1 when [ek] = [bk] = 0
        let expected = if ek + bk >= 1 {
            (2 + bk as u64) << (ek + bk - 1)
        } else {
            1
        };
        prop_assert_eq!(gap_total, expected);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded(
        alpha_m in -90i32..=90,
        x0_m in -40i32..=40,
        seed in any::<u64>(),
        rep in 0u64..4,
    ) {
        let alpha = alpha_m as f64 / 100.0;
        let x0 = x0_m as f64 / 10.0;
        let ar = ArBernoulli::new(alpha, x0).unwrap();
        let bound = x0.abs() + 1.0 / (1.0 - alpha.abs());
        let model = ChainModel::Ar(ar);
        let a = chains::sample_path_rep(&model, 512, seed, rep);
        let b = chains::sample_path_rep(&model, 512, seed, rep);
        prop_assert_eq!(&a.values, &b.values);
        prop_assert!(a.values.iter().all(|v| v.abs() <= bound + 1e-12));
    }

    #[test]
    fn block_sums_are_additive(
        start in 1usize..50,
        mid in 0usize..50,
        tail in 0usize..50,
        seed in any::<u64>(),
    ) {
        let model = ChainModel::Finite(two_state());
        let end1 = start + mid;
        let end2 = end1 + tail;
        let traj = chains::sample_path(&model, end2 + 1, seed);
        let left = chains::block_sum(&traj, start, end1).unwrap();
        let right = chains::block_sum(&traj, end1 + 1, end2 + 1).unwrap();
        let total = chains::block_sum(&traj, start, end2 + 1).unwrap();
        prop_assert!((left + right - total).abs() < 1e-10);
    }

    #[test]
    fn generalized_inverse_is_monotone(
        steps in proptest::collection::vec((1u32..50, 1u32..50), 1..6),
        y1_m in 0u32..1000,
        y2_m in 0u32..1000,
    ) {
        // build a step CDF from positive increments
        let total: f64 = steps.iter().map(|&(_, w)| w as f64).sum();
        let mut x = 0.0;
        let mut f = 0.0;
        let table: Vec<(f64, f64)> = steps
            .iter()
            .map(|&(dx, w)| {
                x += dx as f64 / 10.0;
                f += w as f64 / total;
                (x, f)
            })
            .collect();
        let mut table = table;
        if let Some(last) = table.last_mut() {
            last.1 = 1.0;
        }
        let y1 = (y1_m.min(y2_m)) as f64 / 1000.0;
        let y2 = (y1_m.max(y2_m)) as f64 / 1000.0;
        let q1 = generalized_inverse(&table, y1).unwrap();
        let q2 = generalized_inverse(&table, y2).unwrap();
        prop_assert!(q1 <= q2);
        // right-continuity property at tabulated values
        for &(xv, fv) in &table {
            if fv < 1.0 {
                prop_assert!(generalized_inverse(&table, fv).unwrap() >= xv);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cf_modulus_and_symmetry(
        cards in proptest::collection::vec(1u64..4, 2..4),
        m1_raw in 1usize..3,
        k_gap in 0u64..12,
        t_raw in proptest::collection::vec(-10i32..=10, 4..=4),
    ) {
        let chain = two_state();
        let m1 = m1_raw.min(cards.len() - 1);
        let pattern = IntervalPattern::contiguous(0, &cards, m1, k_gap).unwrap();
        let t: Vec<f64> = t_raw.iter().map(|&v| v as f64 / 10.0).collect();
        let (t1, t2) = (&t[..pattern.m1], &t[pattern.m1..pattern.blocks()]);
        let phi = cf_joint(&chain, 0, &pattern, t1, t2).unwrap();
        prop_assert!(phi.norm() <= 1.0 + 1e-10);
        let neg1: Vec<f64> = t1.iter().map(|v| -v).collect();
        let neg2: Vec<f64> = t2.iter().map(|v| -v).collect();
        let conj = cf_joint(&chain, 0, &pattern, &neg1, &neg2).unwrap();
        prop_assert!((phi.conj() - conj).norm() < 1e-12);
        // marginalization: zeroing the future leaves the past CF
        let zeros = vec![0.0; pattern.m2];
        let marg = cf_joint(&chain, 0, &pattern, t1, &zeros).unwrap();
        let past = cf_past(&chain, 0, &pattern, t1).unwrap();
        prop_assert!((marg - past).norm() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn coupling_invariants_hold_for_random_seeds(seed in any::<u64>(), rep in 0u64..3) {
        let model = ChainModel::Finite(two_state());
        let n = 512u64;
        let part = partition::build(n, 0.1, 0.6, 4).unwrap();
        let plan =
            coupling::coupling_plan(&model, 0.0, 0.75f64.sqrt(), &part, n, 60, seed, None)
                .unwrap();
        let trace = coupling::build_path_coupling_with(&plan, &model, seed, rep);
        for rec in &trace.islands {
            prop_assert!(rec.residual <= 1e-10);
            prop_assert!(rec.u > 0.0 && rec.u < 1.0);
            if !rec.degenerate {
                prop_assert!((rec.i_star as f64 + rec.f_kj * rec.f_kj - rec.sigma2_kj).abs() < 1e-12);
            }
        }
        prop_assert!(trace.w_path.iter().all(|w| w.is_finite()));
        prop_assert!(coupling::coupling_error(&trace).is_finite());
    }
}
