// SPDX-License-Identifier: MIT OR Apache-2.0

use cxaffinity::stats::{self, SlotMatrix};
use proptest::prelude::*;

fn scored(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
    prop::collection::vec((0u8..20, any::<bool>()), 2..max)
        .prop_map(|v| (v.iter().map(|x| x.0 as f64 / 20.0).collect(), v.iter().map(|x| x.1).collect()))
        .prop_filter("both classes", |(_, l): &(Vec<f64>, Vec<bool>)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
}

// Mann-Whitney with ties counted as one half.
fn auc_pairs(s: &[f64], l: &[bool]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, &la) in s.iter().zip(l) {
        for (b, &lb) in s.iter().zip(l) {
            if la && !lb {
                den += 1.0;
                num += if a > b { 1.0 } else if a == b { 0.5 } else { 0.0 };
            }
        }
    }
    num / den
}

fn matrix(k: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0f64..1.0, k), k)
}

fn roles(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("r{i}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn auc_matches_pairwise_count((s, l) in scored(60)) {
        let roc = stats::roc_auc(&s, &l).unwrap();
        prop_assert!((roc.auc - auc_pairs(&s, &l)).abs() < 1e-12);
        prop_assert_eq!(roc.points.first().copied(), Some((0.0, 0.0)));
        prop_assert_eq!(roc.points.last().copied(), Some((1.0, 1.0)));
    }

    #[test]
    fn auc_invariant_under_monotone_transform((s, l) in scored(60)) {
        let t: Vec<f64> = s.iter().map(|x| (3.0 * x).exp() - 7.0).collect();
        let a = stats::roc_auc(&s, &l).unwrap().auc;
        let b = stats::roc_auc(&t, &l).unwrap().auc;
        prop_assert!((a - b).abs() < 1e-12);
        let flipped: Vec<bool> = l.iter().map(|b| !b).collect();
        let c = stats::roc_auc(&s, &flipped).unwrap().auc;
        prop_assert!((a + c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_below_all_scores_gives_prevalence((s, l) in scored(60)) {
        let labels: Vec<String> = l.iter().map(|&b| if b { "H".into() } else { "L".into() }).collect();
        let r = stats::threshold_classify(&s, &labels, f64::NEG_INFINITY, "H").unwrap();
        let prevalence = l.iter().filter(|&&b| b).count() as f64 / l.len() as f64;
        prop_assert!((r.accuracy - prevalence).abs() < 1e-12);
        let r = stats::threshold_classify(&s, &labels, f64::INFINITY, "H").unwrap();
        prop_assert!((r.accuracy - (1.0 - prevalence)).abs() < 1e-12);
    }

    #[test]
    fn class_mean_ignores_input_order(ms in prop::collection::vec((matrix(4), prop::collection::vec(0.0f64..1.0, 4)), 1..8), rot in 0usize..8) {
        let mats: Vec<SlotMatrix> = ms.iter().map(|(m, _)| SlotMatrix::new(roles(4), m.clone()).unwrap()).collect();
        let globals: Vec<Vec<f64>> = ms.iter().map(|(_, g)| g.clone()).collect();
        let a = stats::class_mean_matrix(&mats, &globals).unwrap();
        let r = rot % mats.len();
        let mut m2 = mats.clone();
        let mut g2 = globals.clone();
        m2.rotate_left(r);
        g2.rotate_left(r);
        let b = stats::class_mean_matrix(&m2, &g2).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                prop_assert!((a.get(i, j) - b.get(i, j)).abs() < 1e-12);
            }
            let want = globals.iter().map(|g| g[i]).sum::<f64>() / globals.len() as f64;
            prop_assert!((a.get(i, i) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn top_k_diff_is_symmetric(a in matrix(5), b in matrix(5), k in 1usize..=25) {
        let (ma, mb) = (SlotMatrix::new(roles(5), a).unwrap(), SlotMatrix::new(roles(5), b).unwrap());
        let x = stats::top_k_diff(&ma, &mb, k).unwrap();
        let y = stats::top_k_diff(&mb, &ma, k).unwrap();
        prop_assert_eq!(&x, &y);
        prop_assert_eq!(x.len(), k);
        prop_assert!(stats::top_k_diff(&ma, &mb, 26).is_err());
        for w in x.windows(2) {
            prop_assert!(w[0].abs_diff >= w[1].abs_diff);
        }
    }

    #[test]
    fn box_stats_ordered(v in prop::collection::vec(-10.0f64..10.0, 1..80)) {
        let b = stats::box_stats(&v).unwrap();
        prop_assert!(b.min <= b.whisker_low && b.whisker_low <= b.q1);
        prop_assert!(b.q1 <= b.median && b.median <= b.q3);
        prop_assert!(b.q3 <= b.whisker_high && b.whisker_high <= b.max);
        prop_assert_eq!(b.n, v.len());
    }

    #[test]
    fn histogram_counts_everything(v in prop::collection::vec(0.0f64..=1.0, 0..80)) {
        let bins = stats::histogram(&v, 0.0, 1.0, 0.05).unwrap();
        prop_assert_eq!(bins.len(), 20);
        prop_assert_eq!(bins.iter().map(|b| b.count).sum::<usize>(), v.len());
    }
}

#[test]
fn perfect_and_inverted_separation() {
    let s = [0.1, 0.2, 0.8, 0.9];
    assert_eq!(stats::roc_auc(&s, &[false, false, true, true]).unwrap().auc, 1.0);
    assert_eq!(stats::roc_auc(&s, &[true, true, false, false]).unwrap().auc, 0.0);
}
