use cabs_core::divergence::{concordance, spearman};
use cabs_core::grpo::{group_advantages, kl_estimate, surrogate_term, ObjectiveConfig};
use cabs_core::matching::UnitJudgment;
use cabs_core::reward::{running_cost, tif_reward, RewardConfig};
use proptest::prelude::*;

fn judgment(hit: bool, loc: bool) -> UnitJudgment {
    UnitJudgment {
        name: "u".into(),
        hit,
        location_match: hit && loc,
        attribute_match: false,
    }
}

proptest! {
    #[test]
    fn reward_terms_are_bounded(hits in prop::collection::vec((any::<bool>(), any::<bool>()), 0..10), fp in 0usize..5, extra in 0usize..5) {
        let units: Vec<UnitJudgment> = hits.iter().map(|(h, l)| judgment(*h, *l)).collect();
        let m = fp + extra;
        let b = tif_reward(&units, fp, m, &RewardConfig::default()).unwrap();
        prop_assert!((0.0..=1.0).contains(&b.r_cabs));
        prop_assert!((0.0..=1.0).contains(&b.running_cost));
        prop_assert!((0.0..=1.0).contains(&b.control_effort));
        prop_assert!((b.total - (b.running_cost + b.control_effort + b.terminal + b.bonus)).abs() < 1e-15);
    }

    #[test]
    fn earlier_hits_cost_less(k in 2usize..9) {
        let mut first = vec![0.0; k];
        first[0] = 1.0;
        let mut last = vec![0.0; k];
        last[k - 1] = 1.0;
        prop_assert!(running_cost(&first, 1.0) > running_cost(&last, 1.0));
    }

    #[test]
    fn advantages_are_standardized(rewards in prop::collection::vec(-10.0f64..10.0, 2..16)) {
        let g = group_advantages(&rewards, 0.0).unwrap();
        let mean: f64 = g.advantages.iter().sum::<f64>() / rewards.len() as f64;
        prop_assert!(mean.abs() < 1e-9);
        if g.sigma > 1e-9 {
            let var: f64 = g.advantages.iter().map(|a| a * a).sum::<f64>() / rewards.len() as f64;
            prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn surrogate_never_exceeds_unclipped(ratio in 0.01f64..5.0, adv in -5.0f64..5.0) {
        let s = surrogate_term(ratio, adv, &ObjectiveConfig::default()).unwrap();
        prop_assert!(s <= ratio * adv + 1e-15);
    }

    #[test]
    fn kl_is_nonnegative(pairs in prop::collection::vec((-20.0f64..0.0, -20.0f64..0.0), 1..32)) {
        let (p, r): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        prop_assert!(kl_estimate(&p, &r).unwrap() >= 0.0);
        prop_assert_eq!(kl_estimate(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn spearman_ignores_monotone_transforms(xs in prop::collection::vec(0.0f64..1.0, 3..12), ys in prop::collection::vec(0.0f64..1.0, 12)) {
        let ys = &ys[..xs.len()];
        if let Ok(rho) = spearman(&xs, ys) {
            let tx: Vec<f64> = xs.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
            let ty: Vec<f64> = ys.iter().map(|y| y.powi(3)).collect();
            prop_assert!((spearman(&tx, &ty).unwrap() - rho).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&rho));
        }
    }

    #[test]
    fn concordance_extremes(mut xs in prop::collection::btree_set(0u32..1000, 2..10)) {
        let scores: Vec<f64> = std::mem::take(&mut xs).into_iter().map(f64::from).collect();
        let ranks: Vec<usize> = (1..=scores.len()).collect();
        let desc: Vec<f64> = scores.iter().rev().copied().collect();
        prop_assert_eq!(concordance(&ranks, &desc).unwrap().phi, 1.0);
        prop_assert_eq!(concordance(&ranks, &scores).unwrap().phi, 0.0);
        let flat = vec![0.5; scores.len()];
        prop_assert_eq!(concordance(&ranks, &flat).unwrap().phi, 0.5);
    }
}
