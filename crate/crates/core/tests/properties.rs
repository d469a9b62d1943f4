use proptest::prelude::*;

use privsel_core::expr::{build_bintree_query, build_tilde_loss, eval_on};
use privsel_core::formulas::{gamma, tau, xi};
use privsel_core::oracle::EqualBudgetPlan;
use privsel_core::{LossExpr, LossInstance, MechanismConstants};

fn consts() -> impl Strategy<Value = MechanismConstants> {
    prop_oneof![Just(MechanismConstants::reference()), Just(MechanismConstants::scaled())]
}

fn losses(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![(-10i32..=10).prop_map(f64::from), -10.0..10.0f64], 1..=max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn formulas_positive_and_decreasing_in_rho(
        m in 2u64..1 << 50,
        k in 1.0..1e7f64,
        rho in 1e-4..1e4f64,
        factor in 1.001..100.0f64,
        beta in 1e-9..0.5f64,
        c in consts(),
    ) {
        let hi = rho * factor;
        let t = (tau(m, rho, beta).unwrap(), tau(m, hi, beta).unwrap());
        let x = (xi(k, rho, beta, &c).unwrap(), xi(k, hi, beta, &c).unwrap());
        let g = (gamma(m, rho, beta, &c).unwrap(), gamma(m, hi, beta, &c).unwrap());
        for (a, b) in [t, x, g] {
            prop_assert!(a > 0.0 && b > 0.0);
            prop_assert!(a > b);
        }
    }

    #[test]
    fn gap_is_shift_invariant(ls in losses(12), c in -100.0..100.0f64) {
        let inst = LossInstance::new(ls.clone()).unwrap();
        let shifted = LossInstance::new(ls.iter().map(|l| l + c).collect()).unwrap();
        let (a, b) = (inst.gap(), shifted.gap());
        if a.is_finite() {
            prop_assert!((a.get() - b.get()).abs() <= 1e-9);
        } else {
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn min_index_survives_monotone_maps(ls in losses(12), a in 0.01..10.0f64, b in -5.0..5.0f64) {
        let inst = LossInstance::new(ls.clone()).unwrap();
        let mapped = LossInstance::new(ls.iter().map(|l| a * l + b).collect()).unwrap();
        let cubed = LossInstance::new(ls.iter().map(|l| l * l * l).collect()).unwrap();
        prop_assert_eq!(inst.min_index(), mapped.min_index());
        prop_assert_eq!(inst.min_index(), cubed.min_index());
    }

    #[test]
    fn gap_expression_matches_instance_gap(ls in losses(12)) {
        let n = ls.len();
        let inst = LossInstance::new(ls.clone()).unwrap();
        let all: Vec<usize> = (0..n).collect();
        let e = LossExpr::gap_of_indices(&all).unwrap();
        prop_assert_eq!(eval_on(&e, &ls).unwrap(), inst.gap());
    }

    #[test]
    fn structured_queries_respect_their_bound(
        ls in losses(12),
        deltas in prop::collection::vec(-1.0..=1.0f64, 12),
        split in 1usize..12,
        mask in 1u32..4096,
        xi_val in 0.01..10.0f64,
    ) {
        let n = ls.len();
        prop_assume!(n >= 2);
        let split = split.min(n - 1);
        let c1: Vec<usize> = (0..split).collect();
        let c2: Vec<usize> = (split..n).collect();
        let subset: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        prop_assume!(!subset.is_empty());
        let k = (usize::BITS - (n - 1).leading_zeros()).max(1);
        let moved: Vec<f64> = ls.iter().zip(&deltas).map(|(l, d)| l + d).collect();
        for e in [build_bintree_query(&c1, &c2).unwrap(), build_tilde_loss(&subset, n, k, xi_val).unwrap()] {
            prop_assert!(e.sensitivity_bound() <= 1.0);
            let a = eval_on(&e, &ls).unwrap().get();
            let b = eval_on(&e, &moved).unwrap().get();
            if a.is_finite() && b.is_finite() {
                prop_assert!((a - b).abs() <= e.sensitivity_bound() + 1e-9, "{e}");
            }
        }
    }

    #[test]
    fn topup_variance_is_nonnegative(
        m in 1usize..200,
        rho in 1e-3..1e3f64,
        weights in prop::collection::vec(1e-6..1.0f64, 1..200),
    ) {
        // A random partition of rho into at most m rounds.
        let w = &weights[..weights.len().min(m)];
        let total: f64 = w.iter().sum();
        for x in w {
            let plan = EqualBudgetPlan::new(2 * m, 2.0 * rho, rho * x / total).unwrap();
            prop_assert!(plan.topup_variance >= 0.0);
            let target = 1.0 / (2.0 * rho * x / total);
            let got = plan.averaged_variance() + plan.topup_variance;
            prop_assert!((got - target).abs() <= 1e-9 * target);
        }
    }
}
