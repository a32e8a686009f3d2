//! Property tests for the market primitives: analytic derivatives against
//! finite differences, the tariff identity, payment convexity, and profile
//! bookkeeping.

use coopmarket::market::{CostFn, DemandProfile, ValuationFn};
use proptest::prelude::*;

fn cost_params() -> impl Strategy<Value = (f64, f64)> {
    (0.01f64..10.0, 0.0f64..10.0)
}

fn alpha() -> impl Strategy<Value = f64> {
    0.1f64..50.0
}

proptest! {
    /// p(g) + g p'(g) = C'(g) for every tariff in the family, with the
    /// derivative taken by central differences rather than trusted.
    #[test]
    fn tariff_identity_matches_marginal_cost(
        (beta, b) in cost_params(),
        g in 1e-3f64..1e3,
    ) {
        let cost = CostFn::quadratic(beta, b).unwrap();
        let price = cost.price();
        let h = 1e-4 * g;
        let dp_fd = (price.value(g + h).unwrap() - price.value(g - h).unwrap()) / (2.0 * h);
        let marginal = cost.marginal(g).unwrap();
        let identity_gap = (price.value(g).unwrap() + g * dp_fd - marginal).abs();
        prop_assert!(identity_gap <= 1e-9 * marginal.max(1.0), "gap {identity_gap}");
    }

    /// Analytic marginal valuations agree with central differences on a
    /// log-spaced range of demands.
    #[test]
    fn valuation_grad_matches_finite_differences(
        a in alpha(),
        is_log in any::<bool>(),
        exponent in -3.0f64..3.0,
    ) {
        let v = if is_log {
            ValuationFn::log(a).unwrap()
        } else {
            ValuationFn::linear(a).unwrap()
        };
        let q = 10f64.powf(exponent);
        let h = 1e-6 * q.max(1.0);
        let fd = (v.value(q + h).unwrap() - v.value(q - h).unwrap()) / (2.0 * h);
        let grad = v.grad(q).unwrap();
        prop_assert!((fd - grad).abs() <= 1e-6 * grad.abs().max(1e-12));
    }

    /// The payment q_i p(q_i + s) is midpoint-convex in q_i for any
    /// rest-of-population demand s.
    #[test]
    fn payment_is_midpoint_convex(
        (beta, b) in cost_params(),
        s in 0.0f64..50.0,
        a in 0.0f64..20.0,
        gap1 in 1e-6f64..10.0,
        gap2 in 1e-6f64..10.0,
    ) {
        let price = CostFn::quadratic(beta, b).unwrap().price();
        let (qa, qb, qc) = (a, a + gap1, a + gap1 + gap2);
        let t = |x: f64| x * price.value(x + s).unwrap();
        let w = (qb - qa) / (qc - qa);
        let chord = (1.0 - w) * t(qa) + w * t(qc);
        prop_assert!(t(qb) <= chord + 1e-10 * chord.abs().max(1.0));
    }

    /// The cached profile total always re-sums to the same value.
    #[test]
    fn profile_total_recomputes(values in prop::collection::vec(0.0f64..100.0, 1..40)) {
        let profile = DemandProfile::new(values.clone()).unwrap();
        let resummed: f64 = values.iter().sum();
        let gap = (profile.total() - resummed).abs();
        prop_assert!(gap <= 1e-12 * resummed.max(1.0));
    }

    /// Marginal payment p(g) + q_i p'(g) increases with own demand.
    #[test]
    fn marginal_payment_increasing(
        (beta, b) in cost_params(),
        s in 0.0f64..50.0,
        q in 0.0f64..20.0,
        step in 1e-6f64..5.0,
    ) {
        let price = CostFn::quadratic(beta, b).unwrap().price();
        let marginal = |x: f64| {
            let g = x + s;
            price.value(g).unwrap() + x * price.deriv(g).unwrap()
        };
        prop_assert!(marginal(q + step) >= marginal(q) - 1e-12);
    }
}
