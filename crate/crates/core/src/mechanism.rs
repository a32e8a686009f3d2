//! The incentive layer: externality-based price adjustments added to the
//! average-cost bill, the two concrete instances (budget deficit and budget
//! surplus), and executable checks of their properties.
//!
//! The incentive seen by user `i` is
//! `I_i(q) = ||q_-i|| * (h(||q_-i||) - p(||q||))`, where `h` estimates the
//! price without user `i`. It charges (or rebates) each user an estimate of
//! the externality its demand imposes on everyone else's bill, which aligns
//! the strategic game's stationarity conditions with the surplus-maximizing
//! ones. No choice of `h` balances the budget exactly; see
//! [`impossibility_demo`] for the numeric witness.

use crate::equilibrium::{solve_optimal, SolverSettings};
use crate::market::{DemandProfile, MarketConfig};
use crate::{Error, Result};

/// Slack allowed when checking sign properties at the optimum.
const IR_TOL: f64 = 1e-9;

/// Which price estimate `h` the mechanism uses.
///
/// `Deficit` takes `h(g) = p(g)`: incentives are never positive and the
/// collected payments fall short of cost. `Surplus` takes
/// `h(g) = p(N g / (N-1))`: the sum of incentives is never negative, at the
/// price of taxing uneven profiles. The surplus instance divides by `N - 1`
/// and is undefined for a single user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MechanismSpec {
    Deficit,
    Surplus,
}

impl MechanismSpec {
    pub fn deficit() -> Self {
        MechanismSpec::Deficit
    }

    pub fn surplus() -> Self {
        MechanismSpec::Surplus
    }

    /// Checks that this instance is defined for the given population.
    pub fn validate_for(&self, cfg: &MarketConfig) -> Result<()> {
        if *self == MechanismSpec::Surplus && cfg.n_users() < 2 {
            return Err(Error::Domain(
                "the budget-surplus mechanism needs at least two users".into(),
            ));
        }
        Ok(())
    }

    /// The price estimate `h(g)` for the rest-of-population demand `g`.
    pub fn h(&self, cfg: &MarketConfig, g: f64) -> Result<f64> {
        let price = cfg.price();
        match self {
            MechanismSpec::Deficit => price.value(g),
            MechanismSpec::Surplus => {
                self.validate_for(cfg)?;
                let n = cfg.n_users() as f64;
                price.value(n * g / (n - 1.0))
            }
        }
    }
}

impl std::fmt::Display for MechanismSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MechanismSpec::Deficit => "deficit",
            MechanismSpec::Surplus => "surplus",
        })
    }
}

fn check_profile(cfg: &MarketConfig, q: &DemandProfile, i: usize) -> Result<()> {
    if q.len() != cfg.n_users() {
        return Err(Error::Usage(format!(
            "profile has {} entries for {} users",
            q.len(),
            cfg.n_users()
        )));
    }
    if i >= q.len() {
        return Err(Error::Usage(format!(
            "user index {i} out of range for {} users",
            q.len()
        )));
    }
    Ok(())
}

/// The incentive `I_i(q) = ||q_-i|| (h(||q_-i||) - p(||q||))`.
pub fn incentive(
    mech: &MechanismSpec,
    cfg: &MarketConfig,
    q: &DemandProfile,
    i: usize,
) -> Result<f64> {
    check_profile(cfg, q, i)?;
    mech.validate_for(cfg)?;
    let rest = q.total_without(i);
    let p_all = cfg.price().value(q.total())?;
    Ok(rest * (mech.h(cfg, rest)? - p_all))
}

/// The bill of user `i`: the average-cost payment `q_i p(||q||)` plus the
/// incentive when a mechanism is active.
pub fn payment(
    mech: Option<&MechanismSpec>,
    cfg: &MarketConfig,
    q: &DemandProfile,
    i: usize,
) -> Result<f64> {
    check_profile(cfg, q, i)?;
    let base = q.get(i) * cfg.price().value(q.total())?;
    match mech {
        Some(m) => Ok(base + incentive(m, cfg, q, i)?),
        None => Ok(base),
    }
}

/// The surplus of user `i` in the incentivized game,
/// `W_i = v_i(q_i) - ||q|| p(||q||) + ||q_-i|| h(||q_-i||)`.
///
/// Algebraically identical to `U_i + I_i`; the two routes are compared in
/// tests rather than assumed.
pub fn incentivized_surplus(
    mech: &MechanismSpec,
    cfg: &MarketConfig,
    q: &DemandProfile,
    i: usize,
) -> Result<f64> {
    check_profile(cfg, q, i)?;
    mech.validate_for(cfg)?;
    let total = q.total();
    let rest = q.total_without(i);
    let value = cfg.valuation(i).value(q.get(i))?;
    Ok(value - total * cfg.price().value(total)? + rest * mech.h(cfg, rest)?)
}

/// Aggregate money flows of the mechanism at a profile.
#[derive(Debug, Clone, Copy)]
pub struct BudgetReport {
    /// `sum_i I_i(q)`; non-positive for the deficit instance, non-negative
    /// for the surplus instance.
    pub total_incentive: f64,
    /// `sum_i o_i(q)`, the payments actually collected.
    pub total_payment: f64,
    /// `C(||q||)`, what the utility must recover.
    pub cost: f64,
}

/// Sums incentives and payments and evaluates the generation cost, all
/// independently, so that `total_payment - cost ~= total_incentive` can be
/// checked rather than assumed.
pub fn budget_report(
    mech: &MechanismSpec,
    cfg: &MarketConfig,
    q: &DemandProfile,
) -> Result<BudgetReport> {
    mech.validate_for(cfg)?;
    let mut total_incentive = 0.0;
    let mut total_payment = 0.0;
    for i in 0..cfg.n_users() {
        total_incentive += incentive(mech, cfg, q, i)?;
        total_payment += payment(Some(mech), cfg, q, i)?;
    }
    Ok(BudgetReport {
        total_incentive,
        total_payment,
        cost: cfg.cost().value(q.total())?,
    })
}

/// Numeric witness that no `h` balances the budget.
///
/// Budget balance forces `h` to satisfy, for the same scale `theta`, both
/// `h(theta/N) = p(theta/(N-1))` (every user consuming equally) and
/// `h(theta/(N-1)) = p(theta/(N-1))` (one user idle). The second, read
/// across scales, says `h = p` everywhere; the first then demands
/// `p(theta/N) = p(theta/(N-1))`, so the reported gap
/// `p(theta/(N-1)) - p(theta/N)` must vanish. A strictly increasing tariff
/// makes the gap positive for every `theta > 0`; only `theta = 0` escapes.
#[derive(Debug, Clone, Copy)]
pub struct ImpossibilityWitness {
    pub theta: f64,
    /// Value `h` must take at `theta/N`.
    pub required_at_uniform: f64,
    /// Value `h` must take at `theta/(N-1)`.
    pub required_at_inactive: f64,
    /// `p(theta/(N-1)) - p(theta/N)`; positive whenever `theta > 0`.
    pub gap: f64,
}

impl std::fmt::Display for ImpossibilityWitness {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "theta = {}: budget balance needs h(theta/N) = {} and h(theta/(N-1)) = {}; \
             a single h must close the gap p(theta/(N-1)) - p(theta/N) = {}",
            self.theta, self.required_at_uniform, self.required_at_inactive, self.gap
        )
    }
}

pub fn impossibility_demo(cfg: &MarketConfig, theta: f64) -> Result<ImpossibilityWitness> {
    if !theta.is_finite() || theta < 0.0 {
        return Err(Error::Domain(format!(
            "theta must be finite and >= 0, got {theta}"
        )));
    }
    let n = cfg.n_users();
    if n < 2 {
        return Err(Error::Domain(
            "the budget-balance argument needs at least two users".into(),
        ));
    }
    let price = cfg.price();
    let at_inactive = price.value(theta / (n as f64 - 1.0))?;
    let at_uniform = price.value(theta / n as f64)?;
    Ok(ImpossibilityWitness {
        theta,
        required_at_uniform: at_inactive,
        required_at_inactive: at_inactive,
        gap: at_inactive - at_uniform,
    })
}

/// Individual rationality of a mechanism instance at the optimum.
#[derive(Debug, Clone)]
pub struct RationalityReport {
    /// `W_i` for every user at the optimal profile.
    pub w_at_optimum: Vec<f64>,
    /// Per-user margin `h(||mu_-i||) - p(||mu_-i||)` of the sufficient
    /// condition; non-negative margins guarantee the property.
    pub sufficient_margins: Vec<f64>,
    pub passes: bool,
}

/// Solves for the optimum and evaluates every user's incentivized surplus
/// there; the mechanism is individually rational when none is negative.
pub fn individual_rationality_check(
    mech: &MechanismSpec,
    cfg: &MarketConfig,
    settings: &SolverSettings,
) -> Result<RationalityReport> {
    mech.validate_for(cfg)?;
    let optimum = solve_optimal(cfg, settings)?;
    let mut w_at_optimum = Vec::with_capacity(cfg.n_users());
    let mut sufficient_margins = Vec::with_capacity(cfg.n_users());
    for i in 0..cfg.n_users() {
        w_at_optimum.push(incentivized_surplus(mech, cfg, &optimum.profile, i)?);
        let rest = optimum.profile.total_without(i);
        sufficient_margins.push(mech.h(cfg, rest)? - cfg.price().value(rest)?);
    }
    let passes = w_at_optimum.iter().all(|&w| w >= -IR_TOL);
    Ok(RationalityReport {
        w_at_optimum,
        sufficient_margins,
        passes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::{CostFn, ValuationFn};
    use crate::rng::SplitMix64;

    fn config(n: usize) -> MarketConfig {
        let v = ValuationFn::linear(10.0).unwrap();
        MarketConfig::new(vec![v; n], CostFn::quadratic(1.0, 1.0).unwrap()).unwrap()
    }

    fn example2_config(n: usize) -> MarketConfig {
        let valuations = (0..n)
            .map(|i| {
                ValuationFn::log(10.0 + i as f64 / (n as f64 - 1.0)).unwrap()
            })
            .collect();
        MarketConfig::new(valuations, CostFn::quadratic(1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn deficit_incentive_two_users() {
        let cfg = config(2);
        let q = DemandProfile::new(vec![1.0, 1.0]).unwrap();
        let i_d = incentive(&MechanismSpec::Deficit, &cfg, &q, 0).unwrap();
        assert!((i_d - (-1.0)).abs() < 1e-12);
    }

    #[test]
    fn surplus_incentive_vanishes_at_uniform() {
        let cfg = config(2);
        let q = DemandProfile::new(vec![1.0, 1.0]).unwrap();
        let i_s = incentive(&MechanismSpec::Surplus, &cfg, &q, 0).unwrap();
        assert!(i_s.abs() < 1e-12);
    }

    #[test]
    fn surplus_incentive_three_users() {
        let cfg = config(3);
        let q = DemandProfile::new(vec![2.0, 1.0, 1.0]).unwrap();
        let i_s = incentive(&MechanismSpec::Surplus, &cfg, &q, 0).unwrap();
        assert!((i_s - (-2.0)).abs() < 1e-12);
    }

    #[test]
    fn surplus_rejects_single_user() {
        let cfg = config(1);
        let q = DemandProfile::new(vec![1.0]).unwrap();
        assert!(matches!(
            incentive(&MechanismSpec::Surplus, &cfg, &q, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn payment_examples() {
        let cfg = config(2);
        let q = DemandProfile::new(vec![1.0, 1.0]).unwrap();
        let base = payment(None, &cfg, &q, 0).unwrap();
        assert!((base - 3.0).abs() < 1e-12);
        let with_deficit = payment(Some(&MechanismSpec::Deficit), &cfg, &q, 0).unwrap();
        assert!((with_deficit - 2.0).abs() < 1e-12);
    }

    #[test]
    fn payment_of_idle_user_under_deficit_is_zero() {
        let cfg = config(2);
        let q = DemandProfile::new(vec![0.0, 1.5]).unwrap();
        let o = payment(Some(&MechanismSpec::Deficit), &cfg, &q, 0).unwrap();
        assert_eq!(o, 0.0);
    }

    #[test]
    fn incentivized_surplus_example() {
        let cfg = config(2);
        let q = DemandProfile::new(vec![1.0, 1.0]).unwrap();
        let w = incentivized_surplus(&MechanismSpec::Deficit, &cfg, &q, 0).unwrap();
        assert!((w - 6.0).abs() < 1e-12);
    }

    #[test]
    fn incentivized_surplus_zero_profile() {
        let cfg = config(3);
        let q = DemandProfile::zero(3);
        for i in 0..3 {
            assert_eq!(
                incentivized_surplus(&MechanismSpec::Deficit, &cfg, &q, i).unwrap(),
                0.0
            );
        }
    }

    #[test]
    fn surplus_identity_w_equals_u_plus_i() {
        // W_i and U_i + I_i are computed through different expressions;
        // they must agree to floating-point accuracy.
        let mut rng = SplitMix64::new(0x5eed);
        for _ in 0..100 {
            let n = rng.uniform_usize(2, 8);
            let cfg = example2_config(n);
            let q = DemandProfile::new((0..n).map(|_| rng.uniform(0.0, 10.0)).collect()).unwrap();
            for mech in [MechanismSpec::Deficit, MechanismSpec::Surplus] {
                for i in 0..n {
                    let w = incentivized_surplus(&mech, &cfg, &q, i).unwrap();
                    let u = cfg.valuation(i).value(q.get(i)).unwrap()
                        - q.get(i) * cfg.price().value(q.total()).unwrap();
                    let via_parts = u + incentive(&mech, &cfg, &q, i).unwrap();
                    let scale = w.abs().max(1.0);
                    assert!(
                        (w - via_parts).abs() <= 1e-12 * scale,
                        "identity broke: {w} vs {via_parts}"
                    );
                }
            }
        }
    }

    #[test]
    fn budget_signs_on_random_profiles() {
        let mut rng = SplitMix64::new(0xb0d9e7);
        for _ in 0..200 {
            let n = rng.uniform_usize(2, 12);
            let cfg = config(n);
            let q = DemandProfile::new((0..n).map(|_| rng.uniform(0.0, 10.0)).collect()).unwrap();
            let deficit = budget_report(&MechanismSpec::Deficit, &cfg, &q).unwrap();
            assert!(deficit.total_incentive <= 1e-9, "{}", deficit.total_incentive);
            let surplus = budget_report(&MechanismSpec::Surplus, &cfg, &q).unwrap();
            assert!(surplus.total_incentive >= -1e-9, "{}", surplus.total_incentive);

            // Collected payments recover cost up to the incentive sum.
            for report in [deficit, surplus] {
                let gap = report.total_payment - report.cost - report.total_incentive;
                let scale = report.cost.abs().max(1.0);
                assert!(gap.abs() <= 1e-10 * scale, "{gap}");
            }
        }
    }

    #[test]
    fn per_user_deficit_incentive_never_positive() {
        let mut rng = SplitMix64::new(0xdef1c17);
        for _ in 0..200 {
            let n = rng.uniform_usize(2, 12);
            let cfg = config(n);
            let q = DemandProfile::new((0..n).map(|_| rng.uniform(0.0, 10.0)).collect()).unwrap();
            for i in 0..n {
                assert!(incentive(&MechanismSpec::Deficit, &cfg, &q, i).unwrap() <= 1e-9);
            }
        }
    }

    #[test]
    fn uniform_profiles_null_surplus_incentive() {
        let mut rng = SplitMix64::new(0x0571f0);
        for _ in 0..100 {
            let n = rng.uniform_usize(2, 12);
            let cfg = config(n);
            let q = DemandProfile::uniform(n, rng.uniform(0.0, 10.0)).unwrap();
            for i in 0..n {
                let i_s = incentive(&MechanismSpec::Surplus, &cfg, &q, i).unwrap();
                assert!(i_s.abs() <= 1e-10, "{i_s}");
            }
        }
    }

    #[test]
    fn alignment_with_aggregate_surplus() {
        // d W_i / d q_i must equal v_i'(q_i) - C'(||q||): the whole point
        // of the incentive shape. Checked by central differences.
        let mut rng = SplitMix64::new(0xa119);
        let h = 1e-5;
        for _ in 0..50 {
            let n = rng.uniform_usize(2, 6);
            let cfg = example2_config(n);
            let values: Vec<f64> = (0..n).map(|_| rng.uniform(0.1, 8.0)).collect();
            for mech in [MechanismSpec::Deficit, MechanismSpec::Surplus] {
                for i in 0..n {
                    let mut plus = values.clone();
                    plus[i] += h;
                    let mut minus = values.clone();
                    minus[i] -= h;
                    let w_plus = incentivized_surplus(
                        &mech,
                        &cfg,
                        &DemandProfile::new(plus).unwrap(),
                        i,
                    )
                    .unwrap();
                    let w_minus = incentivized_surplus(
                        &mech,
                        &cfg,
                        &DemandProfile::new(minus).unwrap(),
                        i,
                    )
                    .unwrap();
                    let fd = (w_plus - w_minus) / (2.0 * h);
                    let q = DemandProfile::new(values.clone()).unwrap();
                    let analytic = cfg.valuation(i).grad(q.get(i)).unwrap()
                        - cfg.cost().marginal(q.total()).unwrap();
                    assert!(
                        (fd - analytic).abs() <= 1e-9 * analytic.abs().max(1.0),
                        "fd {fd} vs analytic {analytic}"
                    );
                }
            }
        }
    }

    #[test]
    fn impossibility_gap_examples() {
        let cfg = config(2);
        let witness = impossibility_demo(&cfg, 2.0).unwrap();
        assert!((witness.required_at_uniform - 3.0).abs() < 1e-12);
        assert!((witness.required_at_inactive - 3.0).abs() < 1e-12);
        assert!((witness.gap - 1.0).abs() < 1e-12);

        let degenerate = impossibility_demo(&cfg, 0.0).unwrap();
        assert_eq!(degenerate.gap, 0.0);

        let v = ValuationFn::linear(10.0).unwrap();
        let cfg10 =
            MarketConfig::new(vec![v; 10], CostFn::quadratic(1.0, 0.0).unwrap()).unwrap();
        let witness10 = impossibility_demo(&cfg10, 9.0).unwrap();
        assert!((witness10.gap - 0.1).abs() < 1e-12);
    }

    #[test]
    fn impossibility_rejects_negative_theta() {
        let cfg = config(2);
        assert!(matches!(
            impossibility_demo(&cfg, -1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn individual_rationality_example2() {
        let settings = SolverSettings::default();
        let cfg = example2_config(10);
        for mech in [MechanismSpec::Deficit, MechanismSpec::Surplus] {
            let report = individual_rationality_check(&mech, &cfg, &settings).unwrap();
            assert!(report.passes, "{mech}: {:?}", report.w_at_optimum);
            assert!(report.sufficient_margins.iter().all(|&m| m >= -1e-9));
        }
    }

    #[test]
    fn individual_rationality_single_linear_user() {
        let settings = SolverSettings::default();
        let cfg = config(1);
        let report =
            individual_rationality_check(&MechanismSpec::Deficit, &cfg, &settings).unwrap();
        assert!(report.passes);
        assert!((report.w_at_optimum[0] - 20.25).abs() < 1e-8);
    }
}
