//! Efficiency diagnostics: surplus, the efficiency ratio between Nash and
//! optimal play, the demand ratio, tragedy-of-the-commons detection, and the
//! asymptotic worst-case bound for the identical-linear-valuation regime.

use crate::market::{DemandProfile, MarketConfig};
use crate::{Error, Result};

const TOL: f64 = 1e-9;

/// Aggregate customer surplus `sum_i v_i(q_i) - C(||q||)`.
///
/// Under average-cost pricing the total payments equal the generation cost,
/// so this also equals the sum of individual profits.
pub fn customer_surplus(cfg: &MarketConfig, q: &DemandProfile) -> Result<f64> {
    if q.len() != cfg.n_users() {
        return Err(Error::Usage(format!(
            "profile has {} entries for {} users",
            q.len(),
            cfg.n_users()
        )));
    }
    let mut total = 0.0;
    for (v, &qi) in cfg.valuations().iter().zip(q.values()) {
        total += v.value(qi)?;
    }
    Ok(total - cfg.cost().value(q.total())?)
}

/// Surplus at the Nash profile over surplus at the optimal profile.
///
/// Instances where nobody is worth serving (zero or negative optimal
/// surplus) have no meaningful ratio and are reported as degenerate.
pub fn efficiency_ratio(
    cfg: &MarketConfig,
    nash: &DemandProfile,
    optimal: &DemandProfile,
) -> Result<f64> {
    let surplus_nash = customer_surplus(cfg, nash)?;
    let surplus_opt = customer_surplus(cfg, optimal)?;
    if surplus_opt <= 0.0 {
        return Err(Error::Degenerate(format!(
            "optimal surplus is {surplus_opt}; the efficiency ratio needs it positive"
        )));
    }
    Ok(surplus_nash / surplus_opt)
}

/// True when every user consumes at least its optimal demand and someone
/// strictly overconsumes.
pub fn tragedy_check(nash: &DemandProfile, optimal: &DemandProfile) -> Result<bool> {
    if nash.len() != optimal.len() {
        return Err(Error::Usage(format!(
            "profiles have different lengths: {} vs {}",
            nash.len(),
            optimal.len()
        )));
    }
    let all_at_least = nash
        .values()
        .iter()
        .zip(optimal.values())
        .all(|(&x, &m)| x >= m - TOL);
    let some_strictly_more = nash
        .values()
        .iter()
        .zip(optimal.values())
        .any(|(&x, &m)| x > m + TOL);
    Ok(all_at_least && some_strictly_more)
}

/// Asymptotic lower bound `2 - eta` of the efficiency ratio in the
/// identical-linear-valuation, linear-price regime, as a function of the
/// demand ratio `eta = ||xi|| / ||mu||`.
pub fn worst_case_bound(eta: f64) -> Result<f64> {
    if !(1.0..=2.0).contains(&eta) {
        return Err(Error::Domain(format!(
            "demand ratio must lie in [1, 2], got {eta}"
        )));
    }
    Ok(2.0 - eta)
}

/// Efficiency diagnostics of one instance, comparing Nash and optimal play.
#[derive(Debug, Clone)]
pub struct EfficiencyReport {
    pub n_users: usize,
    pub total_nash: f64,
    pub total_opt: f64,
    pub surplus_nash: f64,
    pub surplus_opt: f64,
    pub efficiency_ratio: f64,
    pub demand_ratio: f64,
    pub tragedy: bool,
    pub worst_case_bound: f64,
}

impl EfficiencyReport {
    /// Evaluates every diagnostic for a Nash/optimal profile pair.
    pub fn evaluate(
        cfg: &MarketConfig,
        nash: &DemandProfile,
        optimal: &DemandProfile,
    ) -> Result<Self> {
        let ratio = efficiency_ratio(cfg, nash, optimal)?;
        let surplus_nash = customer_surplus(cfg, nash)?;
        let surplus_opt = customer_surplus(cfg, optimal)?;
        if optimal.total() <= 0.0 {
            return Err(Error::Degenerate(
                "optimal total demand is zero; the demand ratio is undefined".into(),
            ));
        }
        let demand_ratio = nash.total() / optimal.total();
        Ok(EfficiencyReport {
            n_users: cfg.n_users(),
            total_nash: nash.total(),
            total_opt: optimal.total(),
            surplus_nash,
            surplus_opt,
            efficiency_ratio: ratio,
            demand_ratio,
            tragedy: tragedy_check(nash, optimal)?,
            worst_case_bound: worst_case_bound(demand_ratio.clamp(1.0, 2.0))?,
        })
    }

    pub fn csv_header() -> &'static str {
        "N,total_nash,total_opt,demand_ratio,surplus_nash,surplus_opt,efficiency_ratio"
    }

    /// One CSV row matching [`EfficiencyReport::csv_header`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.n_users,
            self.total_nash,
            self.total_opt,
            self.demand_ratio,
            self.surplus_nash,
            self.surplus_opt,
            self.efficiency_ratio
        )
    }
}
