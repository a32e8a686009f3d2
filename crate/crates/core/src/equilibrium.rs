//! Equilibrium solvers: price-taker, socially optimal, Cournot-Nash, and the
//! Nash equilibrium of the incentivized game, plus the evolutionary dynamics
//! used to double-check convergence.
//!
//! The optimal and Nash systems are solved by nested one-dimensional
//! root-finding. Given a candidate total demand `G`, each user's stationarity
//! condition is a scalar equation with a decreasing left side and an
//! increasing right side, so per-user demands are unique and found by
//! bisection (or analytic inversion where the family allows it). The map
//! `G -> sum_i q_i(G) - G` is then strictly decreasing, and an outer
//! bisection with bracket doubling pins the consistent total.

use crate::market::{DemandBound, DemandProfile, MarketConfig, ValuationFn};
use crate::mechanism::MechanismSpec;
use crate::{Error, Result};

/// Numerical knobs shared by the solvers.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    /// Absolute width at which a bisection bracket is considered resolved.
    pub tol_root: f64,
    /// Largest acceptable stationarity violation for a converged report.
    pub tol_foc: f64,
    /// Iteration budget for outer loops (bisection steps, response sweeps).
    pub max_outer_iters: usize,
    /// Initial upper end of the growing bracket.
    pub bracket_start: f64,
    /// Bracket growth gives up beyond this point.
    pub bracket_max: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tol_root: 1e-12,
            tol_foc: 1e-8,
            max_outer_iters: 200,
            bracket_start: 1.0,
            bracket_max: (1u64 << 60) as f64,
        }
    }
}

impl SolverSettings {
    fn validate(&self) -> Result<()> {
        if self.tol_root <= 0.0
            || self.tol_foc <= 0.0
            || self.max_outer_iters == 0
            || self.bracket_start <= 0.0
            || self.bracket_max <= self.bracket_start
        {
            return Err(Error::Usage(
                "solver settings must have positive tolerances and a growing bracket".into(),
            ));
        }
        Ok(())
    }
}

/// Which equilibrium a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumKind {
    PriceTaker,
    Optimal,
    Nash,
    NashWithIncentives,
}

impl std::fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            EquilibriumKind::PriceTaker => "price-taker",
            EquilibriumKind::Optimal => "optimal",
            EquilibriumKind::Nash => "nash",
            EquilibriumKind::NashWithIncentives => "nash-incentivized",
        };
        f.write_str(name)
    }
}

/// A solved equilibrium: the profile, how hard it was to find, and how well
/// it satisfies its first-order conditions.
#[derive(Debug, Clone)]
pub struct EquilibriumReport {
    pub profile: DemandProfile,
    pub total_demand: f64,
    pub kind: EquilibriumKind,
    /// Largest absolute violation of the stationarity system.
    pub foc_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl std::fmt::Display for EquilibriumReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "equilibrium: {}", self.kind)?;
        writeln!(f, "converged: {}", self.converged)?;
        writeln!(f, "iterations: {}", self.iterations)?;
        writeln!(f, "foc_residual: {:e}", self.foc_residual)?;
        writeln!(f, "total_demand: {}", self.total_demand)?;
        write!(f, "profile:")?;
        for q in self.profile.values() {
            write!(f, " {q}")?;
        }
        Ok(())
    }
}

impl EquilibriumReport {
    fn from_profile(
        cfg: &MarketConfig,
        kind: EquilibriumKind,
        profile: DemandProfile,
        iterations: usize,
        settings: &SolverSettings,
    ) -> Self {
        let foc_residual = match kind {
            EquilibriumKind::PriceTaker => unreachable!("price-taker residual needs the price"),
            EquilibriumKind::Nash => nash_residual(cfg, &profile),
            EquilibriumKind::Optimal | EquilibriumKind::NashWithIncentives => {
                optimal_residual(cfg, &profile)
            }
        };
        let total_demand = profile.total();
        EquilibriumReport {
            profile,
            total_demand,
            kind,
            foc_residual,
            iterations,
            converged: foc_residual <= settings.tol_foc,
        }
    }
}

/// Demands of non-strategic users facing a fixed unit price: each user's
/// demand is zero when `v'(0) <= price` (ties break to zero) and otherwise
/// solves `v'(q) = price`.
pub fn solve_price_taker(
    cfg: &MarketConfig,
    price: f64,
    settings: &SolverSettings,
) -> Result<EquilibriumReport> {
    settings.validate()?;
    if !price.is_finite() || price < 0.0 {
        return Err(Error::Domain(format!(
            "price must be finite and >= 0, got {price}"
        )));
    }
    let mut q = vec![0.0; cfg.n_users()];
    let mut iterations = 0;
    for (i, v) in cfg.valuations().iter().enumerate() {
        if v.grad_at_zero() <= price {
            continue;
        }
        let h = |x: f64| v.grad(x).expect("x >= 0") - price;
        let (root, iters) = decreasing_root(h, settings, settings.tol_root).map_err(|_| {
            Error::NonConvergence(format!(
                "price-taker demand of user {i} is unbounded at price {price}"
            ))
        })?;
        q[i] = root;
        iterations = iterations.max(iters);
    }
    let profile = DemandProfile::new(q)?;
    let foc_residual = cfg
        .valuations()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let qi = profile.get(i);
            if qi > 0.0 {
                (v.grad(qi).expect("qi >= 0") - price).abs()
            } else {
                (v.grad_at_zero() - price).max(0.0)
            }
        })
        .fold(0.0, f64::max);
    let total_demand = profile.total();
    Ok(EquilibriumReport {
        profile,
        total_demand,
        kind: EquilibriumKind::PriceTaker,
        foc_residual,
        iterations,
        converged: foc_residual <= settings.tol_foc,
    })
}

/// The unique profile maximizing aggregate customer surplus: active users
/// equate marginal valuation with marginal cost at the total.
///
/// Outer bisection runs on `G -> sum_i max(0, (v_i')^-1(C'(G))) - G`, which
/// is strictly decreasing; the inner inversion is analytic per family. For
/// linear valuations the marginal valuation is flat, so users whose slope
/// equals `C'(G)` at the root are rationed: the residual total is split
/// equally among them, which is the symmetric representative of the optimal
/// set and keeps the output deterministic.
pub fn solve_optimal(cfg: &MarketConfig, settings: &SolverSettings) -> Result<EquilibriumReport> {
    settings.validate()?;
    require_strictly_convex(cfg)?;
    let cost = cfg.cost();

    let y0 = cost.marginal(0.0)?;
    if cfg.valuations().iter().all(|v| v.grad_at_zero() <= y0) {
        let profile = DemandProfile::zero(cfg.n_users());
        return Ok(EquilibriumReport::from_profile(
            cfg,
            EquilibriumKind::Optimal,
            profile,
            0,
            settings,
        ));
    }

    let gap = |g: f64| -> f64 {
        let y = cost.marginal(g).expect("g >= 0");
        let mut sum = 0.0;
        for v in cfg.valuations() {
            match v.demand_at_marginal_price(y) {
                DemandBound::Finite(d) => sum += d,
                DemandBound::Unbounded => return f64::INFINITY,
            }
        }
        sum - g
    };

    // Reconstruct the profile at a converged total. Linear users whose slope
    // sits at the marginal cost are the rationed set.
    let build_profile = |g_star: f64| -> Result<DemandProfile> {
        let y = cost.marginal(g_star)?;
        let tie_tol = 1e-9 * y.max(1.0);
        let mut q = vec![0.0; cfg.n_users()];
        let mut rationed = Vec::new();
        let mut assigned = 0.0;
        for (i, v) in cfg.valuations().iter().enumerate() {
            match *v {
                ValuationFn::Linear { alpha } if (alpha - y).abs() <= tie_tol => rationed.push(i),
                _ => match v.demand_at_marginal_price(y) {
                    DemandBound::Finite(d) => {
                        q[i] = d;
                        assigned += d;
                    }
                    // Only reachable when a linear slope exceeds C'(G) by
                    // more than the bracket resolution, which bisection rules
                    // out; ration it rather than fabricate an infinite demand.
                    DemandBound::Unbounded => rationed.push(i),
                },
            }
        }
        if !rationed.is_empty() {
            let share = (g_star - assigned).max(0.0) / rationed.len() as f64;
            for &i in &rationed {
                q[i] = share;
            }
        }
        DemandProfile::new(q)
    };

    let (g_star, iterations) = decreasing_root(gap, settings, settings.tol_root)
        .map_err(|e| Error::NonConvergence(format!("optimal total demand: {e}")))?;
    let mut report = EquilibriumReport::from_profile(
        cfg,
        EquilibriumKind::Optimal,
        build_profile(g_star)?,
        iterations,
        settings,
    );
    // A very steep aggregate map (marginal cost far steeper than marginal
    // valuations) can turn the bracket width into a residual above tol_foc;
    // one retry with the bracket driven to floating-point resolution fixes
    // the conditioning at a bounded extra cost.
    if !report.converged {
        let (g_star, extra) = decreasing_root(gap, settings, 0.0)
            .map_err(|e| Error::NonConvergence(format!("optimal total demand: {e}")))?;
        report = EquilibriumReport::from_profile(
            cfg,
            EquilibriumKind::Optimal,
            build_profile(g_star)?,
            iterations + extra,
            settings,
        );
    }
    Ok(report)
}

/// The Cournot-Nash equilibrium of the strategic game: active users equate
/// marginal valuation with the marginal payment `p(G) + q_i p'(G)`.
///
/// Same nested scheme as [`solve_optimal`]: given `G`, each user's demand is
/// the unique root of a decreasing-minus-increasing scalar equation, found by
/// bisection; the outer bisection makes the demands consistent with `G`.
pub fn solve_nash(cfg: &MarketConfig, settings: &SolverSettings) -> Result<EquilibriumReport> {
    settings.validate()?;
    require_strictly_convex(cfg)?;
    let price = cfg.price();

    let p0 = price.value(0.0)?;
    if cfg.valuations().iter().all(|v| v.grad_at_zero() <= p0) {
        let profile = DemandProfile::zero(cfg.n_users());
        return Ok(EquilibriumReport::from_profile(
            cfg,
            EquilibriumKind::Nash,
            profile,
            0,
            settings,
        ));
    }

    let demands_at = |g: f64, width: f64| -> Vec<f64> {
        let p = price.value(g).expect("g >= 0");
        let dp = price.deriv(g).expect("g >= 0");
        cfg.valuations()
            .iter()
            .map(|v| {
                if v.grad_at_zero() <= p {
                    return 0.0;
                }
                // The root is where the falling v' meets the rising marginal
                // payment, so it lies below (v'(0) - p)/p'; no bracket growth
                // is needed.
                let h = |x: f64| v.grad(x).expect("x >= 0") - p - x * dp;
                let hi = (v.grad_at_zero() - p) / dp + 1.0;
                bisect_decreasing(h, hi, width).0
            })
            .collect()
    };

    let solve_at_width = |width: f64| -> Result<(DemandProfile, usize)> {
        let gap = |g: f64| demands_at(g, width).iter().sum::<f64>() - g;
        let (g_star, iterations) = decreasing_root(gap, settings, width)
            .map_err(|e| Error::NonConvergence(format!("nash total demand: {e}")))?;
        Ok((DemandProfile::new(demands_at(g_star, width))?, iterations))
    };

    let (profile, iterations) = solve_at_width(settings.tol_root)?;
    let mut report =
        EquilibriumReport::from_profile(cfg, EquilibriumKind::Nash, profile, iterations, settings);
    // Same conditioning retry as in solve_optimal.
    if !report.converged {
        let (profile, extra) = solve_at_width(0.0)?;
        report = EquilibriumReport::from_profile(
            cfg,
            EquilibriumKind::Nash,
            profile,
            iterations + extra,
            settings,
        );
    }
    Ok(report)
}

/// Nash equilibrium of the incentivized game, by damped best-response sweeps
/// from the zero profile.
///
/// The incentive term cancels every user's influence on others' bills, so a
/// best response solves `v_i'(x) = C'(x + g_rest)` regardless of the chosen
/// mechanism instance; the fixed point therefore satisfies the same
/// stationarity system as [`solve_optimal`]. Sweeps update users in sequence
/// (each sees the others' latest demands) with damping 0.5; simultaneous
/// updates oscillate once the population is more than a few users.
///
/// The sweep count grows roughly linearly with the population size
/// (about N/2 sweeps); populations beyond ~200 users need a larger
/// `max_outer_iters` than the default.
pub fn solve_nash_with_incentives(
    cfg: &MarketConfig,
    mech: &MechanismSpec,
    settings: &SolverSettings,
) -> Result<EquilibriumReport> {
    settings.validate()?;
    require_strictly_convex(cfg)?;
    mech.validate_for(cfg)?;

    const DAMPING: f64 = 0.5;
    // Sweeps contract per-user errors by the damping factor, but the residual
    // scales the summed coordinate error through C''; stop well below tol_foc.
    const STEP_TOL: f64 = 1e-12;

    let n = cfg.n_users();
    let mut q = vec![0.0f64; n];
    let mut total = 0.0f64;
    let mut sweeps = 0;
    loop {
        if sweeps >= settings.max_outer_iters {
            return Err(Error::NonConvergence(format!(
                "incentivized best-response iteration still moving after {} sweeps",
                settings.max_outer_iters
            )));
        }
        sweeps += 1;
        let mut max_step = 0.0f64;
        for (i, qi) in q.iter_mut().enumerate() {
            let rest = (total - *qi).max(0.0);
            let br = incentivized_best_response(cfg, i, rest, settings)?;
            let next = (1.0 - DAMPING) * *qi + DAMPING * br;
            max_step = max_step.max((next - *qi).abs());
            total += next - *qi;
            *qi = next;
        }
        if max_step <= STEP_TOL {
            break;
        }
    }
    // One undamped polish pass: every coordinate moves at most a couple of
    // step tolerances, and users priced out of the market land exactly on
    // zero instead of a halved-to-dust positive value, which would flip
    // their branch of the stationarity system.
    for (i, qi) in q.iter_mut().enumerate() {
        let rest = (total - *qi).max(0.0);
        let br = incentivized_best_response(cfg, i, rest, settings)?;
        total += br - *qi;
        *qi = br;
    }
    let profile = DemandProfile::new(q)?;
    Ok(EquilibriumReport::from_profile(
        cfg,
        EquilibriumKind::NashWithIncentives,
        profile,
        sweeps,
        settings,
    ))
}

fn incentivized_best_response(
    cfg: &MarketConfig,
    i: usize,
    rest: f64,
    settings: &SolverSettings,
) -> Result<f64> {
    let v = cfg.valuation(i);
    let cost = cfg.cost();
    let marginal_at_rest = cost.marginal(rest)?;
    if v.grad_at_zero() <= marginal_at_rest {
        return Ok(0.0);
    }
    // C' grows at least linearly past C'(rest), bounding the root from above.
    let slope = cost.marginal(rest + 1.0)? - marginal_at_rest;
    let hi = (v.grad_at_zero() - marginal_at_rest) / slope + 1.0;
    let h = |x: f64| v.grad(x).expect("x >= 0") - cost.marginal(x + rest).expect("x >= 0");
    Ok(bisect_decreasing(h, hi, settings.tol_root).0)
}

fn require_strictly_convex(cfg: &MarketConfig) -> Result<()> {
    if !cfg.cost().is_strictly_convex() {
        return Err(Error::Domain(
            "solvers require a strictly convex cost (beta > 0); run validate_assumptions".into(),
        ));
    }
    Ok(())
}

/// Largest violation of the optimality system at `profile`.
fn optimal_residual(cfg: &MarketConfig, profile: &DemandProfile) -> f64 {
    let y = cfg.cost().marginal(profile.total()).expect("total >= 0");
    cfg.valuations()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let qi = profile.get(i);
            if qi > 0.0 {
                (v.grad(qi).expect("qi >= 0") - y).abs()
            } else {
                (v.grad_at_zero() - y).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Largest violation of the Nash system at `profile`.
fn nash_residual(cfg: &MarketConfig, profile: &DemandProfile) -> f64 {
    let price = cfg.price();
    let g = profile.total();
    let p = price.value(g).expect("g >= 0");
    let dp = price.deriv(g).expect("g >= 0");
    cfg.valuations()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let qi = profile.get(i);
            if qi > 0.0 {
                (v.grad(qi).expect("qi >= 0") - p - qi * dp).abs()
            } else {
                (v.grad_at_zero() - p).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

/// Bisects a strictly decreasing function on a known bracket `[0, hi]` with
/// `h(0) > 0 >= h(hi)`.
fn bisect_decreasing(h: impl Fn(f64) -> f64, hi: f64, tol: f64) -> (f64, usize) {
    bisect_on(h, 0.0, hi, tol)
}

fn bisect_on(h: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, usize) {
    let mut iterations = 0;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket at floating-point resolution
        }
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    (0.5 * (lo + hi), iterations)
}

/// Finds the root of a strictly decreasing function with `h(0) > 0`.
///
/// The upper end starts at `bracket_start` and doubles until the sign flips;
/// plain bisection then shrinks the bracket to `width` (a width of zero
/// bisects until the bracket hits floating-point resolution). Errors when the
/// sign never flips below `bracket_max`.
fn decreasing_root(
    h: impl Fn(f64) -> f64,
    settings: &SolverSettings,
    width: f64,
) -> Result<(f64, usize)> {
    let mut growth_steps = 0;
    let mut lo = 0.0;
    let mut hi = settings.bracket_start;
    while h(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        growth_steps += 1;
        if hi > settings.bracket_max {
            return Err(Error::NonConvergence(format!(
                "no sign change in [0, {:e}]",
                settings.bracket_max
            )));
        }
    }
    let (root, iterations) = bisect_on(h, lo, hi, width);
    Ok((root, growth_steps + iterations))
}

// ---------------------------------------------------------------------------
// Evolutionary dynamics
// ---------------------------------------------------------------------------

/// Time-sampled demand states produced by [`replicator_solve`].
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub profiles: Vec<DemandProfile>,
}

impl Trajectory {
    pub fn final_profile(&self) -> &DemandProfile {
        self.profiles.last().expect("trajectory is never empty")
    }

    /// Renders the trajectory as CSV with columns `t, q_1..q_N, total`.
    pub fn to_csv(&self) -> String {
        let n = self.final_profile().len();
        let mut out = String::from("t");
        for i in 1..=n {
            out.push_str(&format!(",q_{i}"));
        }
        out.push_str(",total\n");
        for (t, profile) in self.times.iter().zip(&self.profiles) {
            out.push_str(&format!("{t}"));
            for q in profile.values() {
                out.push_str(&format!(",{q}"));
            }
            out.push_str(&format!(",{}\n", profile.total()));
        }
        out
    }
}

/// One forward-Euler step of the per-user two-strategy dynamics.
///
/// Each user splits a resource budget between "use" and "idle"; the used
/// share `x_i` grows in proportion to the marginal profit, giving
/// `dx_i/dt = x_i (budget_i - x_i) F_i(q) / budget_i` with fitness
/// `F_i = dU_i/dq_i` (or `dW_i/dq_i` when a mechanism is active; the
/// instance does not matter because both share the same marginal). Both
/// `x_i = 0` and `x_i = budget_i` are fixed points.
pub fn replicator_step(
    cfg: &MarketConfig,
    mech: Option<&MechanismSpec>,
    state: &[f64],
    budgets: &[f64],
    dt: f64,
) -> Result<Vec<f64>> {
    check_replicator_args(cfg, mech, state.len(), budgets, dt)?;
    let g: f64 = state.iter().sum();
    let price = cfg.price();
    let mut next = Vec::with_capacity(state.len());
    for (i, (&x, &budget)) in state.iter().zip(budgets).enumerate() {
        if !(0.0..=budget).contains(&x) {
            return Err(Error::Domain(format!(
                "state x[{i}] = {x} outside [0, {budget}]"
            )));
        }
        let v = cfg.valuation(i);
        let fitness = match mech {
            Some(_) => v.grad(x)? - cfg.cost().marginal(g)?,
            None => v.grad(x)? - price.value(g)? - x * price.deriv(g)?,
        };
        let stepped = x + dt * x * (budget - x) * fitness / budget;
        if !stepped.is_finite() || stepped < 0.0 || stepped > budget {
            return Err(Error::StepSize(format!(
                "user {i} left [0, {budget}] in one step (dt = {dt}); reduce dt"
            )));
        }
        next.push(stepped);
    }
    Ok(next)
}

/// Integrates the replicator dynamics from the interior seed
/// `x_i = 0.01 * budget_i` until `t_max`, sampling every step.
///
/// The budgets must exceed the corresponding equilibrium demands, otherwise
/// the cap binds and the dynamics settle away from the game's equilibrium.
pub fn replicator_solve(
    cfg: &MarketConfig,
    mech: Option<&MechanismSpec>,
    budgets: &[f64],
    dt: f64,
    t_max: f64,
) -> Result<Trajectory> {
    check_replicator_args(cfg, mech, budgets.len(), budgets, dt)?;
    if !t_max.is_finite() || t_max <= 0.0 {
        return Err(Error::Domain(format!(
            "t_max must be finite and > 0, got {t_max}"
        )));
    }
    let mut state: Vec<f64> = budgets.iter().map(|b| 0.01 * b).collect();
    let steps = (t_max / dt).ceil() as usize;
    const MAX_SAMPLES: usize = 20_000_000;
    if steps > MAX_SAMPLES {
        return Err(Error::Usage(format!(
            "trajectory would hold {steps} samples (cap {MAX_SAMPLES}); increase dt or \
             decrease t_max"
        )));
    }
    let mut times = Vec::with_capacity(steps + 1);
    let mut profiles = Vec::with_capacity(steps + 1);
    times.push(0.0);
    profiles.push(DemandProfile::new(state.clone())?);
    for k in 1..=steps {
        state = replicator_step(cfg, mech, &state, budgets, dt)?;
        times.push(k as f64 * dt);
        profiles.push(DemandProfile::new(state.clone())?);
    }
    Ok(Trajectory { times, profiles })
}

fn check_replicator_args(
    cfg: &MarketConfig,
    mech: Option<&MechanismSpec>,
    state_len: usize,
    budgets: &[f64],
    dt: f64,
) -> Result<()> {
    if state_len != cfg.n_users() || budgets.len() != cfg.n_users() {
        return Err(Error::Usage(format!(
            "state and budgets must have one entry per user ({})",
            cfg.n_users()
        )));
    }
    if let Some(m) = mech {
        m.validate_for(cfg)?;
    }
    require_strictly_convex(cfg)?;
    for (i, &b) in budgets.iter().enumerate() {
        if !b.is_finite() || b <= 0.0 {
            return Err(Error::Domain(format!(
                "budget[{i}] must be finite and > 0, got {b}"
            )));
        }
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Domain(format!("dt must be finite and > 0, got {dt}")));
    }
    Ok(())
}
