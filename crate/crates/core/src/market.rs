//! Market primitives: valuation and cost families, the average-cost tariff,
//! the market instance, demand profiles, and assumption validation.
//!
//! Function families are closed enums rather than arbitrary callables so that
//! derivatives are analytic, invariants are checkable, and solvers can invert
//! marginal valuations in closed form. Finite differences appear only in the
//! validation report and in tests.

use serde::Deserialize;

use crate::{Error, Result};

/// A customer's valuation of consumed energy, `v(q)` in currency.
///
/// Both families are concave, non-decreasing, and satisfy `v(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValuationFn {
    /// `v(q) = alpha * q`
    Linear { alpha: f64 },
    /// `v(q) = alpha * ln(1 + q)`
    Log { alpha: f64 },
}

/// Demand implied by a marginal price, possibly unbounded.
///
/// `Unbounded` arises for linear valuations whenever the marginal price does
/// not exceed the slope: the user would consume without limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemandBound {
    Finite(f64),
    Unbounded,
}

impl ValuationFn {
    pub fn linear(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(ValuationFn::Linear { alpha })
    }

    pub fn log(alpha: f64) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(ValuationFn::Log { alpha })
    }

    /// Evaluates `v(q)`. `q` must be non-negative.
    pub fn value(&self, q: f64) -> Result<f64> {
        check_quantity(q)?;
        Ok(match *self {
            ValuationFn::Linear { alpha } => alpha * q,
            ValuationFn::Log { alpha } => alpha * (1.0 + q).ln(),
        })
    }

    /// Evaluates the marginal valuation `v'(q)`. `q` must be non-negative.
    pub fn grad(&self, q: f64) -> Result<f64> {
        check_quantity(q)?;
        Ok(match *self {
            ValuationFn::Linear { alpha } => alpha,
            ValuationFn::Log { alpha } => alpha / (1.0 + q),
        })
    }

    /// Marginal valuation at zero; the activity threshold in every
    /// equilibrium condition.
    pub fn grad_at_zero(&self) -> f64 {
        match *self {
            ValuationFn::Linear { alpha } | ValuationFn::Log { alpha } => alpha,
        }
    }

    /// The demand at which `v'(q)` equals `marginal_price`, clamped to zero
    /// when even the first unit is not worth that price.
    ///
    /// For the linear family the marginal valuation is flat, so any price at
    /// or below the slope leaves the demand unbounded.
    pub fn demand_at_marginal_price(&self, marginal_price: f64) -> DemandBound {
        match *self {
            ValuationFn::Linear { alpha } => {
                if marginal_price > alpha {
                    DemandBound::Finite(0.0)
                } else {
                    DemandBound::Unbounded
                }
            }
            ValuationFn::Log { alpha } => {
                if marginal_price <= 0.0 {
                    DemandBound::Unbounded
                } else {
                    DemandBound::Finite((alpha / marginal_price - 1.0).max(0.0))
                }
            }
        }
    }
}

/// Generation cost `C(g)` for total demand `g`.
///
/// `Quadratic { beta, b }` is `C(g) = beta*g^2 + b*g`. Strict convexity
/// requires `beta > 0`; construction tolerates `beta == 0` so that
/// [`validate_assumptions`] can report the violation explicitly, but every
/// solver rejects such configs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostFn {
    Quadratic { beta: f64, b: f64 },
}

impl CostFn {
    pub fn quadratic(beta: f64, b: f64) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::Domain(format!(
                "cost coefficient beta must be finite and >= 0, got {beta}"
            )));
        }
        if !b.is_finite() || b < 0.0 {
            return Err(Error::Domain(format!(
                "cost coefficient b must be finite and >= 0, got {b}"
            )));
        }
        Ok(CostFn::Quadratic { beta, b })
    }

    /// Evaluates `C(g)`. `g` must be non-negative.
    pub fn value(&self, g: f64) -> Result<f64> {
        check_quantity(g)?;
        let CostFn::Quadratic { beta, b } = *self;
        Ok(beta * g * g + b * g)
    }

    /// Evaluates the marginal cost `C'(g)`. `g` must be non-negative.
    pub fn marginal(&self, g: f64) -> Result<f64> {
        check_quantity(g)?;
        let CostFn::Quadratic { beta, b } = *self;
        Ok(2.0 * beta * g + b)
    }

    /// The average-cost tariff derived from this cost function.
    pub fn price(&self) -> PriceFn {
        PriceFn { cost: *self }
    }

    pub fn is_strictly_convex(&self) -> bool {
        let CostFn::Quadratic { beta, .. } = *self;
        beta > 0.0
    }
}

/// Average-cost tariff `p(g) = C(g)/g`, extended to `g = 0` by its right
/// limit so the activity threshold `v'(0) < p(0)` is computable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceFn {
    cost: CostFn,
}

impl PriceFn {
    /// Evaluates `p(g)`. `g` must be non-negative; `p(0)` is the right limit.
    pub fn value(&self, g: f64) -> Result<f64> {
        check_quantity(g)?;
        let CostFn::Quadratic { beta, b } = self.cost;
        Ok(beta * g + b)
    }

    /// Evaluates `p'(g)`, analytic per family.
    pub fn deriv(&self, g: f64) -> Result<f64> {
        check_quantity(g)?;
        let CostFn::Quadratic { beta, .. } = self.cost;
        Ok(beta)
    }
}

/// One game instance: the population's valuations plus the generation cost.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketConfig {
    valuations: Vec<ValuationFn>,
    cost: CostFn,
}

impl MarketConfig {
    /// Builds an instance. The population must be non-empty.
    pub fn new(valuations: Vec<ValuationFn>, cost: CostFn) -> Result<Self> {
        if valuations.is_empty() {
            return Err(Error::Domain("population must have at least one user".into()));
        }
        Ok(MarketConfig { valuations, cost })
    }

    pub fn n_users(&self) -> usize {
        self.valuations.len()
    }

    pub fn valuations(&self) -> &[ValuationFn] {
        &self.valuations
    }

    pub fn valuation(&self, i: usize) -> &ValuationFn {
        &self.valuations[i]
    }

    pub fn cost(&self) -> &CostFn {
        &self.cost
    }

    pub fn price(&self) -> PriceFn {
        self.cost.price()
    }

    /// Parses an instance from a TOML document. See the crate README for the
    /// schema; `alpha_rule = "spread(lo,hi)"` assigns
    /// `alpha_i = lo + (i-1)*(hi-lo)/(N-1)`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let doc: ConfigDoc =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        doc.build()
    }

    /// Reads and parses an instance from a file path.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }
}

/// A demand profile `q` with its cached total `g = sum_i q_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandProfile {
    q: Vec<f64>,
    total: f64,
}

impl DemandProfile {
    /// Builds a profile; every coordinate must be finite and non-negative.
    pub fn new(q: Vec<f64>) -> Result<Self> {
        for (i, &qi) in q.iter().enumerate() {
            if !qi.is_finite() || qi < 0.0 {
                return Err(Error::Domain(format!(
                    "demand q[{i}] must be finite and >= 0, got {qi}"
                )));
            }
        }
        let total = q.iter().sum();
        Ok(DemandProfile { q, total })
    }

    /// All users at the same demand level.
    pub fn uniform(n: usize, level: f64) -> Result<Self> {
        Self::new(vec![level; n])
    }

    pub fn zero(n: usize) -> Self {
        DemandProfile { q: vec![0.0; n], total: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.q[i]
    }

    pub fn values(&self) -> &[f64] {
        &self.q
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Aggregate demand of everyone except user `i`.
    pub fn total_without(&self, i: usize) -> f64 {
        (self.total - self.q[i]).max(0.0)
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::Domain(format!(
            "valuation coefficient alpha must be finite and > 0, got {alpha}"
        )));
    }
    Ok(())
}

fn check_quantity(x: f64) -> Result<()> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!(
            "quantity must be finite and >= 0, got {x}"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Assumption validation
// ---------------------------------------------------------------------------

/// Sampling grid for [`validate_assumptions`]: `points` equally spaced
/// samples covering `(0, g_max]`.
#[derive(Debug, Clone, Copy)]
pub struct SampleGrid {
    pub g_max: f64,
    pub points: usize,
}

impl SampleGrid {
    pub fn new(g_max: f64, points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::Usage(format!(
                "sample grid needs at least 2 points, got {points}"
            )));
        }
        if !g_max.is_finite() || g_max <= 0.0 {
            return Err(Error::Usage(format!(
                "sample grid g_max must be finite and > 0, got {g_max}"
            )));
        }
        Ok(SampleGrid { g_max, points })
    }

    fn samples(&self) -> impl Iterator<Item = f64> + '_ {
        let step = self.g_max / self.points as f64;
        (1..=self.points).map(move |k| k as f64 * step)
    }
}

/// Pass/fail result for one assumption clause.
#[derive(Debug, Clone)]
pub struct ClauseResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Outcome of sampling-based validation of the model assumptions.
///
/// Every clause must pass for the solver guarantees (existence, uniqueness,
/// bisection monotonicity) to hold.
#[derive(Debug, Clone)]
pub struct AssumptionReport {
    pub clauses: Vec<ClauseResult>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.passed)
    }
}

/// Checks the model assumptions on a finite grid: concavity and monotonicity
/// of each valuation, strict convexity and positivity of the cost,
/// monotonicity of the average-cost tariff, and convex increasing payments
/// with increasing marginal payment.
///
/// The checks are necessary conditions sampled by finite differences, not
/// symbolic proofs; a grid of at least 100 points over the relevant demand
/// range is expected.
pub fn validate_assumptions(cfg: &MarketConfig, grid: &SampleGrid) -> Result<AssumptionReport> {
    const TOL: f64 = 1e-9;

    let mut clauses = Vec::new();

    // Each v_i non-decreasing with non-increasing marginal on the grid.
    let mut val_ok = true;
    let mut val_detail = String::from("all valuations concave and non-decreasing");
    'users: for (i, v) in cfg.valuations().iter().enumerate() {
        let mut prev_grad = v.grad(0.0)?;
        if prev_grad < -TOL {
            val_ok = false;
            val_detail = format!("v_{i} decreasing at 0");
            break;
        }
        for g in grid.samples() {
            let grad = v.grad(g)?;
            if grad < -TOL {
                val_ok = false;
                val_detail = format!("v_{i} decreasing at q={g}");
                break 'users;
            }
            if grad > prev_grad + TOL {
                val_ok = false;
                val_detail = format!("v_{i} marginal valuation increasing near q={g}");
                break 'users;
            }
            prev_grad = grad;
        }
        let v0 = v.value(0.0)?;
        if v0.abs() > TOL {
            val_ok = false;
            val_detail = format!("v_{i}(0) = {v0}, expected 0");
            break;
        }
    }
    clauses.push(ClauseResult {
        name: "valuations_concave_nondecreasing",
        passed: val_ok,
        detail: val_detail,
    });

    // C strictly convex: marginal cost strictly increasing on the grid.
    let mut convex_ok = true;
    let mut convex_detail = String::from("marginal cost strictly increasing");
    let mut prev_marginal = cfg.cost().marginal(0.0)?;
    let strict_step = grid.g_max / grid.points as f64 * 1e-12;
    for g in grid.samples() {
        let marginal = cfg.cost().marginal(g)?;
        if marginal <= prev_marginal + strict_step {
            convex_ok = false;
            convex_detail = format!("marginal cost not strictly increasing near g={g}");
            break;
        }
        prev_marginal = marginal;
    }
    clauses.push(ClauseResult {
        name: "cost_strictly_convex",
        passed: convex_ok,
        detail: convex_detail,
    });

    // C(g) > 0 for g > 0 on the grid.
    let mut positive_ok = true;
    let mut positive_detail = String::from("cost positive for positive demand");
    for g in grid.samples() {
        if cfg.cost().value(g)? <= 0.0 {
            positive_ok = false;
            positive_detail = format!("C({g}) <= 0");
            break;
        }
    }
    clauses.push(ClauseResult {
        name: "cost_positive",
        passed: positive_ok,
        detail: positive_detail,
    });

    // p non-decreasing on the grid.
    let price = cfg.price();
    let mut price_ok = true;
    let mut price_detail = String::from("average-cost price non-decreasing");
    let mut prev_price = price.value(0.0)?;
    for g in grid.samples() {
        let p = price.value(g)?;
        if p < prev_price - TOL {
            price_ok = false;
            price_detail = format!("price decreasing near g={g}");
            break;
        }
        prev_price = p;
    }
    clauses.push(ClauseResult {
        name: "price_monotone",
        passed: price_ok,
        detail: price_detail,
    });

    // Payment t_i(q_i) = q_i * p(q_i + s) increasing and convex in q_i, with
    // increasing marginal payment, for rest-of-population totals s at both
    // ends of the grid.
    let mut payment_ok = true;
    let mut payment_detail = String::from("payment increasing convex, marginal payment increasing");
    'outer: for s in [0.0, grid.g_max / 2.0] {
        let pts: Vec<f64> = std::iter::once(0.0).chain(grid.samples()).collect();
        let mut prev_t = 0.0 * price.value(s)?;
        let mut prev_diff = f64::NEG_INFINITY;
        let mut prev_marginal = f64::NEG_INFINITY;
        for w in pts.windows(2) {
            let (a, bq) = (w[0], w[1]);
            let t_a = a * price.value(a + s)?;
            let t_b = bq * price.value(bq + s)?;
            if w[0] == 0.0 {
                prev_t = t_a;
            }
            if t_b < prev_t - TOL {
                payment_ok = false;
                payment_detail = format!("payment decreasing near q_i={bq} (s={s})");
                break 'outer;
            }
            let diff = t_b - t_a;
            if diff < prev_diff - TOL {
                payment_ok = false;
                payment_detail = format!("payment not convex near q_i={bq} (s={s})");
                break 'outer;
            }
            let marginal = price.value(bq + s)? + bq * price.deriv(bq + s)?;
            if marginal < prev_marginal - TOL {
                payment_ok = false;
                payment_detail = format!("marginal payment decreasing near q_i={bq} (s={s})");
                break 'outer;
            }
            prev_t = t_b;
            prev_diff = diff;
            prev_marginal = marginal;
        }
    }
    clauses.push(ClauseResult {
        name: "payment_convex_increasing",
        passed: payment_ok,
        detail: payment_detail,
    });

    Ok(AssumptionReport { clauses })
}

// ---------------------------------------------------------------------------
// Configuration document
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    n_users: usize,
    valuation: ValuationDoc,
    cost: CostDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct ValuationDoc {
    family: String,
    alpha: Option<f64>,
    alpha_rule: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct CostDoc {
    beta: f64,
    b: f64,
}

impl ConfigDoc {
    fn build(self) -> Result<MarketConfig> {
        if self.n_users == 0 {
            return Err(Error::Config("n_users must be at least 1".into()));
        }
        let valuations = self.valuation.build(self.n_users)?;
        let cost = self.cost.build()?;
        MarketConfig::new(valuations, cost)
    }
}

impl ValuationDoc {
    pub(crate) fn build(&self, n_users: usize) -> Result<Vec<ValuationFn>> {
        let alphas = match (self.alpha, &self.alpha_rule) {
            (Some(a), None) => vec![a; n_users],
            (None, Some(rule)) => spread_alphas(rule, n_users)?,
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "valuation must set exactly one of alpha, alpha_rule".into(),
                ))
            }
            (None, None) => {
                return Err(Error::Config(
                    "valuation must set one of alpha, alpha_rule".into(),
                ))
            }
        };
        alphas
            .into_iter()
            .map(|a| match self.family.as_str() {
                "linear" => ValuationFn::linear(a),
                "log" => ValuationFn::log(a),
                other => Err(Error::Config(format!(
                    "unknown valuation family {other:?}; expected \"linear\" or \"log\""
                ))),
            })
            .collect()
    }
}

impl CostDoc {
    pub(crate) fn build(&self) -> Result<CostFn> {
        CostFn::quadratic(self.beta, self.b)
    }
}

/// Parses `spread(lo,hi)` and assigns `alpha_i = lo + (i-1)*(hi-lo)/(N-1)`.
fn spread_alphas(rule: &str, n_users: usize) -> Result<Vec<f64>> {
    let inner = rule
        .trim()
        .strip_prefix("spread(")
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| {
            Error::Config(format!("unknown alpha_rule {rule:?}; expected \"spread(lo,hi)\""))
        })?;
    let mut parts = inner.split(',');
    let (lo, hi) = match (parts.next(), parts.next(), parts.next()) {
        (Some(lo), Some(hi), None) => {
            let lo: f64 = lo.trim().parse().map_err(|_| {
                Error::Config(format!("cannot parse spread lower bound {lo:?}"))
            })?;
            let hi: f64 = hi.trim().parse().map_err(|_| {
                Error::Config(format!("cannot parse spread upper bound {hi:?}"))
            })?;
            (lo, hi)
        }
        _ => {
            return Err(Error::Config(format!(
                "alpha_rule {rule:?} must have exactly two arguments"
            )))
        }
    };
    if n_users < 2 {
        return Err(Error::Config(
            "alpha_rule spread(lo,hi) requires n_users >= 2".into(),
        ));
    }
    let span = hi - lo;
    Ok((0..n_users)
        .map(|i| lo + i as f64 * span / (n_users - 1) as f64)
        .collect())
}
