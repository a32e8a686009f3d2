//! Simulation library for demand-response games under average-cost pricing.
//!
//! A non-profit utility serves `N` customers and recovers its generation cost
//! exactly through the average-cost tariff `p(g) = C(g)/g`. This crate models
//! that market and computes its equilibria:
//!
//! - the price-taker equilibrium of non-strategic users facing a fixed price,
//! - the socially optimal profile maximizing aggregate customer surplus,
//! - the Cournot-Nash equilibrium of strategic users who anticipate prices,
//! - the Nash equilibrium of the incentivized game, in which a per-user
//!   externality charge realigns selfish play with the social optimum.
//!
//! [`metrics`] quantifies the efficiency loss between Nash and optimal play
//! (demand ratio, efficiency ratio), and [`mechanism`] implements the
//! incentive layer together with executable checks of its budget and
//! individual-rationality properties.
//!
//! All types are immutable after construction and all operations are pure, so
//! everything here is safe to use from multiple threads.

pub mod equilibrium;
pub mod market;
pub mod mechanism;
pub mod metrics;
pub mod rng;

mod error;

pub use error::{Error, Result};
