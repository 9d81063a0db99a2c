//! Trial-offer markets with position bias and power-law social signals.
//!
//! Consumers arriving at the market try one item, chosen with probability
//! proportional to `v_{σ(i)} f(φ_i)` (position visibility times social signal),
//! and buy it with probability `q_i`. This crate provides the choice model,
//! a discrete stochastic simulator, closed-form equilibria with their trace
//! based stability verdicts, the mean-field ODE, and the ensemble metrics used
//! to measure predictability and efficiency.

pub mod dataset;
pub mod equilibrium;
pub mod error;
pub mod metrics;
pub mod model;
pub mod ode;
pub mod signals;
pub mod sim;

pub use error::{Error, Result};
pub use model::{MarketSpec, MarketState, Ranking, SignalSpec};
