//! Hedging laboratory for European calls.
//!
//! The crate compares classical delta and gamma hedging against hedging
//! strategies learned by a small neural network. Prices of every traded
//! instrument follow the Black–Scholes formula with a fixed pricing
//! volatility, while the underlying is simulated from a geometric Brownian
//! motion whose drift, volatility and starting level are drawn per path.
//! Strategies are scored by the mean or the maximum of the absolute
//! profit-and-loss over a scenario set, with proportional transaction costs.
//!
//! Module map:
//!
//! * [`analytics`]: closed-form call prices and greeks.
//! * [`simulator`]: randomized GBM scenario sets.
//! * [`strategies`]: delta and gamma hedge position schedules.
//! * [`accounting`]: per-path PnL and the two loss functionals.
//! * [`neuralnet`]: dense/GRU policy networks, episode gradients and Adam.
//! * [`training`]: minibatch training and out-of-sample evaluation.
//! * [`experiment`]: configuration, result tables, greek surfaces and path traces.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments, clippy::needless_range_loop)]

pub mod accounting;
pub mod analytics;
pub mod error;
pub mod experiment;
pub mod neuralnet;
pub mod simulator;
pub mod strategies;
pub mod training;

pub use error::{Error, Result};
