//! Online semi-supervised learning on manifolds.
//!
//! A two-layer streaming network: a manifold-tiling layer ([`tiling`]) turns
//! each input into a sparse nonnegative code whose channels cover local
//! patches of the data manifold, and a single output neuron ([`ssl`]) learns
//! a binary classifier from that code and an occasionally active label
//! channel. Both layers learn with local Hebbian rules, one sample at a time.
//!
//! The remaining modules supply synthetic streams ([`datasets`]), comparison
//! methods ([`baselines`]), evaluation quantities ([`metrics`]) and the
//! experiment driver ([`harness`]).

pub mod baselines;
pub mod config;
pub mod datasets;
pub mod embed;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod seeds;
pub mod snapshot;
pub mod ssl;
pub mod tiling;

pub use error::{Error, Result};
