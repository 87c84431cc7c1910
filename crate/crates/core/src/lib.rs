//! Off-policy evaluation for finite-action contextual bandits.
//!
//! The crate contains the numerical side of the CAEL-MIPS estimator and its
//! baselines:
//!
//! * [`policy`] and [`data`]: contexts, actions, policies and logged datasets.
//! * [`synthetic`]: the Gaussian-bump synthetic environment and its
//!   ground-truth value.
//! * [`estimators`]: IPS, DM and marginalized IPS point estimators.
//! * [`models`]: the context-action embedding network, the softmax posterior
//!   over actions, the reward / bias / variance losses and the training loop.
//! * [`oracle`]: exact enumeration on small discrete instances, used to check
//!   the estimators and the bias and variance identities they rely on.
//! * [`metrics`] and [`trial`]: per-trial estimation and MSE aggregation.
//!
//! Everything here is `no_std` with `alloc`. File formats, the CLI and
//! parallel sweeps live in the `cael-harness` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod error;
pub mod estimators;
pub mod metrics;
pub mod models;
pub mod oracle;
pub mod policy;
pub mod rng;
pub mod synthetic;
pub mod trial;

pub use data::{Dataset, LoggedSample};
pub use error::{Error, Result};
pub use policy::{ActionId, ContextVector, Policy};
pub use rng::RngSeed;
