//! Attack/defense laboratory for query-flooding parameter duplication (QPD)
//! model extraction and monitoring-based differential privacy (MDP).
//!
//! The crate is organised by role:
//!
//! * [`data`] loads, cleans, splits and synthesises tabular datasets.
//! * [`models`] trains and serves the target models (logistic regression and
//!   a one-hidden-layer network).
//! * [`mechanisms`] perturbs model responses (Laplace, Gaussian, boundary
//!   randomized response, rounding).
//! * [`attack`] is the adversary: duplicated queries, confidence-interval
//!   driven choice of the duplication count, denoising and Cramer's rule.
//! * [`monitor`] estimates how much training-set information a query stream
//!   has extracted, plus the surrogate-tree warning baseline.
//! * [`defense`] couples the monitor to an adaptive budget allocator and a
//!   perturbation mechanism.
//! * [`metrics`] scores models and extracted copies.
//! * [`harness`] runs seeded experiment sweeps and writes result files.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod data;
pub mod defense;
pub mod error;
pub mod harness;
pub mod mechanisms;
pub mod metrics;
pub mod models;
pub mod monitor;
pub mod rng;

pub use error::{Error, Result};
