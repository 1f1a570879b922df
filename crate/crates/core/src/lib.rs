//! Censored quantile regression with high-dimensional controls, estimated by
//! cross-fitted double/debiased machine learning.
//!
//! The observed outcome is `y = max(y*, c)` for a latent `y*` whose conditional
//! quantile is linear in a treatment `d` and an approximating dictionary `x` of
//! controls. The library estimates the treatment coefficient at a quantile of
//! interest by (1) fitting the censoring probability, a pilot quantile fit, a
//! conditional density, and a weighted projection on auxiliary folds with
//! L1-penalized learners, and (2) solving an orthogonal moment equation on the
//! held-out folds, with a sandwich variance and normal confidence intervals.
//!
//! Modules:
//! - [`data`]: observations, censoring rules, design-matrix expansion, folds.
//! - [`solvers`]: penalized least-squares / logistic / quantile solvers with
//!   post-selection refits and data-driven penalty levels and loadings.
//! - [`nuisance`]: the per-fold nuisance pipeline.
//! - [`dml`]: orthogonal score, fold objectives, point estimation, variance,
//!   confidence intervals, and the orthogonality diagnostic.
//! - [`sim`]: the Monte-Carlo bench (data-generating process, competitor
//!   estimators, metrics, rejection-frequency grids).

pub mod data;
pub mod dml;
mod error;
pub mod math;
pub mod nuisance;
pub mod rng;
pub mod sim;
pub mod solvers;

pub use error::{Error, Result};
