//! Bayesian semiparametric multivariate mixed model for food
//! authentication: a Dirichlet-process mixture on level-dependent random
//! effects, fit by conjugate Gibbs sampling, with a parametric and an LDA
//! baseline, predictive classification, cross-validation and model
//! comparison.
//!
//! Inverse-Wishart convention: `X ~ IW(df, S)` means `X^{-1} ~ W(df, S^{-1})`,
//! so `E[X] = S / (df - dim - 1)`.

pub mod bpref;
pub mod classify;
pub mod datagen;
pub mod diagnostics;
pub mod domain;
pub mod dpmm;
pub mod error;
pub mod randmat;

pub use error::{Error, Result};
