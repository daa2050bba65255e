//! Spectral-Galerkin empirical Bayes toolkit for linear Gaussian inverse
//! problems whose prior covariance, noise covariance and forward map do not
//! share an eigenbasis.
//!
//! The crate works on finite spectral truncations. [`sequence`] holds the
//! coefficient-space primitives (weighted norms, smoothness balls, the
//! self-similarity certificate, truth families); [`operators`] builds
//! covariance spectra and whitened forward maps, including the torus
//! examples with multiplication-operator perturbations of the Laplacian;
//! [`eb`] implements the marginal-likelihood regularity estimator and its
//! bound indices; [`posterior`] the conjugate Gaussian posteriors, solves
//! and Monte Carlo identity checks; [`lab`] the contraction experiments and
//! rate regression; [`report`] persistence; [`cli`] the `galeb` command-line
//! front end.

pub mod cli;
pub mod eb;
pub mod error;
pub mod lab;
pub mod operators;
pub mod posterior;
pub mod report;
pub mod rng;
pub mod sequence;

pub use error::{Error, Result};
