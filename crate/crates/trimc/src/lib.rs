//! Variational Monte Carlo for a Bose gas with three-body hard-core
//! interactions.
//!
//! The crate evaluates the explicit zero-energy scattering solution of the
//! three-body hard core under its modified 6D metric, truncates it into a
//! triple-product (Jastrow) trial state, samples the squared state with
//! Metropolis, and decomposes the gradient-form energy estimator into
//! same-triple, pair-sharing and disjoint-pair channels. Radial quadrature
//! and a quasi-random small-N oracle provide independent references, and a
//! density sweep fits the correction exponent.

pub mod cli;
pub mod integrals;
pub mod jastrow;
pub mod lemma;
pub mod mc;
pub mod metric;
pub mod observables;
pub mod qmc;
pub mod quad;
pub mod scattering;
