//! Bayesian multivariate linear regression under group sparsity.
//!
//! The model couples a spike-and-slab prior over group supports (with an
//! l2,1-norm slab on active blocks) with an eigendecomposition prior on the
//! unknown response covariance. The crate provides the priors and their exact
//! samplers, the Gaussian likelihood and divergence functionals, a
//! Metropolis-within-Gibbs sampler over (support, coefficients, covariance),
//! the exact finite mixture-of-Gaussians posterior approximation used as an
//! oracle, design-matrix metrics, and a simulation harness behind the
//! `groupslab` CLI.

pub mod bvm;
pub mod error;
pub mod harness;
pub mod likelihood;
pub mod metrics;
pub mod numeric;
pub mod priors;
pub mod sampler;
pub mod types;

pub use error::{Error, Result};
pub use types::{
    CoefficientMatrix, CovarianceEigen, Dataset, GroupStructure, HyperParams, SupportIndex,
};
