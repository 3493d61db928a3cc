//! Graph generalized linear latent variable models (GGLLVMs) for multiview
//! networks, estimated by maximizing a Laplace-approximated likelihood.

pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod io;
pub mod laplace;
pub mod lbfgs;
pub mod mcmc;
pub mod metrics;
pub mod model;
pub mod quadrature;
pub mod simulate;

pub use error::{Error, Result};
