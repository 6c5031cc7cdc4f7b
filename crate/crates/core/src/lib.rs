//! Hierarchical Bayesian inference of Gaussian random fields in a fixed,
//! hyperparameter-averaged Karhunen–Loève basis.

pub mod binio;
pub mod chaos;
pub mod com_prior;
pub mod discretization;
pub mod error;
pub mod forward;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod quadrature;
pub mod sampler;

pub use discretization::{build_reference_basis, ReferenceBasis, SpatialGrid};
pub use error::{Error, Result};
pub use kernels::{HyperParams, HyperPriorSpec, KernelKind, KernelSpec};
