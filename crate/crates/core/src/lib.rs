//! Differentiable Expectation-Maximisation for Gaussian mixture models,
//! paired with mixture-Wasserstein transport so that the EM output can be
//! driven by gradient descent on the input point cloud.
//!
//! The crate is organised in four layers:
//!
//! * [`linalg`] — dense symmetric/SPD primitives: Cholesky, Jacobi
//!   eigendecomposition, matrix square root and its differential,
//!   log-sum-exp.
//! * [`gmm`] — mixture parameters, responsibilities, the EM fixed-point map
//!   and its standard / fixed-weights loops, initialisation and sampling.
//! * [`diff`] — explicit partial differentials of the EM map, assembled
//!   Jacobians and the AD / AI / OS gradient strategies plus a
//!   finite-difference oracle.
//! * [`ot`] — closed-form Gaussian W2, exact small-scale discrete transport,
//!   the mixture distance MW2 (balanced and unbalanced) and its envelope
//!   gradient.
//!
//! All randomness is drawn from `ChaCha8Rng` seeded with caller-provided
//! 64-bit seeds, so results are bit-reproducible across platforms.

pub mod diff;
pub mod error;
pub mod gmm;
pub mod io;
pub mod linalg;
pub mod ot;

pub use error::CoreError;
