//! Asymptotic analysis of regularized generalized linear models on Gaussian data.
//!
//! The crate predicts the exact high-dimensional training loss and estimation
//! error of (possibly non-convex) empirical risk minimization through a
//! six-parameter replica-symmetric saddle point, and verifies those predictions
//! by running a generalized approximate message passing (GAMP) algorithm and
//! finite-dimensional gradient descent on synthetic teacher-student data.
//!
//! Module map:
//! - [`prox`]: scalar proximal calculus and the weakly convex loss catalog
//! - [`expect`]: Gauss-Hermite expectation engine over the scalar channel model
//! - [`saddle`]: fixed-point solver for the stationary equations, replicon
//!   stability, norm-shell landscapes and the spectral-method system
//! - [`gamp`]: the message passing algorithm and its state evolution
//! - [`empirics`]: synthetic data generation, gradient-descent ERM, overlaps
//! - [`cli`]: experiment orchestration, config files and result serialization

pub mod cli;
pub mod empirics;
pub mod expect;
pub mod gamp;
pub mod prox;
pub mod saddle;
