//! Deterministic dense linear algebra, loss primitives, the SGD optimizer,
//! and a finite-difference gradient-checking oracle. Everything downstream
//! is built on and verified against this module.

mod eigen;
mod gradcheck;
mod loss;
mod matrix;
mod optim;
mod params;
mod rng;

pub use eigen::symmetric_eigen;
pub use gradcheck::{grad_check, GradCheckReport};
pub use loss::{gaussian_kl_diag, logsumexp, reparam_sample, softmax, softmax_nll, GaussianKl};
pub use matrix::{matmul, matmul_nt, matmul_tn, Matrix};
pub use optim::{sgd_step, OptimizerState, SgdHyper};
pub use params::ParamVector;
pub use rng::Rng;
