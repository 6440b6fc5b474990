//! Dense matrices, reverse-mode differentiation, layers and optimization.

pub mod checkpoint;
pub mod gaussian;
pub mod gradcheck;
pub mod layers;
pub mod matrix;
pub mod params;
pub mod tape;

pub use gaussian::{gaussian_log_likelihood, gaussian_sample, kl_diag_gaussians, DiagGaussian};
pub use gradcheck::{grad_check, GradCheckReport};
pub use layers::{GruCell, Linear, Mlp};
pub use matrix::Matrix;
pub use params::ParamStore;
pub use tape::{Gradients, Tape, Var};
