//! Dense numeric kernels, gradients, optimizer and PRNG.

pub mod adam;
pub mod gradcheck;
pub mod matrix;
pub mod ops;
pub mod param;
pub mod rng;

pub use adam::Adam;
pub use gradcheck::{grad_check, numeric_gradient, relative_error, GradCheckReport};
pub use matrix::Matrix;
pub use ops::{cross_entropy, kl_rows, relu, softmax_rows};
pub use param::{Param, Parameterized};
pub use rng::Rng;
