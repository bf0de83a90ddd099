//! Dense matrices, stable softmax, and the differentiation tape.

pub mod gradcheck;
pub mod matrix;
pub mod tape;

pub use gradcheck::grad_check;
pub use matrix::{dot, pairwise_sq_dist, row_softmax, sq_dist, FeatureMatrix, Matrix};
pub use tape::{Gradients, Tape, Var, LOG_FLOOR};
