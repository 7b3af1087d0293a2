//! Numeric substrate: dense and CSR matrices, a reverse-mode tape, finite
//! difference checking, and Adam.

mod adam;
mod dense;
mod gradcheck;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::DenseMatrix;
pub use gradcheck::{grad_check, GradCheckReport};
pub use sparse::SparseMatrix;
pub use tape::{log_sum_exp, sigmoid, softmax_in_place, Gradients, Tape, Var};
