//! Dense linear algebra and special functions.

mod eigen;
mod matrix;
pub mod special;

pub use eigen::{inv_fourth_root, sym_eigen, SymEigen};
pub use matrix::Matrix;
pub use special::{erfc, log_binom, log_erfc, log_sum_exp, SignedLog};
