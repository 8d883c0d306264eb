//! Dense linear algebra, seeded random streams, AdamW and a
//! central-difference gradient oracle.

mod adamw;
mod fdiff;
mod matrix;
pub(crate) mod rng;

pub use adamw::{AdamW, AdamWState};
pub use fdiff::finite_diff_grad;
pub use matrix::{dot, l2_norm, softmax_rows, Matrix};
pub use rng::{RngStream, StreamName};
