//! Reverse-mode differentiation, the Adam optimizer, and a central-difference
//! gradient checker.

mod adam;
mod gradcheck;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_check, relative_error, GradCheck};
pub use tape::{Gradients, OpKind, Tape, Var, LEAKY_SLOPE};
