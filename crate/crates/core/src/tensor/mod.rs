//! Dense tensors and a reverse-mode gradient engine.

mod adam;
mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod value;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP, REL_FLOOR};
pub use graph::{Eager, Gradients, Graph, Tape, Var};
pub use ops::OpKind;
pub use params::ParamSet;
pub use value::Tensor;
