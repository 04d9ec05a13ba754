//! Reverse-mode gradient engine over the matrix operations used by layers
//! and losses.

mod params;
mod tape;

pub use params::{ParamId, ParamStore, Parameter, Transform};
pub use tape::{Gradients, Tape, TapeDiagnostics, Var};
