//! Reverse-mode differentiation over the [`ops`](crate::ops) set.

pub mod gradcheck;
mod params;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Tape, Var};
