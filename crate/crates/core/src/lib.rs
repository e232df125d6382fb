//! Tail asymptotics of discounted aggregate losses and their running maxima
//! under heavy-tailed discount factors.

// `!(x > 0.0)` rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod asymptotics;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod model;
pub mod oracle;
pub mod quadrature;
pub mod rng;

pub use distributions::{TailLaw, TailShape};
pub use error::{Error, Result};
pub use model::{Dependence, ModelSpec};
