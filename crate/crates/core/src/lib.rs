//! Optimal interview design for cold-start recommendation: choosing the few
//! items a new user is asked to rate so that their latent profile can be
//! estimated as accurately as possible.

// `!(x > 0.0)` is used throughout to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataio;
pub mod error;
pub mod gadgets;
pub mod linalg;
pub mod objective;
pub mod pmf;
pub mod selection;
pub mod simulate;

pub use error::{Error, Result};
