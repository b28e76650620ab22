// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod ann;
pub mod error;
pub mod ffd;
pub mod field;
pub mod fom;
pub mod io;
pub mod mesh;
pub mod pipeline;
pub mod pod;

pub use error::{Error, Result};
