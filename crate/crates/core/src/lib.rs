#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calib;
pub mod error;
pub mod hall;
pub mod io;
pub mod knowledge;
pub mod matrix;
pub mod optim;
pub mod report;
pub mod solver;
pub mod study;
pub mod vanilla;

pub use error::{Error, Result};
