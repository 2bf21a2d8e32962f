#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod erm_lab;
pub mod error;
pub mod loss;
pub mod matrix_kit;
pub mod offset_mc;
pub mod tails;
pub mod transformer;

pub use error::{Error, Result};
