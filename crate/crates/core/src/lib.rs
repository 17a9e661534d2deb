//! Homogenized membrane energies for heterogeneous thin films.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod cli;
pub mod error;
pub mod exec;
pub mod film;
pub mod hex;
pub mod homtable;
pub mod material;
pub mod membrane;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
