#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod basis;
pub mod bias;
pub mod cv;
pub mod dynamics;
pub mod fht;
pub mod history;
mod error;
pub mod linalg;
pub mod potentials;
pub mod quadrature;
pub mod sampler;

pub use error::{Error, Result};
