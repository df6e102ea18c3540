#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod cfm;
pub mod err;
pub mod gradcheck;
pub mod mat;
pub mod nn;
pub mod rng;

pub use err::{Error, Result};
pub use mat::Mat;
pub use rng::Rng;
