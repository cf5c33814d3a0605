#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod ase;
pub mod attention;
pub mod error;
pub mod math;
pub mod model;
pub mod nn;
pub mod rng;
pub mod sgn;
pub mod ssm;
pub mod tensor;
pub mod train;
pub mod wmhsa;

pub use error::{Error, Result};
pub use rng::RngState;
pub use tensor::{Dtype, Tensor};
