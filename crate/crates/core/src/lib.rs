pub mod diffusion;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod eval;
pub mod harness;
pub mod numerics;
pub mod rng;

pub use error::{Error, Result};
