pub mod diffkernel;
pub mod error;
pub mod eval;
pub mod io;
pub mod model;
pub mod nn;
pub mod rng;
pub mod rqvae;
pub mod synthcorpus;

pub use error::{Error, Result};
