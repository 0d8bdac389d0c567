pub mod diffusion;
pub mod env;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod guided_policy;
pub mod ipf;
pub mod path_diffuser;
pub mod qd;
pub mod reference;
pub mod scoring;

pub use error::{Error, Result};
