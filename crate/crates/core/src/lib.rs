pub mod audio;
pub mod corpus;
pub mod mcem;
pub mod vae;
pub mod error;
pub mod eval;
pub mod isnmf;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
