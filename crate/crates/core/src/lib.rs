pub mod attention;
pub mod autograd;
pub mod error;
pub mod eval;
pub mod experiments;
pub mod geometry;
pub mod gradcheck;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod sampling;
pub mod sequence;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
