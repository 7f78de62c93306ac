//! Cuboid shape abstraction: Gaussian-field primitive parsing of point
//! clouds and a recurrent mixture-density generator of primitive sequences.

pub mod encoder;
pub mod energy;
pub mod error;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod optim;
pub mod parser;
pub mod pipeline;
pub mod render;
pub mod seqgen;
pub mod synth;

pub use error::{Error, Result};
