//! Hybrid explicit/implicit motion modeling for audio-driven deformable
//! Gaussian-splatting talking heads, with a synthetic benchmark whose ground
//! truth is known exactly.

pub mod checkpoint;
pub mod cmdm;
pub mod commands;
pub mod config;
pub mod diffmath;
pub mod error;
pub mod gaussian_field;
pub mod hmmm;
pub mod image;
pub mod io;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod par;
pub mod render;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod triplane;

pub use error::{Error, Result};
pub use tensor::Tensor;
