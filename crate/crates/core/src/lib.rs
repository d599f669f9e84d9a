//! Tactile contact-state simulation and alignment of a point-cloud encoder to
//! a frozen text/image embedding space.

pub mod config;
pub mod dataset;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod formats;
pub mod geometry;
pub mod grasp;
pub mod label;
pub mod rng;
pub mod train;
pub mod vocab;

pub use error::{Error, Result};
