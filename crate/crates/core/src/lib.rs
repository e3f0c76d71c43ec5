//! Dense reconstruction of rolling-shutter light fields.
//!
//! A 2D Gaussian splat model is fitted to the central row of sub-aperture
//! images, where every scene point is seen at a single instant. Constant 6-DoF
//! camera velocity is then recovered by rendering the model band by band
//! under a motion hypothesis and comparing against the corner views.

pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod init;
pub mod io;
pub mod lightfield;
pub mod pipeline;
pub mod splat;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
