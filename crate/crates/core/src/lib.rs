//! Color-composition guided intrinsic image decomposition.
//!
//! An image `I` is factored into reflectance `R`, a global illuminant `L` and
//! shading `S` with `I = R · L · S`. Inference happens in a rotated log-RGB
//! space (see [`colorspace`]) where shading moves pixels only along the
//! brightness axis. An image-level annotation over the eleven basic color
//! terms ([`naming::ColorComposition`]) steers the albedo mixture toward the
//! colors a person reports seeing.

pub mod colorspace;
pub mod energy;
pub mod error;
pub mod math;
pub mod metrics;
pub mod naming;
pub mod scenes;
pub mod solver;

pub use error::{Error, Result};
