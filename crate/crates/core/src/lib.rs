//! Differentiable CPU splatting of flat Gaussian primitives whose color is a
//! weighted sum of oriented cosine waves ("Gabor splats"), with training,
//! evaluation and data I/O for posed multi-view image sets.

pub mod cli;
pub mod dataio;
pub mod error;
pub mod gabor;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod loss;
pub mod optim;
pub mod raster;
pub mod scene;
pub mod synth;

pub use error::{Error, Result};
pub use gabor::{GaborPrimitive, Mode, WaveParam};
pub use geometry::{Camera, Ray, SplatFrame};
pub use image::Image;
pub use raster::{GradientBuffer, OutputGrads, RenderOutput};
pub use scene::Scene;
