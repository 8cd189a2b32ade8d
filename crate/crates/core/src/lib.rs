//! Orientation scores on the roto-translation group SE(2): cake and Gabor
//! wavelet stacks, invertible lifting and reconstruction, two vessel trackers
//! built on top of the lifted image, an automatic retinal vasculature
//! builder, and completion-field utilities for curves in SE(2).

// Parameter checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod completion;
pub mod ctos;
pub mod etos;
pub mod oscore;
pub mod phantom;
pub mod raster;
pub mod spectral;
pub mod vasculature;
pub mod wavelets;
pub mod widths;

pub use num_complex::Complex64;

pub use raster::{Image2D, PreprocessParams};

pub use oscore::{OrientationScore, ScoreError};
pub use wavelets::{CakeParams, GaborParams, WaveletError, WaveletStack};
