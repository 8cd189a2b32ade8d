//! Shared fixtures for the benchmarks.

use orientrace::phantom;
use orientrace::raster::{preprocess, Image2D, PreprocessParams};

/// A preprocessed 256x256 crossing phantom.
pub fn crossing_image() -> Image2D {
    let img = phantom::crossing(8.0, std::f64::consts::PI / 3.0).render();
    preprocess(&img, &PreprocessParams::default(), false).expect("phantom preprocesses")
}
