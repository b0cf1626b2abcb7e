//! Explicit rasterization of sketches, hand-drawn style synthesis, image
//! pyramids and PGM image files.

mod handdraw;
mod pgm;
mod pyramid;
mod render;

use thiserror::Error;

pub use handdraw::{synthesize_handdrawn, synthesize_handdrawn_with, HanddrawConfig};
pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};
pub use pyramid::{build_pyramid, downsample, ImagePyramid, PYRAMID_LEVELS};
pub use render::{circumcircle, rasterize, Circumcircle, Collinear};

/// Default image side length.
pub const DEFAULT_SIZE: usize = 128;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dims {width}x{height} are not divisible by {divisor}")]
    IndivisibleDims { width: usize, height: usize, divisor: usize },
    #[error("malformed PGM header: {0}")]
    MalformedHeader(String),
    #[error("PGM payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Grayscale raster with values in `[0, 1]`, row-major, foreground = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl SketchImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, pixels: vec![value; width * height] }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel buffer does not match dims");
        Self { width, height, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f32) {
        self.pixels[y * self.width + x] = v;
    }

    /// Sets a pixel to foreground if it lies inside the image.
    #[inline]
    pub(crate) fn plot(&mut self, x: i64, y: i64) {
        if x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height {
            self.pixels[y as usize * self.width + x as usize] = 1.0;
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| f64::from(p)).sum::<f64>() / self.pixels.len() as f64
    }

    /// Foreground pixel coordinates `(x, y)` at threshold 0.5.
    pub fn foreground(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(x, y) >= 0.5 {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(self.width - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                out.set(x, self.height - 1 - y, self.get(x, y));
            }
        }
        out
    }

    /// Rounds every pixel to 0 or 1 at threshold 0.5.
    pub fn binarize(&self) -> Self {
        let pixels = self.pixels.iter().map(|&p| if p >= 0.5 { 1.0 } else { 0.0 }).collect();
        Self { width: self.width, height: self.height, pixels }
    }
}
