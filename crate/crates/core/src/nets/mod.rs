//! Renderer and parameterizer networks, image and token losses, checkpoints.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Tensor};
use crate::raster::{RasterError, SketchImage};
use crate::sketch::tokens::{GRID_TOKENS, VOCAB};

mod checkpoint;
mod config;
mod layers;
mod loss;
mod probs;
mod spn;
mod srn;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checked, load_checkpoint, save_checkpoint, verify_against, MAGIC,
    VERSION,
};
pub use config::{SpnConfig, SrnConfig, TransformerConfig};
pub use layers::sinusoidal;
pub use loss::{assigned_targets, image_loss, multiscale_l2, multiscale_l2_images, token_cross_entropy, ImageLossKind};
pub use probs::{TokenProbabilities, SIMPLEX_TOL};
pub use spn::SpnModel;
pub use srn::SrnModel;

#[derive(Debug, Error)]
pub enum NetsError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch { expected: Vec<usize>, found: Vec<usize> },
    #[error("row {row} is not a probability distribution")]
    NotSimplex { row: usize },
    #[error("assignment is not a permutation of the 16 slots")]
    InvalidPermutation,
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("{0} unexpected bytes after the last parameter")]
    TrailingBytes(usize),
    #[error("checkpoint lacks parameter {0}")]
    MissingParameter(String),
    #[error("checkpoint has parameter {0} the model does not")]
    UnexpectedParameter(String),
    #[error("parameter {name}: checkpoint shape {found:?}, model expects {expected:?}")]
    ParameterShape { name: String, expected: Vec<usize>, found: Vec<usize> },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Stacks square images of side `size` into `[B, size, size]`.
pub fn batch_images(images: &[SketchImage], size: usize) -> Result<Tensor, NetsError> {
    let mut data = Vec::with_capacity(images.len() * size * size);
    for img in images {
        if img.width != size || img.height != size {
            return Err(NetsError::ShapeMismatch { expected: vec![size, size], found: vec![img.height, img.width] });
        }
        data.extend_from_slice(&img.pixels);
    }
    Ok(Tensor::new(&[images.len(), size, size], data)?)
}

/// Splits `[B, H, W]` into images.
pub fn split_images(t: &Tensor) -> Vec<SketchImage> {
    let s = t.shape();
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    t.data().chunks_exact(h * w).map(|c| SketchImage::from_pixels(w, h, c.to_vec())).collect()
}

/// Stacks distributions into `[B, 128, 73]`.
pub fn batch_probs(probs: &[TokenProbabilities]) -> Tensor {
    let data = probs.iter().flat_map(|p| p.data().iter().copied()).collect();
    Tensor::new(&[probs.len(), GRID_TOKENS, VOCAB], data).expect("fixed row shape")
}

pub fn split_probs(t: &Tensor) -> Result<Vec<TokenProbabilities>, NetsError> {
    t.data().chunks_exact(GRID_TOKENS * VOCAB).map(|c| TokenProbabilities::new(c.to_vec())).collect()
}

#[cfg(test)]
mod tests;
