//! Raster-to-parametric CAD sketch conversion.
//!
//! A sketch parameterization network maps a binary sketch image to a set of
//! tokenized primitives (lines, circles, arcs, points). It can be pretrained
//! without parametric labels by rendering its soft token predictions through
//! a frozen neural renderer and comparing against the input image with a
//! multiscale l2 loss, then fine-tuned with Hungarian-matched token
//! cross-entropy.
//!
//! Modules, bottom-up:
//!
//! - [`sketch`]: primitives, quantization, tokens, dataset files
//! - [`raster`]: explicit rendering, hand-drawn synthesis, pyramids, PGM
//! - [`synthgen`]: seeded random sketches and corpora
//! - [`autodiff`]: tape-based reverse-mode differentiation and Adam
//! - [`nets`]: the renderer and parameterizer networks, losses, checkpoints
//! - [`matcheval`]: Hungarian matching and evaluation metrics
//! - [`pipeline`]: training loops, inference, test-time optimization, evaluation

pub mod autodiff;
pub mod io;
pub mod matcheval;
pub mod nets;
pub mod pipeline;
pub mod raster;
pub mod sketch;
pub mod synthgen;

pub use autodiff::{ParameterStore, Tape, Tensor, Var};
pub use matcheval::{hungarian, Assignment, MetricReport};
pub use nets::{SpnModel, SrnModel, TokenProbabilities, TransformerConfig};
pub use raster::{rasterize, ImagePyramid, SketchImage};
pub use sketch::{Primitive, PrimitiveKind, Sketch, TokenGrid};
