//! Training loops, inference, test-time optimization, evaluation, and the
//! file-level commands behind the CLI.

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::matcheval::MatchError;
use crate::nets::NetsError;
use crate::raster::RasterError;
use crate::sketch::SketchError;
use crate::synthgen::SynthError;

pub mod commands;
mod config;
mod data;
mod eval;
mod gradsuite;
mod infer;
mod manifest;
mod train;

pub use config::{
    CheckpointConfig, CorpusConfig, DataConfig, InferConfig, InputStyle, RunConfig, SemiConfig, SrnSource,
    TrainConfig, TtoptConfig, TypeQuota,
};
pub use data::{load_split, read_manifest, Batcher, Sample};
pub use eval::{evaluate, score_predictions, EvalReport, SampleReport};
pub use gradsuite::{composite_render_check, gradient_suite, GradSuiteEntry, COMPOSITE_COORDS};
pub use infer::{decode_with_quota, infer_batch, test_time_optimize, zero_shot_infer, Inference, TtoResult};
pub use manifest::{git_describe, RunManifest, MANIFEST_FILE};
pub use train::{
    assigned_nll, finetune_spn, finetune_spn_until, pretrain_spn, srn_img_mse, train_semi, train_srn, SrnData, TrainLog,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("checkpoint does not match the configured model: {0}")]
    CheckpointMismatch(NetsError),
    #[error(transparent)]
    Nets(#[from] NetsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
