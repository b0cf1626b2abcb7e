use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::nets::{ImageLossKind, SpnConfig, SrnConfig};
use crate::raster::HanddrawConfig;
use crate::sketch::{PrimitiveKind, MAX_PRIMITIVES};
use crate::synthgen::GeneratorConfig;

/// Which render of a corpus sample is fed to the parameterizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputStyle {
    #[default]
    Precise,
    Handdrawn,
}

/// Where renderer training pairs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrnSource {
    /// The `train` split of `data.corpus`.
    #[default]
    Corpus,
    /// Fresh sketches from `generator` every step.
    Generator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Corpus directory written by `build_corpus`.
    pub corpus: Option<PathBuf>,
    /// Labeled corpus for fine-tuning; falls back to `corpus`.
    pub labeled: Option<PathBuf>,
    /// Unlabeled corpus for rendering supervision; falls back to `corpus`.
    pub unlabeled: Option<PathBuf>,
    pub input_style: InputStyle,
    /// Use only the first `n` samples of each loaded split.
    pub limit: Option<usize>,
    /// Evaluation split name.
    pub eval_split: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { corpus: None, labeled: None, unlabeled: None, input_style: InputStyle::Precise, limit: None, eval_split: "test".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f32,
    pub batch_size: usize,
    pub epochs: usize,
    /// Overrides `epochs` when set.
    pub max_steps: Option<usize>,
    pub loss: ImageLossKind,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f32>,
    /// Linear learning-rate warmup.
    pub warmup_steps: usize,
    pub srn_source: SrnSource,
    /// Shuffle token slots of renderer inputs (the render is unchanged).
    pub permute_slots: bool,
    /// Sketches per epoch when `srn_source = "generator"`.
    pub generator_epoch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 16,
            epochs: 10,
            max_steps: None,
            loss: ImageLossKind::MultiscaleL2,
            grad_clip: Some(1.0),
            warmup_steps: 0,
            srn_source: SrnSource::Corpus,
            permute_slots: false,
            generator_epoch: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiConfig {
    pub lambda_render: f32,
    pub lambda_param: f32,
}

impl Default for SemiConfig {
    fn default() -> Self {
        Self { lambda_render: 1.0, lambda_param: 1.0 }
    }
}

/// Fixed number of slots per primitive type for constrained decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TypeQuota {
    pub arc: usize,
    pub circle: usize,
    pub line: usize,
    pub point: usize,
}

impl TypeQuota {
    pub fn count(&self, kind: PrimitiveKind) -> usize {
        match kind {
            PrimitiveKind::Arc => self.arc,
            PrimitiveKind::Circle => self.circle,
            PrimitiveKind::Line => self.line,
            PrimitiveKind::Point => self.point,
        }
    }

    pub fn total(&self) -> usize {
        self.arc + self.circle + self.line + self.point
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferConfig {
    pub quota: Option<TypeQuota>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtoptConfig {
    pub steps: usize,
    pub lr: f32,
}

impl Default for TtoptConfig {
    fn default() -> Self {
        Self { steps: 100, lr: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
    pub handdrawn: Option<HanddrawConfig>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { n_train: 1000, n_val: 200, n_test: 200, image_size: 64, handdrawn: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckpointConfig {
    pub srn: Option<PathBuf>,
    pub spn: Option<PathBuf>,
}

/// Everything a run needs; read from TOML.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub srn: SrnConfig,
    pub spn: SpnConfig,
    pub train: TrainConfig,
    pub semi: SemiConfig,
    pub infer: InferConfig,
    pub ttopt: TtoptConfig,
    pub generator: GeneratorConfig,
    pub corpus: CorpusConfig,
    pub checkpoints: CheckpointConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Replaces the run seed and the generator seed, which a corpus built
    /// from this config records.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.generator.seed = seed;
        self
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if self.train.batch_size == 0 {
            return bad("train.batch_size must be at least 1");
        }
        if !(self.train.lr > 0.0) || !(self.ttopt.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.semi.lambda_render >= 0.0) || !(self.semi.lambda_param >= 0.0) {
            return bad("semi-supervision weights must be non-negative");
        }
        if self.infer.quota.is_some_and(|q| q.total() > MAX_PRIMITIVES) {
            return bad("type quota exceeds 16 slots");
        }
        if self.srn.image_size != self.spn.image_size {
            return bad("srn and spn image sizes differ");
        }
        self.srn.transformer.validate(self.srn.image_size)?;
        self.spn.validate()?;
        self.generator.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(())
    }
}
