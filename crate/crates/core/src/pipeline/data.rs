use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{InputStyle, PipelineError};
use crate::raster::{rasterize, read_pgm, SketchImage};
use crate::sketch::{dataset, tokenize, Sketch, TokenGrid};
use crate::synthgen::{CorpusManifest, RandomSource};

/// One corpus entry: ground truth, the network input and the explicit render.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sketch: Sketch,
    pub grid: TokenGrid,
    /// Image fed to the parameterizer (precise or hand-drawn).
    pub input: SketchImage,
    /// Explicit render of `sketch`, the reference for image metrics.
    pub target: SketchImage,
}

impl Sample {
    /// Builds a precise-style sample by rendering `sketch`.
    pub fn render(sketch: Sketch, size: usize) -> Result<Self, PipelineError> {
        let grid = tokenize(&sketch)?;
        let target = rasterize(&sketch, size, size);
        Ok(Self { sketch, grid, input: target.clone(), target })
    }
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest, PipelineError> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Data(format!("{}: {e}", path.display())))
}

/// Loads `split` of a corpus directory. Images must be `size` pixels square.
pub fn load_split(
    dir: &Path,
    split: &str,
    style: InputStyle,
    size: usize,
    limit: Option<usize>,
) -> Result<Vec<Sample>, PipelineError> {
    let manifest = read_manifest(dir)?;
    if manifest.image_size != size {
        return Err(PipelineError::Data(format!(
            "corpus {} has {}px images, model expects {size}px",
            dir.display(),
            manifest.image_size
        )));
    }
    if style == InputStyle::Handdrawn && manifest.handdrawn.is_none() {
        return Err(PipelineError::Data(format!("corpus {} has no hand-drawn renders", dir.display())));
    }
    let mut sketches = dataset::parse_dataset(&dir.join(format!("{split}.jsonl")))?;
    if let Some(n) = limit {
        sketches.truncate(n);
    }
    let folder = match style {
        InputStyle::Precise => "images",
        InputStyle::Handdrawn => "images_hd",
    };
    sketches
        .into_iter()
        .enumerate()
        .map(|(i, sketch)| {
            let grid = tokenize(&sketch)?;
            let target = read_pgm(&dir.join("images").join(split).join(format!("{i}.pgm")))?;
            let input = match style {
                InputStyle::Precise => target.clone(),
                InputStyle::Handdrawn => read_pgm(&dir.join(folder).join(split).join(format!("{i}.pgm")))?,
            };
            Ok(Sample { sketch, grid, input, target })
        })
        .collect()
}

/// Endless seeded mini-batch schedule: reshuffles at every epoch and keeps
/// the final partial batch.
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
    pub epoch: usize,
}

impl Batcher {
    pub fn new(len: usize, batch: usize, seed: u64, stream: u64) -> Self {
        let mut b = Self { order: (0..len).collect(), pos: 0, batch: batch.max(1), rng: RandomSource::stream(seed, stream), epoch: 0 };
        b.order.shuffle(&mut b.rng);
        b
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
            self.epoch += 1;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
