use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Batcher, PipelineError, Sample, SemiConfig, TrainConfig};
use crate::autodiff::{AdamConfig, ParameterStore, Tape, Var};
use crate::matcheval::{cost_matrix, hungarian, Assignment, COST_CLAMP};
use crate::nets::{
    batch_images, batch_probs, image_loss, multiscale_l2, split_probs, token_cross_entropy, SpnModel,
    SrnModel, TokenProbabilities,
};
use crate::raster::{rasterize, SketchImage};
use crate::sketch::tokens::SLOT_LEN;
use crate::sketch::{TokenGrid, MAX_PRIMITIVES};
use crate::synthgen::{sample_sketch, GeneratorConfig, RandomSource};

// Independent RNG streams per purpose, so e.g. the labeled schedule of a
// semi-supervised run equals that of plain fine-tuning.
const STREAM_SRN: u64 = 1;
const STREAM_PRETRAIN: u64 = 2;
const STREAM_FINETUNE: u64 = 3;
const STREAM_GENERATOR: u64 = 4;

/// Per-step losses and per-epoch means of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    /// Fine-tuning only: `(matched, identity)` token loss of every batch.
    pub assignment_losses: Vec<(f64, f64)>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.step_losses.last().copied()
    }
}

/// Groups step losses into epoch means as batches are consumed.
struct EpochMeter {
    sum: f64,
    n: usize,
    epoch: usize,
}

impl EpochMeter {
    fn new() -> Self {
        Self { sum: 0.0, n: 0, epoch: 0 }
    }

    fn record(&mut self, log: &mut TrainLog, epoch: usize, loss: f64) {
        if epoch != self.epoch && self.n > 0 {
            log.epoch_losses.push(self.sum / self.n as f64);
            self.sum = 0.0;
            self.n = 0;
        }
        self.epoch = epoch;
        self.sum += loss;
        self.n += 1;
        log.step_losses.push(loss);
    }

    fn finish(self, log: &mut TrainLog) {
        if self.n > 0 {
            log.epoch_losses.push(self.sum / self.n as f64);
        }
    }
}

/// Adam with optional warmup and global-norm clipping.
struct Optimizer {
    adam: AdamConfig,
    base_lr: f32,
    warmup: usize,
    clip: Option<f32>,
    steps: usize,
}

impl Optimizer {
    fn new(cfg: &TrainConfig) -> Self {
        Self { adam: AdamConfig::with_lr(cfg.lr), base_lr: cfg.lr, warmup: cfg.warmup_steps, clip: cfg.grad_clip, steps: 0 }
    }

    fn step(&mut self, store: &mut ParameterStore, tape: &Tape) -> Result<(), PipelineError> {
        store.accumulate(tape)?;
        if let Some(c) = self.clip {
            store.clip_grad_norm(c);
        }
        self.steps += 1;
        self.adam.lr = if self.steps <= self.warmup {
            self.base_lr * self.steps as f32 / self.warmup as f32
        } else {
            self.base_lr
        };
        store.adam_step(&self.adam)?;
        Ok(())
    }
}

fn total_steps(cfg: &TrainConfig, batches_per_epoch: usize) -> usize {
    cfg.max_steps.unwrap_or(cfg.epochs * batches_per_epoch)
}

/// Renderer training pairs.
pub enum SrnData<'a> {
    /// A fixed corpus; targets are the explicit renders.
    Samples(&'a [Sample]),
    /// Fresh generator draws, rendered at the model's image size.
    Generator(&'a GeneratorConfig),
}

fn shuffled_slots<R: Rng>(grid: &TokenGrid, rng: &mut R) -> TokenGrid {
    let mut perm: Vec<usize> = (0..grid.slots.len()).collect();
    perm.shuffle(rng);
    grid.permute_slots(&perm)
}

/// Trains the renderer on (one-hot tokens, explicit render) pairs.
pub fn train_srn(srn: &mut SrnModel, data: SrnData<'_>, cfg: &TrainConfig, seed: u64) -> Result<TrainLog, PipelineError> {
    let size = srn.config.image_size;
    let (n, per_epoch) = match data {
        SrnData::Samples(s) if s.is_empty() => return Err(PipelineError::Data("empty renderer corpus".into())),
        SrnData::Samples(s) => (s.len(), s.len().div_ceil(cfg.batch_size)),
        SrnData::Generator(_) => (cfg.generator_epoch, cfg.generator_epoch.div_ceil(cfg.batch_size)),
    };
    let mut batcher = Batcher::new(n, cfg.batch_size, seed, STREAM_SRN);
    let mut gen_rng = RandomSource::stream(seed, STREAM_GENERATOR);
    let mut opt = Optimizer::new(cfg);
    let mut log = TrainLog::default();
    let mut meter = EpochMeter::new();
    for _ in 0..total_steps(cfg, per_epoch) {
        let idx = batcher.next_batch();
        let (grids, images): (Vec<TokenGrid>, Vec<SketchImage>) = match data {
            SrnData::Samples(s) => idx.iter().map(|&i| (s[i].grid, s[i].target.clone())).unzip(),
            SrnData::Generator(g) => idx
                .iter()
                .map(|_| {
                    let (grid, sketch) = sample_sketch(g, &mut gen_rng)?;
                    Ok((grid, rasterize(&sketch, size, size)))
                })
                .collect::<Result<Vec<_>, PipelineError>>()?
                .into_iter()
                .unzip(),
        };
        let probs: Vec<TokenProbabilities> = grids
            .iter()
            .map(|g| {
                let g = if cfg.permute_slots { shuffled_slots(g, batcher.rng()) } else { *g };
                TokenProbabilities::one_hot(&g)
            })
            .collect();
        let mut tape = Tape::new();
        let x = tape.constant(batch_probs(&probs));
        let y = srn.forward(&mut tape, x, true)?;
        let target = tape.constant(batch_images(&images, size)?);
        let loss = image_loss(&mut tape, cfg.loss, y, target)?;
        let value = tape.scalar_f64(loss);
        tape.backward(loss)?;
        opt.step(&mut srn.params, &tape)?;
        meter.record(&mut log, batcher.epoch, value);
    }
    meter.finish(&mut log);
    Ok(log)
}

/// Image-only step: `multiscale_l2(srn(spn(X)), X)` with the renderer frozen.
fn render_loss(tape: &mut Tape, spn: &SpnModel, srn: &SrnModel, images: &[&SketchImage]) -> Result<Var, PipelineError> {
    let owned: Vec<SketchImage> = images.iter().map(|&i| i.clone()).collect();
    let x = tape.constant(batch_images(&owned, spn.config.image_size)?);
    let probs = spn.forward(tape, x, true)?;
    let rendered = srn.forward(tape, probs, false)?;
    Ok(multiscale_l2(tape, rendered, x)?)
}

/// Rendering-self-supervised pretraining of the parameterizer. The
/// renderer only enters the tape as constants, so it cannot change.
pub fn pretrain_spn(
    spn: &mut SpnModel,
    srn: &SrnModel,
    images: &[SketchImage],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainLog, PipelineError> {
    check_pair(spn, srn)?;
    if images.is_empty() {
        return Err(PipelineError::Data("no pretraining images".into()));
    }
    let mut batcher = Batcher::new(images.len(), cfg.batch_size, seed, STREAM_PRETRAIN);
    let mut opt = Optimizer::new(cfg);
    let mut log = TrainLog::default();
    let mut meter = EpochMeter::new();
    for _ in 0..total_steps(cfg, batcher.batches_per_epoch()) {
        let batch: Vec<&SketchImage> = batcher.next_batch().into_iter().map(|i| &images[i]).collect();
        let mut tape = Tape::new();
        let loss = render_loss(&mut tape, spn, srn, &batch)?;
        let value = tape.scalar_f64(loss);
        tape.backward(loss)?;
        opt.step(&mut spn.params, &tape)?;
        meter.record(&mut log, batcher.epoch, value);
    }
    meter.finish(&mut log);
    Ok(log)
}

fn check_pair(spn: &SpnModel, srn: &SrnModel) -> Result<(), PipelineError> {
    if spn.config.image_size != srn.config.image_size {
        return Err(PipelineError::Config(format!(
            "spn image size {} differs from srn image size {}",
            spn.config.image_size, srn.config.image_size
        )));
    }
    Ok(())
}

/// Mean token negative log-likelihood of `target` under `probs` with
/// prediction slot `perm[i]` scored against target slot `i`.
pub fn assigned_nll(probs: &TokenProbabilities, target: &TokenGrid, perm: &[usize]) -> f64 {
    let mut sum = 0.0;
    for (i, slot) in target.slots.iter().enumerate() {
        for (k, &t) in slot.iter().enumerate() {
            sum -= f64::from(probs.prob(perm[i], k, t).max(COST_CLAMP)).ln();
        }
    }
    sum / (target.slots.len() * SLOT_LEN) as f64
}

/// Hungarian-matched token cross-entropy on a labeled batch. Returns the
/// loss and the `(matched, identity)` batch means.
fn matched_loss(tape: &mut Tape, spn: &SpnModel, batch: &[&Sample]) -> Result<(Var, f64, f64), PipelineError> {
    let images: Vec<SketchImage> = batch.iter().map(|s| s.input.clone()).collect();
    let x = tape.constant(batch_images(&images, spn.config.image_size)?);
    let probs = spn.forward(tape, x, true)?;
    let rows = split_probs(tape.value(probs))?;
    let identity = Assignment::identity(MAX_PRIMITIVES);
    let mut assignments = Vec::with_capacity(batch.len());
    let (mut matched, mut ident) = (0.0, 0.0);
    for (p, s) in rows.iter().zip(batch) {
        let a = hungarian(&cost_matrix(p, &s.grid))?;
        matched += assigned_nll(p, &s.grid, &a.perm);
        ident += assigned_nll(p, &s.grid, &identity.perm);
        assignments.push(a);
    }
    let (matched, ident) = (matched / batch.len() as f64, ident / batch.len() as f64);
    debug_assert!(matched <= ident + 1e-9, "matched loss {matched} exceeds identity loss {ident}");
    let grids: Vec<TokenGrid> = batch.iter().map(|s| s.grid).collect();
    let loss = token_cross_entropy(tape, probs, &grids, &assignments)?;
    Ok((loss, matched, ident))
}

/// Parametric fine-tuning with Hungarian-matched token cross-entropy.
pub fn finetune_spn(spn: &mut SpnModel, labeled: &[Sample], cfg: &TrainConfig, seed: u64) -> Result<TrainLog, PipelineError> {
    finetune_spn_until(spn, labeled, cfg, seed, |_, _| false)
}

/// [`finetune_spn`] that also calls `stop(steps_done, model)` after every
/// step and ends early once it returns true.
pub fn finetune_spn_until(
    spn: &mut SpnModel,
    labeled: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
    mut stop: impl FnMut(usize, &SpnModel) -> bool,
) -> Result<TrainLog, PipelineError> {
    if labeled.is_empty() {
        return Err(PipelineError::Data("no labeled samples".into()));
    }
    let mut batcher = Batcher::new(labeled.len(), cfg.batch_size, seed, STREAM_FINETUNE);
    let mut opt = Optimizer::new(cfg);
    let mut log = TrainLog::default();
    let mut meter = EpochMeter::new();
    for _ in 0..total_steps(cfg, batcher.batches_per_epoch()) {
        let batch: Vec<&Sample> = batcher.next_batch().into_iter().map(|i| &labeled[i]).collect();
        let mut tape = Tape::new();
        let (loss, matched, ident) = matched_loss(&mut tape, spn, &batch)?;
        let value = tape.scalar_f64(loss);
        tape.backward(loss)?;
        opt.step(&mut spn.params, &tape)?;
        log.assignment_losses.push((matched, ident));
        meter.record(&mut log, batcher.epoch, value);
        if stop(log.step_losses.len(), spn) {
            break;
        }
    }
    meter.finish(&mut log);
    Ok(log)
}

/// Alternates labeled batches (weight `lambda_param`) and unlabeled batches
/// (weight `lambda_render`); a zero weight skips that half of each round.
pub fn train_semi(
    spn: &mut SpnModel,
    srn: &SrnModel,
    labeled: &[Sample],
    unlabeled: &[SketchImage],
    cfg: &TrainConfig,
    weights: &SemiConfig,
    seed: u64,
) -> Result<TrainLog, PipelineError> {
    check_pair(spn, srn)?;
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(PipelineError::Data("semi-supervised training needs labeled and unlabeled data".into()));
    }
    let mut lab = Batcher::new(labeled.len(), cfg.batch_size, seed, STREAM_FINETUNE);
    let mut unl = Batcher::new(unlabeled.len(), cfg.batch_size, seed, STREAM_PRETRAIN);
    let rounds = total_steps(cfg, lab.batches_per_epoch().max(unl.batches_per_epoch()));
    let mut opt = Optimizer::new(cfg);
    let mut log = TrainLog::default();
    let mut meter = EpochMeter::new();
    for _ in 0..rounds {
        let mut round = 0.0;
        if weights.lambda_param > 0.0 {
            let batch: Vec<&Sample> = lab.next_batch().into_iter().map(|i| &labeled[i]).collect();
            let mut tape = Tape::new();
            let (loss, matched, ident) = matched_loss(&mut tape, spn, &batch)?;
            let loss = tape.scale(loss, weights.lambda_param);
            round += tape.scalar_f64(loss);
            tape.backward(loss)?;
            opt.step(&mut spn.params, &tape)?;
            log.assignment_losses.push((matched, ident));
        }
        if weights.lambda_render > 0.0 {
            let batch: Vec<&SketchImage> = unl.next_batch().into_iter().map(|i| &unlabeled[i]).collect();
            let mut tape = Tape::new();
            let loss = render_loss(&mut tape, spn, srn, &batch)?;
            let loss = tape.scale(loss, weights.lambda_render);
            round += tape.scalar_f64(loss);
            tape.backward(loss)?;
            opt.step(&mut spn.params, &tape)?;
        }
        meter.record(&mut log, lab.epoch.max(unl.epoch), round);
    }
    meter.finish(&mut log);
    Ok(log)
}

/// Per-sample ImgMSE between renderer output for each ground-truth grid and
/// its explicit render.
pub fn srn_img_mse(srn: &SrnModel, samples: &[Sample]) -> Result<Vec<f64>, PipelineError> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(32) {
        let probs: Vec<TokenProbabilities> = chunk.iter().map(|s| TokenProbabilities::one_hot(&s.grid)).collect();
        for (img, s) in srn.render(&probs)?.iter().zip(chunk) {
            out.push(crate::matcheval::metric_img_mse(img, &s.target)?);
        }
    }
    Ok(out)
}
