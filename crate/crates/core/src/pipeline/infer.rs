use super::{PipelineError, TtoptConfig, TypeQuota};
use crate::autodiff::{AdamConfig, ParameterStore, Tape, Tensor};
use crate::matcheval::{hungarian, COST_CLAMP};
use crate::nets::{batch_images, multiscale_l2, SpnModel, SrnModel, TokenProbabilities};
use crate::raster::SketchImage;
use crate::sketch::tokens::{
    type_token, CONSTRUCTION, NON_CONSTRUCTION, PAD, PARAM_MAX, PARAM_MIN, SLOT_LEN, VOCAB,
};
use crate::sketch::{detokenize, PrimitiveKind, Sketch, TokenGrid, MAX_PRIMITIVES};

/// Decoded prediction for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub probs: TokenProbabilities,
    pub grid: TokenGrid,
    /// Valid primitives of `grid`; invalid slots are dropped.
    pub sketch: Sketch,
    pub dropped: usize,
}

impl Inference {
    pub fn decode(probs: TokenProbabilities, quota: Option<&TypeQuota>) -> Self {
        let grid = match quota {
            None => probs.argmax(),
            Some(q) => decode_with_quota(&probs, q),
        };
        let d = detokenize(&grid);
        Self { probs, grid, dropped: d.dropped(), sketch: d.sketch }
    }
}

fn argmax_in(p: &[f32], lo: u8, hi: u8) -> u8 {
    (lo..=hi).fold(lo, |best, t| if p[t as usize] > p[best as usize] { t } else { best })
}

/// Assigns slot types to satisfy `quota` (Hungarian over the type-token
/// probabilities, leftover slots empty), then fills each typed slot with
/// the most likely parameter and flag tokens.
pub fn decode_with_quota(probs: &TokenProbabilities, quota: &TypeQuota) -> TokenGrid {
    let mut columns: Vec<Option<PrimitiveKind>> = Vec::with_capacity(MAX_PRIMITIVES);
    for kind in PrimitiveKind::ALL {
        columns.extend(std::iter::repeat_n(Some(kind), quota.count(kind)));
    }
    columns.truncate(MAX_PRIMITIVES);
    columns.resize(MAX_PRIMITIVES, None);
    let cost: Vec<Vec<f64>> = (0..MAX_PRIMITIVES)
        .map(|slot| {
            columns
                .iter()
                .map(|c| {
                    let t = c.map_or(PAD, type_token);
                    -f64::from(probs.prob(slot, 0, t).max(COST_CLAMP)).ln()
                })
                .collect()
        })
        .collect();
    let assignment = hungarian(&cost).expect("finite costs");
    let mut grid = TokenGrid::default();
    for (slot, &col) in assignment.perm.iter().enumerate() {
        let Some(kind) = columns[col] else { continue };
        let n = kind.param_count();
        let row = |pos: usize| probs.row(slot * SLOT_LEN + pos);
        let s = &mut grid.slots[slot];
        s[0] = type_token(kind);
        for pos in 1..=n {
            s[pos] = argmax_in(row(pos), PARAM_MIN, PARAM_MAX);
        }
        s[n + 1] = argmax_in(row(n + 1), CONSTRUCTION, NON_CONSTRUCTION);
    }
    grid
}

/// Parameterizes one image with a (rendering-pretrained) network.
pub fn zero_shot_infer(spn: &SpnModel, image: &SketchImage, quota: Option<&TypeQuota>) -> Result<Inference, PipelineError> {
    let probs = spn.predict(std::slice::from_ref(image))?.remove(0);
    Ok(Inference::decode(probs, quota))
}

/// Batched [`zero_shot_infer`].
pub fn infer_batch(spn: &SpnModel, images: &[SketchImage], quota: Option<&TypeQuota>) -> Result<Vec<Inference>, PipelineError> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(32) {
        out.extend(spn.predict(chunk)?.into_iter().map(|p| Inference::decode(p, quota)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtoResult {
    pub inference: Inference,
    /// Render loss before each step, then after the last one.
    pub trace: Vec<f64>,
}

fn render_loss(srn: &SrnModel, tape: &mut Tape, probs: crate::autodiff::Var, image: &Tensor) -> Result<f64, PipelineError> {
    let rendered = srn.forward(tape, probs, false)?;
    let target = tape.constant(image.clone());
    let loss = multiscale_l2(tape, rendered, target)?;
    Ok(tape.scalar_f64(loss))
}

/// Refines per-token logits (initialized to `ln p` from the parameterizer)
/// by gradient descent on the render loss through the frozen renderer.
/// Neither network changes. With `steps = 0` the result equals
/// [`zero_shot_infer`].
pub fn test_time_optimize(
    spn: &SpnModel,
    srn: &SrnModel,
    image: &SketchImage,
    cfg: &TtoptConfig,
    quota: Option<&TypeQuota>,
) -> Result<TtoResult, PipelineError> {
    let probs = spn.predict(std::slice::from_ref(image))?.remove(0);
    let target = batch_images(std::slice::from_ref(image), srn.config.image_size)?;
    let logits = probs.data().iter().map(|&p| p.max(COST_CLAMP).ln()).collect();
    let mut store = ParameterStore::new();
    store.insert("logits", Tensor::new(&[1, MAX_PRIMITIVES * SLOT_LEN, VOCAB], logits)?)?;
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let mut tape = Tape::new();
        let l = tape.param(&store, "logits")?;
        let p = tape.softmax(l);
        let rendered = srn.forward(&mut tape, p, false)?;
        let tgt = tape.constant(target.clone());
        let loss = multiscale_l2(&mut tape, rendered, tgt)?;
        trace.push(tape.scalar_f64(loss));
        tape.backward(loss)?;
        store.accumulate(&tape)?;
        store.adam_step(&adam)?;
    }
    let mut tape = Tape::new();
    let l = tape.constant(store.value("logits")?.clone());
    let p = tape.softmax(l);
    trace.push(render_loss(srn, &mut tape, p, &target)?);
    // With no steps, decode the network output itself rather than softmax(ln p).
    let final_probs = if cfg.steps == 0 { probs } else { TokenProbabilities::from_tensor(tape.value(p))? };
    Ok(TtoResult { inference: Inference::decode(final_probs, quota), trace })
}
