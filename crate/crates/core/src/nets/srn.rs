use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParameterStore, Tape, Tensor, Var};
use crate::raster::SketchImage;
use crate::sketch::tokens::{GRID_TOKENS, PARAM_MIN, VOCAB};
use crate::sketch::BIN_COUNT;

use super::layers::{sinusoidal, Bind, Init};
use super::{batch_probs, load_checked, save_checkpoint, split_images, NetsError, SrnConfig, TokenProbabilities};

/// Initial head bias: renders start near background (sigmoid(-3) ≈ 0.05).
const HEAD_BIAS_INIT: f32 = -3.0;

/// Overwrites the parameter-token rows of a `[VOCAB, d]` table with Fourier
/// features of the bin value, so nearby coordinates start with nearby
/// embeddings. Symbolic tokens keep their random rows.
fn value_features(table: &Tensor, d: usize) -> Tensor {
    let mut data = table.data().to_vec();
    let half = d / 2;
    for k in 0..BIN_COUNT {
        let v = (k as f64 + 0.5) / BIN_COUNT as f64;
        let row = &mut data[(PARAM_MIN as usize + k) * d..][..d];
        for m in 0..half {
            // Angular frequencies from pi up to 32 pi, geometrically spaced.
            let w = std::f64::consts::PI * 32f64.powf(m as f64 / (half.max(2) - 1) as f64);
            row[2 * m] = (w * v).sin() as f32;
            row[2 * m + 1] = (w * v).cos() as f32;
        }
    }
    Tensor::new(table.shape(), data).expect("same shape")
}

/// Neural renderer: token probabilities `[B, 128, 73]` to images `[B, H, W]`.
#[derive(Debug, Clone)]
pub struct SrnModel {
    pub config: SrnConfig,
    pub params: ParameterStore,
}

impl SrnModel {
    pub fn new(config: SrnConfig, seed: u64) -> Result<Self, NetsError> {
        let t = &config.transformer;
        t.validate(config.image_size)?;
        let d = t.d_model;
        let side = t.patches_per_side(config.image_size);
        let mut params = ParameterStore::new();
        let mut init = Init { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
        init.normal("srn.embed", &[VOCAB, d], 1.0)?;
        let table = value_features(init.store.value("srn.embed")?, d);
        init.store.set_value("srn.embed", table)?;
        init.encoder("srn.enc", t)?;
        init.normal("srn.queries", &[side * side, d], 1.0)?;
        init.decoder("srn.dec", t)?;
        init.linear("srn.head", d, t.patch * t.patch)?;
        params.set_value("srn.head.b", Tensor::full(&[t.patch * t.patch], HEAD_BIAS_INIT))?;
        Ok(Self { config, params })
    }

    /// Records the forward pass. `tokens` is `[B, 128, 73]`; with
    /// `trainable = false` the weights enter the tape as constants.
    pub fn forward(&self, tape: &mut Tape, tokens: Var, trainable: bool) -> Result<Var, NetsError> {
        let shape = tape.shape(tokens).to_vec();
        if shape.len() != 3 || shape[1] != GRID_TOKENS || shape[2] != VOCAB {
            return Err(NetsError::ShapeMismatch { expected: vec![0, GRID_TOKENS, VOCAB], found: shape });
        }
        let b = shape[0];
        let t = &self.config.transformer;
        let (d, de) = (t.d_model, t.patch);
        let side = t.patches_per_side(self.config.image_size);
        let bind = Bind { store: &self.params, trainable };

        let table = bind.p(tape, "srn.embed")?;
        let x = tape.embed(tokens, table)?;
        let pos = tape.constant(sinusoidal(GRID_TOKENS, d));
        let x = tape.add(x, pos)?;
        let mem = bind.encoder(tape, "srn.enc", x, t)?;

        let q = bind.queries(tape, "srn.queries", b)?;
        let q = bind.decoder(tape, "srn.dec", q, mem, t)?;
        let patches = bind.linear(tape, "srn.head", q)?;
        let patches = tape.sigmoid(patches);
        // [B, P, de²] -> [B, py, px, dy, dx] -> [B, py, dy, px, dx] -> [B, H, W]
        let p = tape.reshape(patches, &[b, side, side, de, de])?;
        let p = tape.permute(p, &[0, 1, 3, 2, 4])?;
        Ok(tape.reshape(p, &[b, side * de, side * de])?)
    }

    /// Inference on a batch of token distributions.
    pub fn render(&self, probs: &[TokenProbabilities]) -> Result<Vec<SketchImage>, NetsError> {
        let mut tape = Tape::new();
        let x = tape.constant(batch_probs(probs));
        let y = self.forward(&mut tape, x, false)?;
        Ok(split_images(tape.value(y)))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetsError> {
        save_checkpoint(&self.params, path)
    }

    /// Loads weights and checks every parameter against `config`.
    pub fn load(path: &Path, config: SrnConfig) -> Result<Self, NetsError> {
        let mut model = Self::new(config, 0)?;
        model.params = load_checked(path, &model.params)?;
        Ok(model)
    }
}
