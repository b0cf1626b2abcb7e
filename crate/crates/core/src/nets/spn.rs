use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParameterStore, Tape, Var};
use crate::raster::SketchImage;
use crate::sketch::tokens::{GRID_TOKENS, VOCAB};

use super::layers::{sinusoidal, Bind, Init};
use super::{batch_images, load_checked, save_checkpoint, split_probs, NetsError, SpnConfig, TokenProbabilities};

const KERNEL: usize = 3;

/// Parameterizer: images `[B, H, W]` to token probabilities `[B, 128, 73]`.
#[derive(Debug, Clone)]
pub struct SpnModel {
    pub config: SpnConfig,
    pub params: ParameterStore,
}

impl SpnModel {
    pub fn new(config: SpnConfig, seed: u64) -> Result<Self, NetsError> {
        config.validate()?;
        let t = &config.transformer;
        let (c, d) = (config.backbone_channels, t.d_model);
        let mut params = ParameterStore::new();
        let mut init = Init { store: &mut params, rng: ChaCha8Rng::seed_from_u64(seed) };
        for i in 0..config.backbone_layers {
            init.conv(&format!("spn.conv{i}"), if i == 0 { 1 } else { c }, c, KERNEL)?;
        }
        init.linear("spn.patch", c * t.patch * t.patch, d)?;
        init.encoder("spn.enc", t)?;
        init.normal("spn.queries", &[GRID_TOKENS, d], 1.0)?;
        init.decoder("spn.dec", t)?;
        init.linear("spn.head", d, VOCAB)?;
        Ok(Self { config, params })
    }

    pub fn forward(&self, tape: &mut Tape, images: Var, trainable: bool) -> Result<Var, NetsError> {
        let n = self.config.image_size;
        let shape = tape.shape(images).to_vec();
        if shape.len() != 3 || shape[1] != n || shape[2] != n {
            return Err(NetsError::ShapeMismatch { expected: vec![0, n, n], found: shape });
        }
        let b = shape[0];
        let t = &self.config.transformer;
        let (c, de) = (self.config.backbone_channels, t.patch);
        let side = t.patches_per_side(n);
        let bind = Bind { store: &self.params, trainable };

        let mut x = tape.reshape(images, &[b, 1, n, n])?;
        for i in 0..self.config.backbone_layers {
            x = bind.conv(tape, &format!("spn.conv{i}"), x)?;
            x = tape.relu(x);
        }
        // [B, C, py, dy, px, dx] -> [B, py, px, C, dy, dx] -> [B, P, C·de²]
        let x = tape.reshape(x, &[b, c, side, de, side, de])?;
        let x = tape.permute(x, &[0, 2, 4, 1, 3, 5])?;
        let x = tape.reshape(x, &[b, side * side, c * de * de])?;
        let x = bind.linear(tape, "spn.patch", x)?;
        let pos = tape.constant(sinusoidal(side * side, t.d_model));
        let x = tape.add(x, pos)?;
        let mem = bind.encoder(tape, "spn.enc", x, t)?;

        let q = bind.queries(tape, "spn.queries", b)?;
        let q = bind.decoder(tape, "spn.dec", q, mem, t)?;
        let logits = bind.linear(tape, "spn.head", q)?;
        Ok(tape.softmax(logits))
    }

    pub fn predict(&self, images: &[SketchImage]) -> Result<Vec<TokenProbabilities>, NetsError> {
        let mut tape = Tape::new();
        let x = tape.constant(batch_images(images, self.config.image_size)?);
        let y = self.forward(&mut tape, x, false)?;
        split_probs(tape.value(y))
    }

    pub fn save(&self, path: &Path) -> Result<(), NetsError> {
        save_checkpoint(&self.params, path)
    }

    pub fn load(path: &Path, config: SpnConfig) -> Result<Self, NetsError> {
        let mut model = Self::new(config, 0)?;
        model.params = load_checked(path, &model.params)?;
        Ok(model)
    }
}
