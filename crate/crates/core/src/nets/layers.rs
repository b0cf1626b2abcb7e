//! Parameter initialization and the transformer building blocks.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{ParameterStore, Tape, Tensor, Var};

use super::{NetsError, TransformerConfig};

type Result<T> = std::result::Result<T, NetsError>;

/// Seeded parameter initializer.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParameterStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f32) -> Result<()> {
        let t = Tensor::from_fn(shape, |_| self.rng.random_range(-bound..=bound));
        Ok(self.store.insert(name, t)?)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f32) -> Result<()> {
        let t = Tensor::from_fn(shape, |_| std * self.rng.sample::<f32, _>(StandardNormal));
        Ok(self.store.insert(name, t)?)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f32) -> Result<()> {
        Ok(self.store.insert(name, Tensor::full(shape, v))?)
    }

    /// `name.w` of shape `[din, dout]` and `name.b` of shape `[dout]`, both
    /// uniform in `±1/√din`.
    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<()> {
        let bound = 1.0 / (din as f32).sqrt();
        self.uniform(&format!("{name}.w"), &[din, dout], bound)?;
        self.uniform(&format!("{name}.b"), &[dout], bound)
    }

    pub fn layer_norm(&mut self, name: &str, d: usize) -> Result<()> {
        self.constant(&format!("{name}.g"), &[d], 1.0)?;
        self.constant(&format!("{name}.b"), &[d], 0.0)
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        let bound = 1.0 / ((cin * k * k) as f32).sqrt();
        self.uniform(&format!("{name}.w"), &[cout, cin, k, k], bound)?;
        self.uniform(&format!("{name}.b"), &[cout], bound)
    }

    fn attention(&mut self, name: &str, d: usize) -> Result<()> {
        for p in ["q", "k", "v", "o"] {
            self.linear(&format!("{name}.{p}"), d, d)?;
        }
        Ok(())
    }

    fn feed_forward(&mut self, name: &str, d: usize, dff: usize) -> Result<()> {
        self.linear(&format!("{name}.fc1"), d, dff)?;
        self.linear(&format!("{name}.fc2"), dff, d)
    }

    pub fn encoder(&mut self, name: &str, cfg: &TransformerConfig) -> Result<()> {
        let d = cfg.d_model;
        for i in 0..cfg.layers {
            let l = format!("{name}.{i}");
            self.layer_norm(&format!("{l}.ln1"), d)?;
            self.attention(&format!("{l}.attn"), d)?;
            self.layer_norm(&format!("{l}.ln2"), d)?;
            self.feed_forward(&format!("{l}.ff"), d, cfg.d_ff)?;
        }
        self.layer_norm(&format!("{name}.ln"), d)
    }

    pub fn decoder(&mut self, name: &str, cfg: &TransformerConfig) -> Result<()> {
        let d = cfg.d_model;
        for i in 0..cfg.layers {
            let l = format!("{name}.{i}");
            self.layer_norm(&format!("{l}.ln1"), d)?;
            self.attention(&format!("{l}.self"), d)?;
            self.layer_norm(&format!("{l}.ln2"), d)?;
            self.attention(&format!("{l}.cross"), d)?;
            self.layer_norm(&format!("{l}.ln3"), d)?;
            self.feed_forward(&format!("{l}.ff"), d, cfg.d_ff)?;
        }
        self.layer_norm(&format!("{name}.ln"), d)
    }
}

/// Fixed sinusoidal position table `[len, d]`.
pub fn sinusoidal(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(&[len, d], |i| {
        let (pos, j) = ((i / d) as f64, i % d);
        let freq = 10000f64.powf(-((j / 2 * 2) as f64) / d as f64);
        let a = pos * freq;
        (if j % 2 == 0 { a.sin() } else { a.cos() }) as f32
    })
}

/// Places a store's parameters on a tape, either trainable or frozen.
#[derive(Clone, Copy)]
pub(crate) struct Bind<'a> {
    pub store: &'a ParameterStore,
    pub trainable: bool,
}

impl Bind<'_> {
    pub fn p(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        Ok(if self.trainable { tape.param(self.store, name)? } else { tape.frozen_param(self.store, name)? })
    }

    pub fn linear(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let w = self.p(tape, &format!("{name}.w"))?;
        let b = self.p(tape, &format!("{name}.b"))?;
        let y = tape.matmul(x, w)?;
        Ok(tape.add(y, b)?)
    }

    pub fn layer_norm(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let g = self.p(tape, &format!("{name}.g"))?;
        let b = self.p(tape, &format!("{name}.b"))?;
        Ok(tape.layer_norm(x, g, b)?)
    }

    pub fn conv(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let w = self.p(tape, &format!("{name}.w"))?;
        let b = self.p(tape, &format!("{name}.b"))?;
        Ok(tape.conv2d(x, w, b)?)
    }

    /// `[B, T, D] -> [B, H, T, D/H]`.
    fn split_heads(tape: &mut Tape, x: Var, heads: usize) -> Result<Var> {
        let (b, t, d) = dims3(tape, x);
        let x = tape.reshape(x, &[b, t, heads, d / heads])?;
        Ok(tape.permute(x, &[0, 2, 1, 3])?)
    }

    /// Multi-head scaled dot-product attention of `xq [B,Tq,D]` over `xkv [B,Tk,D]`.
    pub fn attention(&self, tape: &mut Tape, name: &str, xq: Var, xkv: Var, heads: usize) -> Result<Var> {
        let (b, tq, d) = dims3(tape, xq);
        let q = self.linear(tape, &format!("{name}.q"), xq)?;
        let k = self.linear(tape, &format!("{name}.k"), xkv)?;
        let v = self.linear(tape, &format!("{name}.v"), xkv)?;
        let q = Self::split_heads(tape, q, heads)?;
        let k = Self::split_heads(tape, k, heads)?;
        let v = Self::split_heads(tape, v, heads)?;
        let s = tape.matmul_t(q, k)?;
        let s = tape.scale(s, 1.0 / ((d / heads) as f32).sqrt());
        let a = tape.softmax(s);
        let o = tape.matmul(a, v)?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[b, tq, d])?;
        self.linear(tape, &format!("{name}.o"), o)
    }

    fn feed_forward(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let h = self.linear(tape, &format!("{name}.fc1"), x)?;
        let h = tape.gelu(h);
        self.linear(tape, &format!("{name}.fc2"), h)
    }

    /// Pre-norm encoder stack followed by a final layer norm.
    pub fn encoder(&self, tape: &mut Tape, name: &str, mut x: Var, cfg: &TransformerConfig) -> Result<Var> {
        for i in 0..cfg.layers {
            let l = format!("{name}.{i}");
            let h = self.layer_norm(tape, &format!("{l}.ln1"), x)?;
            let h = self.attention(tape, &format!("{l}.attn"), h, h, cfg.heads)?;
            x = tape.add(x, h)?;
            let h = self.layer_norm(tape, &format!("{l}.ln2"), x)?;
            let h = self.feed_forward(tape, &format!("{l}.ff"), h)?;
            x = tape.add(x, h)?;
        }
        self.layer_norm(tape, &format!("{name}.ln"), x)
    }

    /// Pre-norm decoder stack: self-attention, cross-attention into `mem`, feed-forward.
    pub fn decoder(&self, tape: &mut Tape, name: &str, mut q: Var, mem: Var, cfg: &TransformerConfig) -> Result<Var> {
        for i in 0..cfg.layers {
            let l = format!("{name}.{i}");
            let h = self.layer_norm(tape, &format!("{l}.ln1"), q)?;
            let h = self.attention(tape, &format!("{l}.self"), h, h, cfg.heads)?;
            q = tape.add(q, h)?;
            let h = self.layer_norm(tape, &format!("{l}.ln2"), q)?;
            let h = self.attention(tape, &format!("{l}.cross"), h, mem, cfg.heads)?;
            q = tape.add(q, h)?;
            let h = self.layer_norm(tape, &format!("{l}.ln3"), q)?;
            let h = self.feed_forward(tape, &format!("{l}.ff"), h)?;
            q = tape.add(q, h)?;
        }
        self.layer_norm(tape, &format!("{name}.ln"), q)
    }

    /// Learnable queries `[N, D]` repeated over a batch of `b`.
    pub fn queries(&self, tape: &mut Tape, name: &str, b: usize) -> Result<Var> {
        let q = self.p(tape, name)?;
        let shape = tape.shape(q).to_vec();
        let zeros = tape.constant(Tensor::zeros(&[b, shape[0], shape[1]]));
        Ok(tape.add(zeros, q)?)
    }
}

pub(crate) fn dims3(tape: &Tape, x: Var) -> (usize, usize, usize) {
    let s = tape.shape(x);
    (s[0], s[1], s[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoidal_table() {
        let t = sinusoidal(4, 6);
        assert_eq!(t.shape(), &[4, 6]);
        // Position 0: sin(0) = 0, cos(0) = 1.
        assert_eq!(&t.data()[..6], &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let (p, j) = (3usize, 2usize);
        let expected = (3.0f64 * 10000f64.powf(-2.0 / 6.0)).sin() as f32;
        assert!((t.data()[p * 6 + j] - expected).abs() < 1e-6);
    }
}
