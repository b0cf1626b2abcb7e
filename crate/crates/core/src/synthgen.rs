//! Seeded generation of random valid sketches and paired explicit renders.
//!
//! Parameters are drawn directly on the quantized grid, so every generated
//! sketch tokenizes back to exactly the grid it was sampled as.

use std::path::Path;

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::io::write_atomic;
use crate::raster::{rasterize, synthesize_handdrawn_with, write_pgm, HanddrawConfig, RasterError};
use crate::sketch::tokens::{
    check_slot, type_token, SlotStatus, CONSTRUCTION, NON_CONSTRUCTION, PARAM_MIN, SLOT_LEN,
};
use crate::sketch::{dataset, detokenize, PrimitiveKind, Sketch, SketchError, TokenGrid, BIN_COUNT, BIN_WIDTH, MAX_PRIMITIVES};

/// Consecutive rejected draws tolerated before giving up.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{0} consecutive rejected primitives; generator config is too restrictive")]
    RejectionOverflow(usize),
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sketch(#[from] SketchError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Deterministic random source: ChaCha8 keyed by a 64-bit seed, with
/// independent numbered streams.
pub struct RandomSource;

impl RandomSource {
    pub fn new(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    /// Inclusive range of primitives per sketch.
    pub min_primitives: usize,
    pub max_primitives: usize,
    /// Weights for line, arc, circle and point.
    pub type_weights: [f64; 4],
    pub construction_probability: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            min_primitives: 6,
            max_primitives: 16,
            type_weights: [0.55, 0.20, 0.15, 0.10],
            construction_probability: 0.1,
            seed: 0,
        }
    }
}

const WEIGHTED_KINDS: [PrimitiveKind; 4] =
    [PrimitiveKind::Line, PrimitiveKind::Arc, PrimitiveKind::Circle, PrimitiveKind::Point];

impl GeneratorConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.to_string()));
        if self.min_primitives < 1 || self.max_primitives > MAX_PRIMITIVES || self.min_primitives > self.max_primitives {
            return bad("primitive count range must lie within 1..=16");
        }
        if self.type_weights.iter().any(|w| !(*w >= 0.0)) || (self.type_weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("type weights must be non-negative and sum to 1");
        }
        if !(0.0..=1.0).contains(&self.construction_probability) {
            return bad("construction probability must lie in [0, 1]");
        }
        Ok(())
    }
}

fn bin_value(token: u8) -> f64 {
    f64::from(token - PARAM_MIN) * BIN_WIDTH
}

/// Extra acceptance rules beyond slot syntax: circles must stay inside the
/// image and arcs must not be collinear.
fn acceptable(slot: &[u8; SLOT_LEN]) -> bool {
    if check_slot(slot) != SlotStatus::Primitive {
        return false;
    }
    let v = |i: usize| bin_value(slot[i]);
    match crate::sketch::tokens::kind_of_token(slot[0]) {
        Some(PrimitiveKind::Circle) => {
            let (x, y, r) = (v(1), v(2), v(3));
            x - r >= 0.0 && y - r >= 0.0 && x + r <= 1.0 && y + r <= 1.0
        }
        Some(PrimitiveKind::Arc) => {
            let cross = (v(3) - v(1)) * (v(6) - v(2)) - (v(4) - v(2)) * (v(5) - v(1));
            cross.abs() > 1e-9
        }
        _ => true,
    }
}

/// Draws one valid sketch and its token grid.
pub fn sample_sketch<R: Rng>(cfg: &GeneratorConfig, rng: &mut R) -> Result<(TokenGrid, Sketch), SynthError> {
    cfg.validate()?;
    let kinds = WeightedIndex::new(cfg.type_weights).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let count = rng.random_range(cfg.min_primitives..=cfg.max_primitives);
    let mut grid = TokenGrid::default();
    for slot in grid.slots.iter_mut().take(count) {
        let kind = WEIGHTED_KINDS[kinds.sample(rng)];
        let construction = rng.random_bool(cfg.construction_probability);
        let mut rejections = 0;
        loop {
            let mut s = [0u8; SLOT_LEN];
            s[0] = type_token(kind);
            let n = kind.param_count();
            for t in &mut s[1..=n] {
                *t = PARAM_MIN + rng.random_range(0..BIN_COUNT as u8);
            }
            s[n + 1] = if construction { CONSTRUCTION } else { NON_CONSTRUCTION };
            if acceptable(&s) {
                *slot = s;
                break;
            }
            rejections += 1;
            if rejections >= MAX_REJECTIONS {
                return Err(SynthError::RejectionOverflow(rejections));
            }
        }
    }
    let sketch = detokenize(&grid).sketch;
    Ok((grid, sketch))
}

/// What to write in a corpus directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub image_size: usize,
    /// Also write hand-drawn renders when set.
    pub handdrawn: Option<HanddrawConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub image_size: usize,
    pub handdrawn: Option<HanddrawConfig>,
    pub counts: SplitCounts,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// Writes `{train,val,test}.jsonl`, `images/{split}/{i}.pgm`, optionally
/// `images_hd/{split}/{i}.pgm`, and `manifest.json` under `out_dir`.
pub fn build_corpus(cfg: &GeneratorConfig, spec: &CorpusSpec, out_dir: &Path) -> Result<CorpusManifest, SynthError> {
    cfg.validate()?;
    if let Some(hd) = &spec.handdrawn {
        hd.validate().map_err(SynthError::InvalidConfig)?;
    }
    std::fs::create_dir_all(out_dir)?;
    let sizes = [spec.n_train, spec.n_val, spec.n_test];
    for (stream, (name, &n)) in SPLITS.iter().zip(&sizes).enumerate() {
        let mut rng = RandomSource::stream(cfg.seed, 1 + stream as u64);
        let mut hd_rng = RandomSource::stream(cfg.seed, 101 + stream as u64);
        let mut sketches = Vec::with_capacity(n);
        for i in 0..n {
            let (_, sketch) = sample_sketch(cfg, &mut rng)?;
            let img = rasterize(&sketch, spec.image_size, spec.image_size);
            write_pgm(&img, &out_dir.join("images").join(name).join(format!("{i}.pgm")))?;
            if let Some(hd) = &spec.handdrawn {
                let img = synthesize_handdrawn_with(&sketch, hd, spec.image_size, spec.image_size, &mut hd_rng);
                write_pgm(&img, &out_dir.join("images_hd").join(name).join(format!("{i}.pgm")))?;
            }
            sketches.push(sketch);
        }
        dataset::serialize_dataset(&sketches, &out_dir.join(format!("{name}.jsonl")))?;
    }
    let manifest = CorpusManifest {
        seed: cfg.seed,
        generator: cfg.clone(),
        image_size: spec.image_size,
        handdrawn: spec.handdrawn,
        counts: SplitCounts { train: sizes[0], val: sizes[1], test: sizes[2] },
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&out_dir.join("manifest.json"), &json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sketch::tokenize;
    use std::collections::HashSet;

    #[test]
    fn deterministic_per_seed() {
        let cfg = GeneratorConfig::default();
        let a = sample_sketch(&cfg, &mut RandomSource::new(5)).unwrap();
        let b = sample_sketch(&cfg, &mut RandomSource::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn samples_are_self_consistent() {
        let cfg = GeneratorConfig::default();
        let mut rng = RandomSource::new(11);
        for _ in 0..500 {
            let (grid, sketch) = sample_sketch(&cfg, &mut rng).unwrap();
            let d = detokenize(&grid);
            assert_eq!(d.dropped(), 0);
            assert_eq!(d.sketch, sketch);
            assert_eq!(tokenize(&sketch).unwrap(), grid);
            assert!((6..=16).contains(&sketch.len()));
        }
    }

    #[test]
    fn counts_are_uniform() {
        let cfg = GeneratorConfig::default();
        let mut rng = RandomSource::new(3);
        let mut hist = [0usize; 17];
        let n = 10_000;
        for _ in 0..n {
            hist[sample_sketch(&cfg, &mut rng).unwrap().1.len()] += 1;
        }
        let expected = 1.0 / 11.0;
        for (count, &h) in hist.iter().enumerate().skip(6) {
            let freq = h as f64 / n as f64;
            assert!((freq - expected).abs() < 0.02, "count {count}: frequency {freq}");
        }
    }

    #[test]
    fn streams_do_not_collide() {
        let cfg = GeneratorConfig::default();
        let mut seen = HashSet::new();
        for stream in 1..=3 {
            let mut rng = RandomSource::stream(7, stream);
            for _ in 0..3334 {
                assert!(seen.insert(sample_sketch(&cfg, &mut rng).unwrap().0));
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(GeneratorConfig::default().validate().is_ok());
        let bad = GeneratorConfig { type_weights: [0.5, 0.5, 0.5, 0.0], ..GeneratorConfig::default() };
        assert!(matches!(sample_sketch(&bad, &mut RandomSource::new(0)), Err(SynthError::InvalidConfig(_))));
        let bad = GeneratorConfig { min_primitives: 0, ..GeneratorConfig::default() };
        assert!(bad.validate().is_err());
        let bad = GeneratorConfig { max_primitives: 17, ..GeneratorConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn corpus_layout_and_determinism() {
        let cfg = GeneratorConfig { seed: 21, ..GeneratorConfig::default() };
        let spec = CorpusSpec { n_train: 0, n_val: 3, n_test: 2, image_size: 64, handdrawn: Some(HanddrawConfig::default()) };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = build_corpus(&cfg, &spec, a.path()).unwrap();
        build_corpus(&cfg, &spec, b.path()).unwrap();
        assert_eq!(m.counts, SplitCounts { train: 0, val: 3, test: 2 });
        for (name, n) in [("train", 0), ("val", 3), ("test", 2)] {
            let text = std::fs::read_to_string(a.path().join(format!("{name}.jsonl"))).unwrap();
            assert_eq!(text.lines().count(), n);
            assert_eq!(text, std::fs::read_to_string(b.path().join(format!("{name}.jsonl"))).unwrap());
            for i in 0..n {
                for dir in ["images", "images_hd"] {
                    let rel = Path::new(dir).join(name).join(format!("{i}.pgm"));
                    assert_eq!(std::fs::read(a.path().join(&rel)).unwrap(), std::fs::read(b.path().join(&rel)).unwrap());
                }
            }
        }
        assert_eq!(
            std::fs::read(a.path().join("manifest.json")).unwrap(),
            std::fs::read(b.path().join("manifest.json")).unwrap()
        );
    }
}
