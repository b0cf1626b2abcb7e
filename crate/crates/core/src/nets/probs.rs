use crate::autodiff::Tensor;
use crate::sketch::tokens::{GRID_TOKENS, SLOT_LEN, VOCAB};
use crate::sketch::TokenGrid;

use super::NetsError;

/// Row tolerance accepted by [`TokenProbabilities::new`].
pub const SIMPLEX_TOL: f32 = 1e-4;

/// One categorical distribution over the vocabulary per grid token,
/// row-major `(128, 73)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenProbabilities {
    data: Vec<f32>,
}

impl TokenProbabilities {
    pub const ROWS: usize = GRID_TOKENS;

    pub fn new(data: Vec<f32>) -> Result<Self, NetsError> {
        if data.len() != GRID_TOKENS * VOCAB {
            return Err(NetsError::ShapeMismatch { expected: vec![GRID_TOKENS, VOCAB], found: vec![data.len()] });
        }
        for (row, p) in data.chunks_exact(VOCAB).enumerate() {
            let sum: f32 = p.iter().sum();
            if p.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL {
                return Err(NetsError::NotSimplex { row });
            }
        }
        Ok(Self { data })
    }

    /// Accepts `(128, 73)` or `(1, 128, 73)`.
    pub fn from_tensor(t: &Tensor) -> Result<Self, NetsError> {
        let ok = matches!(t.shape(), [GRID_TOKENS, VOCAB] | [1, GRID_TOKENS, VOCAB]);
        if !ok {
            return Err(NetsError::ShapeMismatch { expected: vec![GRID_TOKENS, VOCAB], found: t.shape().to_vec() });
        }
        Self::new(t.data().to_vec())
    }

    pub fn one_hot(grid: &TokenGrid) -> Self {
        let mut data = vec![0.0; GRID_TOKENS * VOCAB];
        for (i, &t) in grid.flat().iter().enumerate() {
            data[i * VOCAB + t as usize] = 1.0;
        }
        Self { data }
    }

    pub fn uniform() -> Self {
        Self { data: vec![1.0 / VOCAB as f32; GRID_TOKENS * VOCAB] }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * VOCAB..(i + 1) * VOCAB]
    }

    /// Probability of `token` at position `pos` of `slot`.
    pub fn prob(&self, slot: usize, pos: usize, token: u8) -> f32 {
        self.data[(slot * SLOT_LEN + pos) * VOCAB + token as usize]
    }

    /// Most likely token per position; ties go to the lower token id.
    pub fn argmax(&self) -> TokenGrid {
        let flat: Vec<u8> = self.data.chunks_exact(VOCAB).map(argmax_row).collect();
        TokenGrid::from_flat(&flat).expect("128 rows")
    }

    /// Reorders slots: slot `i` of the result is slot `perm[i]` of `self`.
    pub fn permute_slots(&self, perm: &[usize]) -> Self {
        let w = SLOT_LEN * VOCAB;
        let mut data = Vec::with_capacity(self.data.len());
        for &j in perm {
            data.extend_from_slice(&self.data[j * w..(j + 1) * w]);
        }
        Self { data }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[GRID_TOKENS, VOCAB], self.data.clone()).expect("fixed shape")
    }
}

pub(crate) fn argmax_row(p: &[f32]) -> u8 {
    let mut best = 0;
    for (k, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = k;
        }
    }
    best as u8
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{sample_sketch, GeneratorConfig, RandomSource};

    #[test]
    fn one_hot_argmax_round_trip() {
        let mut rng = RandomSource::new(3);
        let (grid, _) = sample_sketch(&GeneratorConfig::default(), &mut rng).unwrap();
        let p = TokenProbabilities::one_hot(&grid);
        assert_eq!(p.argmax(), grid);
        assert!(TokenProbabilities::new(p.data().to_vec()).is_ok());
    }

    #[test]
    fn rejects_off_simplex_rows() {
        let mut d = TokenProbabilities::uniform().data().to_vec();
        d[VOCAB * 5] += 0.1;
        assert!(matches!(TokenProbabilities::new(d), Err(NetsError::NotSimplex { row: 5 })));
        assert!(TokenProbabilities::new(vec![0.0; 10]).is_err());
    }

    #[test]
    fn permute_matches_grid_permutation() {
        let mut rng = RandomSource::new(4);
        let (grid, _) = sample_sketch(&GeneratorConfig::default(), &mut rng).unwrap();
        let perm: Vec<usize> = (0..16).rev().collect();
        let p = TokenProbabilities::one_hot(&grid).permute_slots(&perm);
        assert_eq!(p.argmax(), grid.permute_slots(&perm));
    }
}
