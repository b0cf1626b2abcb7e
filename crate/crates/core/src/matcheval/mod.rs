//! Optimal slot assignment and evaluation metrics.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nets::TokenProbabilities;
use crate::raster::SketchImage;
use crate::sketch::tokens::{PARAM_MAX, PARAM_MIN, PAD};
use crate::sketch::{TokenGrid, MAX_PRIMITIVES};

mod hungarian;

pub use hungarian::{brute_force_assignment, hungarian};

/// Probability floor inside `-ln p` costs.
pub const COST_CLAMP: f32 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("cost matrix entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
    #[error("cost matrix is not square: {rows} rows, row {row} has {len} entries")]
    NotSquare { rows: usize, row: usize, len: usize },
    #[error("not a permutation of 0..{0}")]
    InvalidPermutation(usize),
    #[error("image sizes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
}

/// `perm[i]` is the prediction slot assigned to ground-truth slot `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub cost: f64,
}

impl Assignment {
    pub fn identity(n: usize) -> Self {
        Self { perm: (0..n).collect(), cost: 0.0 }
    }

    /// Validates that `perm` is a bijection on `0..perm.len()`.
    pub fn from_perm(perm: Vec<usize>) -> Result<Self, MatchError> {
        let n = perm.len();
        let mut seen = vec![false; n];
        for &j in &perm {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(MatchError::InvalidPermutation(n));
            }
        }
        Ok(Self { perm, cost: 0.0 })
    }

    /// Sum of `cost[i][perm[i]]`.
    pub fn total(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| cost[i][j]).sum()
    }

    /// `inv[perm[i]] = i`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.perm.len()];
        for (i, &j) in self.perm.iter().enumerate() {
            inv[j] = i;
        }
        inv
    }
}

/// `cost[i][j]` = token negative log-likelihood of target slot `i` under
/// prediction slot `j`. Empty target slots are scored against padding.
pub fn cost_matrix(pred: &TokenProbabilities, target: &TokenGrid) -> Vec<Vec<f64>> {
    let mut cost = vec![vec![0.0; MAX_PRIMITIVES]; MAX_PRIMITIVES];
    for (i, slot) in target.slots.iter().enumerate() {
        for (j, c) in cost[i].iter_mut().enumerate() {
            *c = slot
                .iter()
                .enumerate()
                .map(|(k, &t)| -f64::from(pred.prob(j, k, t).max(COST_CLAMP)).ln())
                .sum();
        }
    }
    cost
}

/// Hungarian-optimal assignment of prediction slots to target slots.
pub fn match_slots(pred: &TokenProbabilities, target: &TokenGrid) -> Assignment {
    hungarian(&cost_matrix(pred, target)).expect("probability costs are finite")
}

/// Matches two discrete grids by treating `pred` as one-hot probabilities.
pub fn match_grids(pred: &TokenGrid, target: &TokenGrid) -> Assignment {
    match_slots(&TokenProbabilities::one_hot(pred), target)
}

/// `(target, prediction)` token pairs after applying the assignment.
fn aligned(pred: &TokenGrid, target: &TokenGrid, a: &Assignment) -> Vec<(u8, u8)> {
    let pred = pred.permute_slots(&a.perm);
    target.flat().into_iter().zip(pred.flat()).collect()
}

/// Exact-match rate over non-padding target tokens. Returns `(acc, count)`;
/// an all-padding target scores 1.
pub fn metric_acc(pred: &TokenGrid, target: &TokenGrid, a: &Assignment) -> (f64, usize) {
    let (mut hit, mut n) = (0usize, 0usize);
    for (t, p) in aligned(pred, target, a) {
        if t != PAD {
            n += 1;
            hit += usize::from(t == p);
        }
    }
    let acc = if n == 0 { 1.0 } else { hit as f64 / n as f64 };
    (acc, n)
}

/// Mean squared token difference over target parameter positions. Returns
/// `(mse, count)`; 0 when the target has no parameter tokens.
pub fn metric_param_mse(pred: &TokenGrid, target: &TokenGrid, a: &Assignment) -> (f64, usize) {
    let (mut sum, mut n) = (0.0, 0usize);
    for (t, p) in aligned(pred, target, a) {
        if (PARAM_MIN..=PARAM_MAX).contains(&t) {
            n += 1;
            sum += (f64::from(p) - f64::from(t)).powi(2);
        }
    }
    let mse = if n == 0 { 0.0 } else { sum / n as f64 };
    (mse, n)
}

fn same_dims(a: &SketchImage, b: &SketchImage) -> Result<(), MatchError> {
    if a.width != b.width || a.height != b.height {
        return Err(MatchError::ShapeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Average of the squared error over target foreground pixels and over all
/// pixels. The foreground term is 0 for an all-background target.
pub fn metric_img_mse(pred: &SketchImage, target: &SketchImage) -> Result<f64, MatchError> {
    same_dims(pred, target)?;
    let (mut fg, mut nfg, mut all) = (0.0, 0usize, 0.0);
    for (&p, &t) in pred.pixels.iter().zip(&target.pixels) {
        let d = (f64::from(p) - f64::from(t)).powi(2);
        all += d;
        if t >= 0.5 {
            fg += d;
            nfg += 1;
        }
    }
    let fg = if nfg == 0 { 0.0 } else { fg / nfg as f64 };
    Ok(0.5 * fg + 0.5 * all / pred.pixels.len().max(1) as f64)
}

/// Result of [`metric_chamfer`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Chamfer {
    pub value: f64,
    pub pred_foreground: usize,
    pub target_foreground: usize,
    /// Exactly one side had no foreground; `value` is the squared diagonal.
    pub sentinel: bool,
}

/// Squared image diagonal, returned when one side has no foreground.
pub fn chamfer_sentinel(width: usize, height: usize) -> f64 {
    (width * width + height * height) as f64
}

/// Bidirectional chamfer distance in squared pixels over all foreground
/// pixels (threshold 0.5). Two empty images score 0.
pub fn metric_chamfer(pred: &SketchImage, target: &SketchImage) -> Result<Chamfer, MatchError> {
    same_dims(pred, target)?;
    let (p, t) = (pred.foreground(), target.foreground());
    let mut out = Chamfer { value: 0.0, pred_foreground: p.len(), target_foreground: t.len(), sentinel: false };
    match (p.is_empty(), t.is_empty()) {
        (true, true) => {}
        (true, false) | (false, true) => {
            out.value = chamfer_sentinel(pred.width, pred.height);
            out.sentinel = true;
        }
        (false, false) => {
            let dp = SquaredDistanceField::new(target);
            let dt = SquaredDistanceField::new(pred);
            let a = p.iter().map(|&(x, y)| dp.at(x, y)).sum::<f64>() / p.len() as f64;
            let b = t.iter().map(|&(x, y)| dt.at(x, y)).sum::<f64>() / t.len() as f64;
            out.value = 0.5 * a + 0.5 * b;
        }
    }
    Ok(out)
}

/// Exact squared Euclidean distance to the nearest foreground pixel, via
/// two passes of the 1-D lower-envelope transform.
struct SquaredDistanceField {
    width: usize,
    d: Vec<f64>,
}

impl SquaredDistanceField {
    fn new(img: &SketchImage) -> Self {
        let (w, h) = (img.width, img.height);
        let inf = 1e20;
        let mut d: Vec<f64> = img.pixels.iter().map(|&v| if v >= 0.5 { 0.0 } else { inf }).collect();
        let mut buf = vec![0.0; w.max(h)];
        for x in 0..w {
            let col: Vec<f64> = (0..h).map(|y| d[y * w + x]).collect();
            edt_1d(&col, &mut buf[..h]);
            for y in 0..h {
                d[y * w + x] = buf[y];
            }
        }
        for y in 0..h {
            let row = d[y * w..(y + 1) * w].to_vec();
            edt_1d(&row, &mut d[y * w..(y + 1) * w]);
        }
        Self { width: w, d }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.d[y * self.width + x]
    }
}

fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let sq = |q: usize| (q * q) as f64;
    for q in 1..n {
        loop {
            let r = v[k];
            let s = ((f[q] + sq(q)) - (f[r] + sq(r))) / (2.0 * (q as f64 - r as f64));
            if s <= z[k] && k > 0 {
                k -= 1;
            } else {
                k += 1;
                v[k] = q;
                z[k] = s;
                z[k + 1] = f64::INFINITY;
                break;
            }
        }
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let dq = q as f64 - v[k] as f64;
        *o = dq * dq + f[v[k]];
    }
}

/// All four metrics for one sample plus the counts behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub acc: f64,
    pub param_mse: f64,
    pub img_mse: f64,
    pub chamfer: f64,
    /// Non-padding target tokens.
    pub t_acc: usize,
    /// Target parameter tokens.
    pub t_mse: usize,
    pub pred_foreground: usize,
    pub target_foreground: usize,
    pub chamfer_sentinel: bool,
}

impl MetricReport {
    /// Scores `pred` against `target` under `assignment`, with both grids
    /// rendered to `pred_img` / `target_img` by the caller.
    pub fn compute(
        pred: &TokenGrid,
        target: &TokenGrid,
        assignment: &Assignment,
        pred_img: &SketchImage,
        target_img: &SketchImage,
    ) -> Result<Self, MatchError> {
        let (acc, t_acc) = metric_acc(pred, target, assignment);
        let (param_mse, t_mse) = metric_param_mse(pred, target, assignment);
        let img_mse = metric_img_mse(pred_img, target_img)?;
        let cd = metric_chamfer(pred_img, target_img)?;
        Ok(Self {
            acc,
            param_mse,
            img_mse,
            chamfer: cd.value,
            t_acc,
            t_mse,
            pred_foreground: cd.pred_foreground,
            target_foreground: cd.target_foreground,
            chamfer_sentinel: cd.sentinel,
        })
    }
}

/// Corpus means of the per-sample metrics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub samples: usize,
    pub acc: f64,
    pub param_mse: f64,
    pub img_mse: f64,
    pub chamfer: f64,
    pub chamfer_sentinels: usize,
}

impl MetricSummary {
    pub fn from_reports(reports: &[MetricReport]) -> Self {
        let n = reports.len();
        if n == 0 {
            return Self::default();
        }
        let mean = |f: fn(&MetricReport) -> f64| reports.iter().map(f).sum::<f64>() / n as f64;
        Self {
            samples: n,
            acc: mean(|r| r.acc),
            param_mse: mean(|r| r.param_mse),
            img_mse: mean(|r| r.img_mse),
            chamfer: mean(|r| r.chamfer),
            chamfer_sentinels: reports.iter().filter(|r| r.chamfer_sentinel).count(),
        }
    }
}
