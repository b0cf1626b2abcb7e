use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::matcheval::Assignment;
use crate::raster::{build_pyramid, SketchImage, PYRAMID_LEVELS};
use crate::sketch::{TokenGrid, MAX_PRIMITIVES};

use super::NetsError;

/// Image reconstruction loss used to train the renderer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageLossKind {
    Bce,
    L2,
    #[default]
    MultiscaleL2,
}

fn same_shape(tape: &Tape, a: Var, b: Var) -> Result<(), NetsError> {
    if tape.shape(a) != tape.shape(b) {
        return Err(NetsError::ShapeMismatch { expected: tape.shape(b).to_vec(), found: tape.shape(a).to_vec() });
    }
    Ok(())
}

/// Sum over the five pyramid levels of the per-level mean squared
/// difference. Inputs are `[.., H, W]` with `H`, `W` divisible by 16.
pub fn multiscale_l2(tape: &mut Tape, a: Var, b: Var) -> Result<Var, NetsError> {
    same_shape(tape, a, b)?;
    let (mut a, mut b) = (a, b);
    let mut total = tape.mse(a, b)?;
    for _ in 1..PYRAMID_LEVELS {
        a = tape.avg_pool2(a)?;
        b = tape.avg_pool2(b)?;
        let l = tape.mse(a, b)?;
        total = tape.add(total, l)?;
    }
    Ok(total)
}

/// `pred` is the network output, `target` the reference image.
pub fn image_loss(tape: &mut Tape, kind: ImageLossKind, pred: Var, target: Var) -> Result<Var, NetsError> {
    same_shape(tape, pred, target)?;
    Ok(match kind {
        ImageLossKind::Bce => tape.bce(pred, target)?,
        ImageLossKind::L2 => tape.mse(pred, target)?,
        ImageLossKind::MultiscaleL2 => multiscale_l2(tape, pred, target)?,
    })
}

/// Off-tape multiscale l2 between two images.
pub fn multiscale_l2_images(a: &SketchImage, b: &SketchImage) -> Result<f64, NetsError> {
    let (pa, pb) = (build_pyramid(a)?, build_pyramid(b)?);
    if (a.width, a.height) != (b.width, b.height) {
        return Err(NetsError::ShapeMismatch { expected: vec![b.height, b.width], found: vec![a.height, a.width] });
    }
    Ok(pa
        .levels
        .iter()
        .zip(&pb.levels)
        .map(|(x, y)| {
            let s: f64 = x.pixels.iter().zip(&y.pixels).map(|(&p, &q)| (f64::from(p) - f64::from(q)).powi(2)).sum();
            s / x.pixels.len() as f64
        })
        .sum())
}

/// Token targets laid out in prediction order: under assignment `a`,
/// prediction slot `a.perm[i]` is scored against target slot `i`.
pub fn assigned_targets(target: &TokenGrid, a: &Assignment) -> Result<TokenGrid, NetsError> {
    if a.perm.len() != MAX_PRIMITIVES {
        return Err(NetsError::InvalidPermutation);
    }
    let checked = Assignment::from_perm(a.perm.clone()).map_err(|_| NetsError::InvalidPermutation)?;
    Ok(target.permute_slots(&checked.inverse()))
}

/// Mean over all `B × 128` token positions of `-ln p(target)`, each
/// sample's prediction slots matched to its target by its assignment.
pub fn token_cross_entropy(
    tape: &mut Tape,
    probs: Var,
    targets: &[TokenGrid],
    assignments: &[Assignment],
) -> Result<Var, NetsError> {
    if targets.len() != assignments.len() {
        return Err(NetsError::ShapeMismatch { expected: vec![targets.len()], found: vec![assignments.len()] });
    }
    let mut idx = Vec::with_capacity(targets.len() * MAX_PRIMITIVES * 8);
    for (t, a) in targets.iter().zip(assignments) {
        idx.extend(assigned_targets(t, a)?.flat().into_iter().map(usize::from));
    }
    Ok(tape.cross_entropy(probs, &idx)?)
}
