//! Central finite-difference check of analytic gradients.

use super::{AutodiffError, Tape, Tensor, Var};

/// Default finite-difference step.
pub const GRAD_CHECK_EPS: f32 = 1e-3;
/// Default maximum relative error.
pub const GRAD_CHECK_TOL: f32 = 1e-2;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest per-coordinate relative error.
    pub max_rel_err: f32,
    /// `(input index, flat coordinate)` of the largest error.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub analytic: Vec<f32>,
    pub numeric: Vec<f32>,
}

impl GradCheckReport {
    pub fn passed(&self, tol: f32) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares analytic gradients of the scalar `f` w.r.t. every input against
/// central differences with step `eps`.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`
/// where `floor` is 1% of the largest gradient magnitude seen (at least
/// `1e-4`), so coordinates with negligible gradient are judged on an
/// absolute scale. When `max_coords` is set, only that many coordinates per
/// input are probed: the largest analytic entries plus an even spread.
pub fn grad_check<F>(f: F, inputs: &[Tensor], eps: f32, max_coords: Option<usize>) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, AutodiffError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let eval = |inputs: &[Tensor]| -> Result<f64, AutodiffError> {
        let mut t = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let out = f(&mut t, &vars)?;
        Ok(t.scalar_f64(out))
    };

    let mut coords = Vec::new();
    let mut analytic = Vec::new();
    for (i, (v, x)) in vars.iter().zip(inputs).enumerate() {
        let g = tape.grad(*v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; x.numel()]);
        let picks: Vec<usize> = match max_coords {
            Some(m) if m < x.numel() => {
                let mut order: Vec<usize> = (0..x.numel()).collect();
                order.sort_by(|&a, &b| g[b].abs().total_cmp(&g[a].abs()));
                let mut p: Vec<usize> = order[..m / 2].to_vec();
                let rest = m - p.len();
                p.extend((0..rest).map(|j| j * x.numel() / rest));
                p.sort_unstable();
                p.dedup();
                p
            }
            _ => (0..x.numel()).collect(),
        };
        for j in picks {
            coords.push((i, j));
            analytic.push(g[j]);
        }
    }

    let mut work = inputs.to_vec();
    let mut numeric = Vec::with_capacity(coords.len());
    for &(i, j) in &coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + eps;
        let up = eval(&work)?;
        work[i].data_mut()[j] = orig - eps;
        let down = eval(&work)?;
        work[i].data_mut()[j] = orig;
        numeric.push(((up - down) / (2.0 * f64::from(eps))) as f32);
    }

    let scale = analytic.iter().chain(&numeric).fold(0.0f32, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale).max(1e-4);
    let mut max_rel_err = 0.0f32;
    let mut worst = None;
    for (k, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let err = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if err > max_rel_err {
            max_rel_err = err;
            worst = Some(coords[k]);
        }
    }
    Ok(GradCheckReport { max_rel_err, worst, checked: coords.len(), analytic, numeric })
}
