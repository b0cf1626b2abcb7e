//! Named finite-difference checks covering every differentiable op.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{grad_check, AutodiffError, GradCheckReport, Tape, Tensor, Var, GRAD_CHECK_EPS};

type R = Result<Var, AutodiffError>;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Magnitudes in `[0.1, 1)` with random sign, keeping ReLU's kink out of
/// the difference stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = rng.random_range(0.1f32..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

/// Contracts any output with fixed random weights into a scalar.
fn contract(t: &mut Tape, y: Var, seed: u64) -> R {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(&mut rng, t.shape(y), -1.0, 1.0);
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    Ok(t.sum(p))
}

fn simplex_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut t = uniform(rng, &[rows, cols], 0.05, 1.0);
    for row in t.data_mut().chunks_exact_mut(cols) {
        let s: f32 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= s);
    }
    t
}

/// Runs every op check on seeded inputs no larger than `(4, 8, 8)`.
pub fn op_gradient_suite(seed: u64) -> Result<Vec<GradCase>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &'static str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Tape, &[Var]) -> R| -> Result<(), AutodiffError> {
        let report = grad_check(f, &inputs, GRAD_CHECK_EPS, None)?;
        out.push(GradCase { name, report });
        Ok(())
    };
    let r = &mut rng;
    let a488 = uniform(r, &[4, 8, 8], -1.0, 1.0);

    run("matmul", vec![uniform(r, &[4, 3, 5], -1.0, 1.0), uniform(r, &[5, 6], -1.0, 1.0)], &|t, v| {
        let y = t.matmul(v[0], v[1])?;
        contract(t, y, 1)
    })?;
    run("matmul_batched", vec![uniform(r, &[4, 3, 5], -1.0, 1.0), uniform(r, &[4, 5, 2], -1.0, 1.0)], &|t, v| {
        let y = t.matmul(v[0], v[1])?;
        contract(t, y, 2)
    })?;
    run("matmul_t", vec![uniform(r, &[4, 3, 5], -1.0, 1.0), uniform(r, &[4, 7, 5], -1.0, 1.0)], &|t, v| {
        let y = t.matmul_t(v[0], v[1])?;
        contract(t, y, 3)
    })?;
    run("embed", vec![simplex_rows(r, 8, 8), uniform(r, &[8, 6], -1.0, 1.0)], &|t, v| {
        let y = t.embed(v[0], v[1])?;
        contract(t, y, 4)
    })?;
    run("add", vec![a488.clone(), uniform(r, &[8, 8], -1.0, 1.0)], &|t, v| {
        let y = t.add(v[0], v[1])?;
        contract(t, y, 5)
    })?;
    run("sub", vec![a488.clone(), uniform(r, &[8], -1.0, 1.0)], &|t, v| {
        let y = t.sub(v[0], v[1])?;
        contract(t, y, 6)
    })?;
    run("mul", vec![a488.clone(), uniform(r, &[8, 8], -1.0, 1.0)], &|t, v| {
        let y = t.mul(v[0], v[1])?;
        contract(t, y, 7)
    })?;
    run("scale", vec![a488.clone()], &|t, v| {
        let y = t.scale(v[0], -2.5);
        contract(t, y, 8)
    })?;
    run("add_scalar", vec![a488.clone()], &|t, v| {
        let y = t.add_scalar(v[0], 0.75);
        let y = t.mul(y, y)?;
        contract(t, y, 9)
    })?;
    run("reshape", vec![a488.clone()], &|t, v| {
        let y = t.reshape(v[0], &[8, 32])?;
        contract(t, y, 10)
    })?;
    run("permute", vec![uniform(r, &[2, 3, 4, 5], -1.0, 1.0)], &|t, v| {
        let y = t.permute(v[0], &[3, 1, 0, 2])?;
        contract(t, y, 11)
    })?;
    run("transpose", vec![a488.clone()], &|t, v| {
        let y = t.transpose(v[0])?;
        contract(t, y, 12)
    })?;
    run("concat", vec![a488.clone(), uniform(r, &[4, 2, 8], -1.0, 1.0)], &|t, v| {
        let y = t.concat(&[v[0], v[1]], 1)?;
        contract(t, y, 13)
    })?;
    run("slice", vec![a488.clone()], &|t, v| {
        let y = t.slice(v[0], 2, 1, 5)?;
        contract(t, y, 14)
    })?;
    run("softmax", vec![a488.clone()], &|t, v| {
        let y = t.softmax(v[0]);
        contract(t, y, 15)
    })?;
    run("sigmoid", vec![a488.clone()], &|t, v| {
        let y = t.sigmoid(v[0]);
        contract(t, y, 16)
    })?;
    run("gelu", vec![a488.clone()], &|t, v| {
        let y = t.gelu(v[0]);
        contract(t, y, 17)
    })?;
    run("relu", vec![away_from_zero(r, &[4, 8, 8])], &|t, v| {
        let y = t.relu(v[0]);
        contract(t, y, 18)
    })?;
    run("layer_norm", vec![a488.clone(), uniform(r, &[8], -1.0, 1.0), uniform(r, &[8], -1.0, 1.0)], &|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2])?;
        contract(t, y, 19)
    })?;
    run(
        "conv2d",
        vec![uniform(r, &[2, 3, 8, 8], -1.0, 1.0), uniform(r, &[4, 3, 3, 3], -1.0, 1.0), uniform(r, &[4], -1.0, 1.0)],
        &|t, v| {
            let y = t.conv2d(v[0], v[1], v[2])?;
            contract(t, y, 20)
        },
    )?;
    run("avg_pool2", vec![a488.clone()], &|t, v| {
        let y = t.avg_pool2(v[0])?;
        contract(t, y, 21)
    })?;
    let targets: Vec<usize> = (0..8).map(|_| r.random_range(0..8)).collect();
    run("cross_entropy", vec![simplex_rows(r, 8, 8)], &|t, v| t.cross_entropy(v[0], &targets))?;
    run("mse", vec![a488.clone(), uniform(r, &[4, 8, 8], -1.0, 1.0)], &|t, v| t.mse(v[0], v[1]))?;
    run("bce", vec![uniform(r, &[4, 8, 8], 0.05, 0.95), uniform(r, &[4, 8, 8], 0.0, 1.0)], &|t, v| t.bce(v[0], v[1]))?;
    run("sum", vec![a488.clone()], &|t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.sum(y))
    })?;
    run("mean", vec![a488], &|t, v| {
        let y = t.mul(v[0], v[0])?;
        Ok(t.mean(y))
    })?;
    Ok(out)
}
