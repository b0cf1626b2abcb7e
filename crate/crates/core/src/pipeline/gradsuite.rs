use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::autodiff::{grad_check, op_gradient_suite, AutodiffError, GRAD_CHECK_EPS, GRAD_CHECK_TOL};
use crate::nets::{batch_images, batch_probs, multiscale_l2, NetsError, SrnConfig, SrnModel, TokenProbabilities};
use crate::raster::rasterize;
use crate::synthgen::{sample_sketch, GeneratorConfig, RandomSource};

/// Coordinates probed in the composite render-loss check.
pub const COMPOSITE_COORDS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteEntry {
    pub name: String,
    pub max_rel_err: f32,
    pub checked: usize,
    pub passed: bool,
}

fn entry(name: &str, report: &crate::autodiff::GradCheckReport) -> GradSuiteEntry {
    GradSuiteEntry {
        name: name.to_string(),
        max_rel_err: report.max_rel_err,
        checked: report.checked,
        passed: report.passed(GRAD_CHECK_TOL),
    }
}

fn as_autodiff(e: NetsError) -> AutodiffError {
    match e {
        NetsError::Autodiff(a) => a,
        other => AutodiffError::UnknownParameter(other.to_string()),
    }
}

/// Gradient of `multiscale_l2(srn(ŷ), X)` with respect to the token
/// distribution `ŷ`, renderer frozen, probed on `coords` coordinates.
pub fn composite_render_check(
    srn: &SrnModel,
    seed: u64,
    coords: usize,
) -> Result<crate::autodiff::GradCheckReport, PipelineError> {
    let size = srn.config.image_size;
    let mut rng = RandomSource::stream(seed, 31);
    let (_, sketch) = sample_sketch(&GeneratorConfig::default(), &mut rng)?;
    let target = batch_images(&[rasterize(&sketch, size, size)], size)?;
    let probs = {
        use rand::Rng;
        let mut data: Vec<f32> = (0..TokenProbabilities::ROWS * crate::sketch::tokens::VOCAB)
            .map(|_| rng.random_range(0.01f32..1.0))
            .collect();
        for row in data.chunks_exact_mut(crate::sketch::tokens::VOCAB) {
            let s: f32 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= s);
        }
        TokenProbabilities::new(data)?
    };
    let report = grad_check(
        |t, v| {
            let img = srn.forward(t, v[0], false).map_err(as_autodiff)?;
            let tg = t.constant(target.clone());
            multiscale_l2(t, img, tg).map_err(as_autodiff)
        },
        &[batch_probs(&[probs])],
        GRAD_CHECK_EPS,
        Some(coords),
    )?;
    Ok(report)
}

/// Every op check plus the composite path on a freshly initialized renderer.
pub fn gradient_suite(seed: u64, srn_config: &SrnConfig) -> Result<Vec<GradSuiteEntry>, PipelineError> {
    let mut out: Vec<GradSuiteEntry> = op_gradient_suite(seed)?.iter().map(|c| entry(c.name, &c.report)).collect();
    let srn = SrnModel::new(srn_config.clone(), seed)?;
    out.push(entry("multiscale_l2(srn(y))", &composite_render_check(&srn, seed, COMPOSITE_COORDS)?));
    Ok(out)
}
