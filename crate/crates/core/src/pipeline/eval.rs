use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{infer_batch, PipelineError, Sample, TypeQuota};
use crate::io::write_atomic;
use crate::matcheval::{match_grids, MetricReport, MetricSummary};
use crate::nets::SpnModel;
use crate::raster::rasterize;
use crate::sketch::{detokenize, TokenGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub index: usize,
    #[serde(flatten)]
    pub metrics: MetricReport,
    /// Predicted slots dropped as invalid before rendering.
    pub dropped_slots: usize,
    /// Prediction slot matched to each ground-truth slot.
    pub assignment: Vec<usize>,
}

/// Per-sample metrics plus corpus means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub summary: MetricSummary,
    pub samples: Vec<SampleReport>,
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_vec_pretty(self).expect("report serializes");
        write_atomic(path, &json)?;
        Ok(())
    }
}

/// Scores predicted grids against ground truth: Hungarian matching of the
/// grids for token metrics, explicit re-rendering of the surviving
/// primitives for image metrics.
pub fn score_predictions(preds: &[TokenGrid], samples: &[Sample]) -> Result<EvalReport, PipelineError> {
    if preds.len() != samples.len() {
        return Err(PipelineError::Data(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let mut out = Vec::with_capacity(samples.len());
    for (index, (pred, s)) in preds.iter().zip(samples).enumerate() {
        let d = detokenize(pred);
        let img = rasterize(&d.sketch, s.target.width, s.target.height);
        let a = match_grids(pred, &s.grid);
        let metrics = MetricReport::compute(pred, &s.grid, &a, &img, &s.target)?;
        out.push(SampleReport { index, metrics, dropped_slots: d.dropped(), assignment: a.perm });
    }
    let metrics: Vec<MetricReport> = out.iter().map(|r| r.metrics.clone()).collect();
    Ok(EvalReport { summary: MetricSummary::from_reports(&metrics), samples: out })
}

/// Zero-shot inference on every sample input, then [`score_predictions`].
pub fn evaluate(spn: &SpnModel, samples: &[Sample], quota: Option<&TypeQuota>) -> Result<EvalReport, PipelineError> {
    let inputs: Vec<_> = samples.iter().map(|s| s.input.clone()).collect();
    let preds: Vec<TokenGrid> = infer_batch(spn, &inputs, quota)?.into_iter().map(|i| i.grid).collect();
    score_predictions(&preds, samples)
}
