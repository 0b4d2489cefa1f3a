//! JSON run reports and retention-mask extraction from diagnostics.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flops::ReductionPlan;
use crate::image::{render_mask, Image};
use crate::importance::Indicator;
use crate::model::{Diagnostics, ForwardOptions, LayerDiagnostics, ModelConfig, VisionMamba};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub plan: ReductionPlan,
    pub indicator: Indicator,
    /// Tokens entering each block; `None` when diagnostics were disabled.
    pub tokens_in: Option<Vec<usize>>,
    pub tokens_out: Option<Vec<usize>>,
    pub flops_baseline: u64,
    pub flops_reduced: Option<u64>,
    /// `1 - flops_reduced / flops_baseline`, from the measured diagnostics.
    pub achieved_reduction: Option<f64>,
    /// Single-image forward passes per second.
    pub throughput: f64,
    pub logits: Vec<f32>,
    /// `(class, logit)` pairs, best first.
    pub top_k: Vec<(usize, f32)>,
    pub layers: Option<Vec<LayerDiagnostics>>,
}

pub fn top_k(logits: &[f32], k: usize) -> Vec<(usize, f32)> {
    crate::tensor::argsort_desc(logits)
        .into_iter()
        .take(k)
        .map(|i| (i, logits[i]))
        .collect()
}

pub fn run_report(
    model: &VisionMamba,
    image: &Image,
    plan: &ReductionPlan,
    indicator: Indicator,
    diagnostics: bool,
) -> Result<RunReport> {
    let opts = ForwardOptions {
        indicator,
        diagnostics,
        ..Default::default()
    };
    let start = Instant::now();
    let out = model.forward(image, Some(plan), opts)?;
    let throughput = 1.0 / start.elapsed().as_secs_f64().max(1e-9);
    let baseline = model.config.flops_model().baseline_flops();
    let diag = out.diagnostics;
    let reduced = diag.as_ref().map(Diagnostics::total_flops);
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        config: model.config.clone(),
        plan: plan.clone(),
        indicator,
        tokens_in: diag.as_ref().map(Diagnostics::tokens_in),
        tokens_out: diag.as_ref().map(Diagnostics::tokens_out),
        flops_baseline: baseline,
        flops_reduced: reduced,
        achieved_reduction: reduced.map(|r| 1.0 - r as f64 / baseline as f64),
        throughput,
        top_k: top_k(&out.logits, 5),
        logits: out.logits,
        layers: diag.map(|d| d.layers),
    })
}

/// Renders the partition made at `layer`. Errors when no reduction ran there.
pub fn retention_mask(
    config: &ModelConfig,
    image: &Image,
    diag: &Diagnostics,
    layer: usize,
) -> Result<Image> {
    let at = diag
        .layers
        .iter()
        .position(|l| l.layer == layer)
        .ok_or_else(|| Error::InvalidPlan(format!("layer {layer} out of range")))?;
    let record = diag.layers[at]
        .reduction
        .as_ref()
        .ok_or_else(|| Error::InvalidPlan(format!("layer {layer} is not a reduction layer")))?;
    let present: Vec<usize> = match at {
        0 => (0..diag.layers[0].tokens_in).collect(),
        _ => diag.layers[at - 1].surviving.clone(),
    };
    Ok(render_mask(image, config, record, &present))
}
