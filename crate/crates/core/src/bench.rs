//! Throughput sweeps over FLOPs-reduction ratios.

use std::time::Instant;

use crate::error::Result;
use crate::flops::{solve_k, ReductionPlan};
use crate::image::Image;
use crate::importance::Indicator;
use crate::model::{ForwardOptions, VisionMamba};
use crate::reduction::{MeanRule, Strategy};

pub const CSV_HEADER: &str = "ratio,k,achieved,throughput_mean,throughput_std,total_flops";

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub ratios: Vec<f64>,
    pub batch: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub parallel: bool,
    pub strategy: Strategy,
    pub indicator: Indicator,
    pub layers: Vec<usize>,
    pub image_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub ratio: f64,
    pub k: f64,
    pub achieved: f64,
    /// Images per second.
    pub throughput_mean: f64,
    pub throughput_std: f64,
    /// Per image.
    pub total_flops: u64,
}

impl BenchRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.3},{:.3},{}",
            self.ratio,
            self.k,
            self.achieved,
            self.throughput_mean,
            self.throughput_std,
            self.total_flops
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Throughput {
    pub mean: f64,
    pub std: f64,
}

/// The plan for a reduction ratio; ratio 0 never reduces.
pub fn plan_for(
    model: &VisionMamba,
    ratio: f64,
    layers: &[usize],
    strategy: Strategy,
) -> Result<ReductionPlan> {
    if ratio == 0.0 {
        return Ok(ReductionPlan::identity(strategy));
    }
    solve_k(ratio, layers, &model.config.flops_model(), strategy)
}

pub fn bench_images(model: &VisionMamba, batch: usize, seed: u64) -> Vec<Image> {
    let c = &model.config;
    (0..batch as u64)
        .map(|i| Image::synthetic(c.image_size, c.channels, seed.wrapping_add(i)))
        .collect()
}

/// Images per second over `repeats` timed passes of the whole batch, after
/// `warmup` untimed ones. Diagnostics are off.
pub fn measure(
    model: &VisionMamba,
    plan: &ReductionPlan,
    images: &[Image],
    indicator: Indicator,
    repeats: usize,
    warmup: usize,
    parallel: bool,
) -> Result<Throughput> {
    let opts = ForwardOptions {
        indicator,
        mean_rule: MeanRule::Weighted,
        diagnostics: false,
    };
    let pass = || -> Result<()> {
        if parallel {
            model.forward_batch(images, Some(plan), opts)?;
        } else {
            for img in images {
                model.forward(img, Some(plan), opts)?;
            }
        }
        Ok(())
    };
    for _ in 0..warmup {
        pass()?;
    }
    let mut samples = Vec::with_capacity(repeats.max(1));
    for _ in 0..repeats.max(1) {
        let start = Instant::now();
        pass()?;
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        samples.push(images.len() as f64 / secs);
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let std = if samples.len() > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64)
            .sqrt()
    } else {
        0.0
    };
    Ok(Throughput { mean, std })
}

pub fn sweep(model: &VisionMamba, cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let images = bench_images(model, cfg.batch.max(1), cfg.image_seed);
    let flops = model.config.flops_model();
    // Solve every plan before any timing starts.
    let plans = cfg
        .ratios
        .iter()
        .map(|&r| plan_for(model, r, &cfg.layers, cfg.strategy))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(plans.len());
    for (&ratio, plan) in cfg.ratios.iter().zip(&plans) {
        let t = measure(
            model,
            plan,
            &images,
            cfg.indicator,
            cfg.repeats,
            cfg.warmup,
            cfg.parallel,
        )?;
        let sim = flops.simulate(plan.k, &plan.reduce_at_layers)?;
        rows.push(BenchRow {
            ratio,
            k: plan.k,
            achieved: plan.achieved_reduction,
            throughput_mean: t.mean,
            throughput_std: t.std,
            total_flops: sim.total_flops,
        });
    }
    Ok(rows)
}
