//! Operations behind the browser demo. Each one is a plain Rust function so it
//! can be tested natively; the `wasm` module wraps them for JavaScript.

use mtr_core::flops::solve_k;
use mtr_core::model::Diagnostics;
use mtr_core::report::retention_mask;
use mtr_core::{
    ClsPosition, ForwardOptions, Image, Indicator, ModelConfig, ReductionPlan, Strategy,
    VisionMamba,
};
use serde::Serialize;

/// 64px images in 8px patches (64 tokens plus CLS), eight blocks. Small
/// enough to rerun on every slider move.
pub fn demo_config() -> ModelConfig {
    ModelConfig {
        image_size: 64,
        patch_size: 8,
        channels: 3,
        feat_dim: 32,
        expand: 2,
        state_dim: 8,
        delta_rank: 2,
        depth: 8,
        heads: 2,
        cls_position: ClsPosition::Middle,
        class_count: 10,
    }
}

pub fn parse_layers(csv: &str) -> Result<Vec<usize>, String> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad layer {s:?}")))
        .collect()
}

#[derive(Debug, Serialize)]
pub struct MaskRun {
    pub plan: ReductionPlan,
    pub tokens_in: Vec<usize>,
    pub tokens_out: Vec<usize>,
    /// Recomputed from the live diagnostics.
    pub achieved: f64,
    #[serde(skip)]
    pub input_rgba: Vec<u8>,
    #[serde(skip)]
    pub mask_rgba: Vec<u8>,
}

/// Runs the demo model on a synthetic image and renders the partition at
/// `layer`, which must be one of `layers`.
pub fn mask_run(
    model_seed: u64,
    image_seed: u64,
    target: f64,
    layers: &str,
    strategy: &str,
    indicator: &str,
    layer: usize,
) -> Result<MaskRun, String> {
    let cfg = demo_config();
    let strategy: Strategy = strategy.parse()?;
    let indicator: Indicator = indicator.parse()?;
    let layers = parse_layers(layers)?;
    if !layers.contains(&layer) {
        return Err(format!(
            "layer {layer} is not one of the reduction layers {layers:?}"
        ));
    }
    let model = VisionMamba::seeded(cfg.clone(), model_seed).map_err(|e| e.to_string())?;
    let plan = solve_k(target, &layers, &cfg.flops_model(), strategy).map_err(|e| e.to_string())?;
    let image = Image::synthetic(cfg.image_size, cfg.channels, image_seed);
    let opts = ForwardOptions {
        indicator,
        ..Default::default()
    };
    let diag: Diagnostics = model
        .forward(&image, Some(&plan), opts)
        .map_err(|e| e.to_string())?
        .diagnostics
        .ok_or("diagnostics missing")?;
    let mask = retention_mask(&cfg, &image, &diag, layer).map_err(|e| e.to_string())?;
    let baseline = cfg.flops_model().baseline_flops();
    Ok(MaskRun {
        tokens_in: diag.tokens_in(),
        tokens_out: diag.tokens_out(),
        achieved: 1.0 - diag.total_flops() as f64 / baseline as f64,
        plan,
        input_rgba: image.to_rgba(),
        mask_rgba: mask.to_rgba(),
    })
}

#[derive(Debug, Serialize, PartialEq)]
pub struct CurvePoint {
    pub k: f64,
    pub achieved: f64,
    pub final_tokens: usize,
}

/// Achieved FLOPs reduction of the toy config as `k` sweeps `[0, 0.5)`.
pub fn flops_curve(layers: &str, steps: usize) -> Result<Vec<CurvePoint>, String> {
    let fm = ModelConfig::toy().flops_model();
    let layers = parse_layers(layers)?;
    let steps = steps.max(2);
    (0..steps)
        .map(|i| {
            let k = 0.5 * i as f64 / steps as f64;
            let t = fm.simulate(k, &layers).map_err(|e| e.to_string())?;
            Ok(CurvePoint {
                k,
                achieved: fm
                    .achieved_reduction(k, &layers)
                    .map_err(|e| e.to_string())?,
                final_tokens: *t.tokens_out.last().unwrap_or(&fm.initial_tokens()),
            })
        })
        .collect()
}

/// Plan for the toy config as JSON.
pub fn solve_plan(target: f64, layers: &str, strategy: &str) -> Result<String, String> {
    let strategy: Strategy = strategy.parse()?;
    let layers = parse_layers(layers)?;
    let plan = solve_k(target, &layers, &ModelConfig::toy().flops_model(), strategy)
        .map_err(|e| e.to_string())?;
    Ok(plan.to_json())
}

#[cfg(target_arch = "wasm32")]
mod wasm {
    //! Seeds are `u32` so JavaScript can pass plain numbers.

    use wasm_bindgen::prelude::*;

    fn js(err: String) -> JsError {
        JsError::new(&err)
    }

    #[wasm_bindgen]
    pub struct MaskView {
        summary: String,
        pixels: Vec<u8>,
    }

    #[wasm_bindgen]
    impl MaskView {
        /// Plan, token counts and achieved reduction as JSON.
        #[wasm_bindgen(getter)]
        pub fn summary(&self) -> String {
            self.summary.clone()
        }

        /// RGBA bytes of the rendered mask.
        #[wasm_bindgen(getter)]
        pub fn pixels(&self) -> Vec<u8> {
            self.pixels.clone()
        }
    }

    #[wasm_bindgen]
    pub fn render_mask(
        model_seed: u32,
        image_seed: u32,
        target: f64,
        layers: &str,
        strategy: &str,
        indicator: &str,
        layer: usize,
    ) -> Result<MaskView, JsError> {
        let run = super::mask_run(
            model_seed.into(),
            image_seed.into(),
            target,
            layers,
            strategy,
            indicator,
            layer,
        )
        .map_err(js)?;
        Ok(MaskView {
            summary: serde_json::to_string(&run).expect("summary serialises"),
            pixels: run.mask_rgba,
        })
    }

    #[wasm_bindgen]
    pub fn input_pixels(image_seed: u32) -> Vec<u8> {
        let cfg = super::demo_config();
        mtr_core::Image::synthetic(cfg.image_size, cfg.channels, image_seed.into()).to_rgba()
    }

    #[wasm_bindgen]
    pub fn image_size() -> usize {
        super::demo_config().image_size
    }

    #[wasm_bindgen]
    pub fn flops_curve(layers: &str, steps: usize) -> Result<String, JsError> {
        let curve = super::flops_curve(layers, steps).map_err(js)?;
        Ok(serde_json::to_string(&curve).expect("curve serialises"))
    }

    #[wasm_bindgen]
    pub fn solve_plan(target: f64, layers: &str, strategy: &str) -> Result<String, JsError> {
        super::solve_plan(target, layers, strategy).map_err(js)
    }
}
