//! A small isotropic Vision-Mamba classifier with reduction hooks between
//! blocks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::flops::{block_flops, FlopsModel, ReductionPlan};
use crate::image::Image;
use crate::importance::{score, Indicator, ScoringInputs};
use crate::reduction::{check_ratio, reduce_layer_with, GroupRecord, MeanRule, TokenSequence};
use crate::ssm::{mamba_block, uniform, BlockDims, ScanDirection, SsmBlockParams, SsmHeadParams};
use crate::tensor::{layer_norm, matmul, DenseArray};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClsPosition {
    #[default]
    Middle,
    Front,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub feat_dim: usize,
    pub expand: usize,
    pub state_dim: usize,
    pub delta_rank: usize,
    pub depth: usize,
    pub heads: usize,
    pub cls_position: ClsPosition,
    pub class_count: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ModelConfig {
    /// 224px images, 16px patches (196 tokens), width 192, 24 blocks.
    pub fn toy() -> Self {
        Self {
            image_size: 224,
            patch_size: 16,
            channels: 3,
            feat_dim: 192,
            expand: 2,
            state_dim: 16,
            delta_rank: 192usize.div_ceil(16),
            depth: 24,
            heads: 2,
            cls_position: ClsPosition::Middle,
            class_count: 1000,
        }
    }

    /// 16px images, 4px patches (16 tokens), width 8, 4 blocks.
    pub fn tiny() -> Self {
        Self {
            image_size: 16,
            patch_size: 4,
            channels: 3,
            feat_dim: 8,
            expand: 2,
            state_dim: 4,
            delta_rank: 1,
            depth: 4,
            heads: 2,
            cls_position: ClsPosition::Middle,
            class_count: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.patch_size == 0
            || self.image_size == 0
            || !self.image_size.is_multiple_of(self.patch_size)
        {
            return bad("image_size must be a positive multiple of patch_size");
        }
        if self.depth == 0 {
            return bad("depth must be at least 1");
        }
        if self.expand == 0 || self.feat_dim == 0 || self.state_dim == 0 || self.delta_rank == 0 {
            return bad("feat_dim, expand, state_dim and delta_rank must be positive");
        }
        if self.heads == 0 || self.channels == 0 || self.class_count == 0 {
            return bad("heads, channels and class_count must be positive");
        }
        Ok(())
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patch_count(&self) -> usize {
        self.patches_per_side().pow(2)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn block_dims(&self) -> BlockDims {
        BlockDims {
            d: self.feat_dim,
            e: self.expand * self.feat_dim,
            n: self.state_dim,
            r: self.delta_rank,
            heads: self.heads,
        }
    }

    /// Sequence position (and `orig_index`) of the CLS token.
    pub fn cls_orig(&self) -> Option<usize> {
        match self.cls_position {
            ClsPosition::Middle => Some(self.patch_count() / 2),
            ClsPosition::Front => Some(0),
            ClsPosition::None => None,
        }
    }

    /// Raster patch index of a token, `None` for the CLS token.
    pub fn patch_of(&self, orig: usize) -> Option<usize> {
        match self.cls_orig() {
            Some(c) if orig == c => None,
            Some(c) if orig > c => Some(orig - 1),
            _ => Some(orig),
        }
    }

    pub fn flops_model(&self) -> FlopsModel {
        FlopsModel {
            dims: self.block_dims(),
            depth: self.depth,
            patch_tokens: self.patch_count(),
            has_cls: self.cls_orig().is_some(),
            patch_dim: self.patch_dim(),
            class_count: self.class_count,
            mean_pool: self.cls_orig().is_none(),
            count_embed_and_head: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisionMamba {
    pub config: ModelConfig,
    /// P×D with P = patch_size² · channels.
    pub patch_w: DenseArray,
    pub patch_b: Vec<f32>,
    pub cls_token: Vec<f32>,
    pub blocks: Vec<SsmBlockParams>,
    pub norm_scale: Vec<f32>,
    pub norm_bias: Vec<f32>,
    /// D×classes.
    pub head_w: DenseArray,
    pub head_b: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    pub indicator: Indicator,
    pub mean_rule: MeanRule,
    pub diagnostics: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            indicator: Indicator::Delta,
            mean_rule: MeanRule::Weighted,
            diagnostics: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub tokens_in: usize,
    pub tokens_out: usize,
    pub flops: u64,
    /// `orig_index` of every token leaving the layer.
    pub surviving: Vec<usize>,
    pub reduction: Option<GroupRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub layers: Vec<LayerDiagnostics>,
    pub embed_flops: u64,
    pub head_flops: u64,
}

impl Diagnostics {
    pub fn total_flops(&self) -> u64 {
        self.embed_flops + self.head_flops + self.layers.iter().map(|l| l.flops).sum::<u64>()
    }

    pub fn tokens_in(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.tokens_in).collect()
    }

    pub fn tokens_out(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.tokens_out).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub logits: Vec<f32>,
    pub diagnostics: Option<Diagnostics>,
}

impl VisionMamba {
    /// Seeded weights: `U(±1/sqrt(fan_in))` projections, `A = -(1..=N)`,
    /// unit skip, unit/zero norms, CLS token `U(±0.02)`.
    pub fn seeded(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.feat_dim;
        let p = config.patch_dim();
        let patch_w = uniform(&mut rng, vec![p, d], p);
        let patch_b = uniform(&mut rng, vec![d], p).into_data();
        let cls_token = (0..d).map(|_| rng.gen_range(-0.02..0.02)).collect();
        let blocks = (0..config.depth)
            .map(|_| SsmBlockParams::seeded(config.block_dims(), &mut rng))
            .collect();
        let head_w = uniform(&mut rng, vec![d, config.class_count], d);
        let head_b = vec![0.0; config.class_count];
        Ok(Self {
            patch_w,
            patch_b,
            cls_token,
            blocks,
            norm_scale: vec![1.0; d],
            norm_bias: vec![0.0; d],
            head_w,
            head_b,
            config,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        c.validate()?;
        let d = c.feat_dim;
        let want = |name: &'static str, got: &[usize], want: &[usize]| {
            if got == want {
                Ok(())
            } else {
                Err(Error::dim(name, got, want))
            }
        };
        want("patch_w", self.patch_w.shape(), &[c.patch_dim(), d])?;
        want("patch_b", &[self.patch_b.len()], &[d])?;
        want("cls_token", &[self.cls_token.len()], &[d])?;
        want(
            "norm",
            &[self.norm_scale.len(), self.norm_bias.len()],
            &[d, d],
        )?;
        want("head_w", self.head_w.shape(), &[d, c.class_count])?;
        want("head_b", &[self.head_b.len()], &[c.class_count])?;
        want("blocks", &[self.blocks.len()], &[c.depth])?;
        for b in &self.blocks {
            if b.dims()? != c.block_dims() {
                return Err(Error::Config("block extents disagree with config".into()));
            }
        }
        Ok(())
    }

    /// Non-overlapping patches in raster order, projected to `D`, with the
    /// CLS token inserted at its configured position.
    pub fn patch_embed(&self, image: &Image) -> Result<TokenSequence> {
        let c = &self.config;
        if image.width != c.image_size
            || image.height != c.image_size
            || image.channels != c.channels
        {
            return Err(Error::dim(
                "patch_embed",
                &[image.height, image.width, image.channels],
                &[c.image_size, c.image_size, c.channels],
            ));
        }
        let side = c.patches_per_side();
        let ps = c.patch_size;
        let mut flat = Vec::with_capacity(c.patch_count() * c.patch_dim());
        for py in 0..side {
            for px in 0..side {
                for dy in 0..ps {
                    let start = ((py * ps + dy) * image.width + px * ps) * image.channels;
                    flat.extend_from_slice(&image.data[start..start + ps * image.channels]);
                }
            }
        }
        let patches = DenseArray::new(vec![c.patch_count(), c.patch_dim()], flat)?;
        let mut tokens = matmul(&patches, &self.patch_w)?;
        for t in 0..tokens.rows() {
            for (v, b) in tokens.row_mut(t).iter_mut().zip(&self.patch_b) {
                *v += b;
            }
        }
        let mut rows: Vec<Vec<f32>> = (0..tokens.rows()).map(|t| tokens.row(t).to_vec()).collect();
        let cls = c.cls_orig();
        if let Some(pos) = cls {
            rows.insert(pos, self.cls_token.clone());
        }
        TokenSequence::new(DenseArray::from_rows(&rows)?, cls)
    }

    pub fn check_plan(&self, plan: &ReductionPlan) -> Result<()> {
        check_ratio(plan.k)?;
        self.config
            .flops_model()
            .check_layers(&plan.reduce_at_layers)
    }

    pub fn forward(
        &self,
        image: &Image,
        plan: Option<&ReductionPlan>,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        let seq = self.patch_embed(image)?;
        self.forward_tokens(seq, plan, opts)
    }

    pub fn forward_tokens(
        &self,
        mut seq: TokenSequence,
        plan: Option<&ReductionPlan>,
        opts: ForwardOptions,
    ) -> Result<ForwardOutput> {
        if let Some(p) = plan {
            self.check_plan(p)?;
        }
        let flops = self.config.flops_model();
        let dims = self.config.block_dims();
        let mut layers = Vec::new();
        for (l, block) in self.blocks.iter().enumerate() {
            let tokens_in = seq.len();
            let out = mamba_block(&seq.features, block)?;
            if !out.y.is_finite() {
                return Err(Error::NonFinite { layer: l });
            }
            let reduce = plan.filter(|p| p.reduce_at_layers.contains(&l));
            let mut record = None;
            let block_input = std::mem::replace(&mut seq.features, out.y);
            if let Some(p) = reduce {
                let scores = score(
                    opts.indicator,
                    &ScoringInputs {
                        block_input: &block_input,
                        block_output: &seq.features,
                        traces: &out.traces,
                        block,
                        cls_row: seq.cls_row(),
                    },
                )?;
                let red = reduce_layer_with(&seq, &scores, p.k, p.strategy, opts.mean_rule)?;
                seq = red.seq;
                record = Some(red.record);
            }
            if opts.diagnostics {
                layers.push(LayerDiagnostics {
                    layer: l,
                    tokens_in,
                    tokens_out: seq.len(),
                    flops: block_flops(tokens_in, &dims)?,
                    surviving: seq.orig_index.clone(),
                    reduction: record,
                });
            }
        }
        let logits = self.head(&seq)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                layer: self.config.depth,
            });
        }
        let diagnostics = opts.diagnostics.then(|| Diagnostics {
            layers,
            embed_flops: flops.patch_embed_cost(),
            head_flops: flops.head_cost(seq.len()),
        });
        Ok(ForwardOutput {
            logits,
            diagnostics,
        })
    }

    fn head(&self, seq: &TokenSequence) -> Result<Vec<f32>> {
        let d = self.config.feat_dim;
        let pooled = match seq.cls_row() {
            Some(r) => seq.features.row(r).to_vec(),
            None => {
                let mut acc = vec![0.0f32; d];
                for t in 0..seq.len() {
                    for (a, v) in acc.iter_mut().zip(seq.features.row(t)) {
                        *a += v;
                    }
                }
                acc.iter().map(|v| v / seq.len() as f32).collect()
            }
        };
        let normed = layer_norm(
            &DenseArray::new(vec![1, d], pooled)?,
            &self.norm_scale,
            &self.norm_bias,
        )?;
        let mut logits = matmul(&normed, &self.head_w)?.into_data();
        for (l, b) in logits.iter_mut().zip(&self.head_b) {
            *l += b;
        }
        Ok(logits)
    }

    /// Runs `forward` over a batch, one task per image when the `parallel`
    /// feature is on.
    pub fn forward_batch(
        &self,
        images: &[Image],
        plan: Option<&ReductionPlan>,
        opts: ForwardOptions,
    ) -> Result<Vec<ForwardOutput>> {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            images
                .par_iter()
                .map(|img| self.forward(img, plan, opts))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            images
                .iter()
                .map(|img| self.forward(img, plan, opts))
                .collect()
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint {
            meta: serde_json::to_string(&self.config).expect("config serialises"),
            ..Default::default()
        };
        let vec1 = |v: &[f32]| DenseArray::new(vec![v.len()], v.to_vec()).unwrap();
        ck.insert("patch_embed.weight", self.patch_w.clone())?;
        ck.insert("patch_embed.bias", vec1(&self.patch_b))?;
        ck.insert("cls_token", vec1(&self.cls_token))?;
        for (i, b) in self.blocks.iter().enumerate() {
            let p = format!("blocks.{i}");
            ck.insert(format!("{p}.norm.scale"), vec1(&b.norm_scale))?;
            ck.insert(format!("{p}.norm.bias"), vec1(&b.norm_bias))?;
            ck.insert(format!("{p}.in_proj"), b.in_proj.clone())?;
            ck.insert(format!("{p}.out_proj"), b.out_proj.clone())?;
            for (h, head) in b.heads.iter().enumerate() {
                let q = format!("{p}.heads.{h}");
                ck.insert(format!("{q}.a_log"), head.a_log.clone())?;
                ck.insert(format!("{q}.w_b"), head.w_b.clone())?;
                ck.insert(format!("{q}.w_c"), head.w_c.clone())?;
                ck.insert(format!("{q}.w_1"), head.w_1.clone())?;
                ck.insert(format!("{q}.w_2"), head.w_2.clone())?;
                ck.insert(format!("{q}.skip_d"), vec1(&head.skip_d))?;
                ck.insert(format!("{q}.conv"), head.conv_kernel.clone())?;
            }
        }
        ck.insert("norm.scale", vec1(&self.norm_scale))?;
        ck.insert("norm.bias", vec1(&self.norm_bias))?;
        ck.insert("head.weight", self.head_w.clone())?;
        ck.insert("head.bias", vec1(&self.head_b))?;
        Ok(ck)
    }

    /// Rebuilds a model from a checkpoint whose metadata holds its config.
    /// Head `h` scans forward when `h` is even.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: ModelConfig = serde_json::from_str(&ck.meta)
            .map_err(|e| Error::Config(format!("checkpoint metadata: {e}")))?;
        config.validate()?;
        let get = |name: &str| ck.get(name).cloned();
        let getv = |name: &str| ck.get(name).map(|a| a.data().to_vec());
        let mut blocks = Vec::with_capacity(config.depth);
        for i in 0..config.depth {
            let p = format!("blocks.{i}");
            let heads = (0..config.heads)
                .map(|h| {
                    let q = format!("{p}.heads.{h}");
                    Ok(SsmHeadParams {
                        a_log: get(&format!("{q}.a_log"))?,
                        w_b: get(&format!("{q}.w_b"))?,
                        w_c: get(&format!("{q}.w_c"))?,
                        w_1: get(&format!("{q}.w_1"))?,
                        w_2: get(&format!("{q}.w_2"))?,
                        skip_d: getv(&format!("{q}.skip_d"))?,
                        conv_kernel: get(&format!("{q}.conv"))?,
                        direction: if h % 2 == 0 {
                            ScanDirection::Forward
                        } else {
                            ScanDirection::Backward
                        },
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            blocks.push(SsmBlockParams {
                norm_scale: getv(&format!("{p}.norm.scale"))?,
                norm_bias: getv(&format!("{p}.norm.bias"))?,
                in_proj: get(&format!("{p}.in_proj"))?,
                out_proj: get(&format!("{p}.out_proj"))?,
                heads,
            });
        }
        let model = Self {
            patch_w: get("patch_embed.weight")?,
            patch_b: getv("patch_embed.bias")?,
            cls_token: getv("cls_token")?,
            blocks,
            norm_scale: getv("norm.scale")?,
            norm_bias: getv("norm.bias")?,
            head_w: get("head.weight")?,
            head_b: getv("head.bias")?,
            config,
        };
        model.validate()?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduction::Strategy;

    fn tiny(seed: u64) -> VisionMamba {
        VisionMamba::seeded(ModelConfig::tiny(), seed).unwrap()
    }

    fn plan(layers: Vec<usize>, k: f64) -> ReductionPlan {
        ReductionPlan {
            reduce_at_layers: layers,
            k,
            strategy: Strategy::Merge,
            target: 0.0,
            achieved_reduction: 0.0,
        }
    }

    #[test]
    fn patch_embed_counts_and_cls() {
        let cfg = ModelConfig {
            image_size: 4,
            patch_size: 2,
            ..ModelConfig::tiny()
        };
        let m = VisionMamba::seeded(cfg, 1).unwrap();
        let seq = m.patch_embed(&Image::synthetic(4, 3, 0)).unwrap();
        assert_eq!(seq.len(), 5);
        assert_eq!(seq.cls_orig, Some(2));
        assert_eq!(seq.features.row(2), m.cls_token.as_slice());
    }

    #[test]
    fn zero_image_gives_bias_tokens() {
        let mut m = tiny(2);
        m.config.cls_position = ClsPosition::None;
        m.patch_w = DenseArray::zeros(m.patch_w.shape().to_vec());
        m.patch_b = (0..8).map(|i| i as f32).collect();
        let img = Image::new(16, 16, 3, vec![0.0; 16 * 16 * 3]).unwrap();
        let seq = m.patch_embed(&img).unwrap();
        for t in 0..seq.len() {
            assert_eq!(seq.features.row(t), m.patch_b.as_slice());
        }
    }

    #[test]
    fn patch_embed_matches_unfold_oracle() {
        let mut m = tiny(3);
        m.config.cls_position = ClsPosition::None;
        let img = Image::synthetic(16, 3, 9);
        let seq = m.patch_embed(&img).unwrap();
        let (ps, side, d) = (4, 4, 8);
        for py in 0..side {
            for px in 0..side {
                let mut patch = Vec::new();
                for dy in 0..ps {
                    for dx in 0..ps {
                        for c in 0..3 {
                            patch.push(img.get(py * ps + dy, px * ps + dx, c));
                        }
                    }
                }
                for j in 0..d {
                    let mut acc = 0.0f32;
                    for (i, v) in patch.iter().enumerate() {
                        acc += v * m.patch_w.data()[i * d + j];
                    }
                    acc += m.patch_b[j];
                    assert_eq!(seq.features.row(py * side + px)[j], acc);
                }
            }
        }
    }

    #[test]
    fn patch_embed_rejects_wrong_size() {
        assert!(tiny(1).patch_embed(&Image::synthetic(8, 3, 0)).is_err());
    }

    #[test]
    fn zero_ratio_plan_is_bitwise_identity() {
        let m = tiny(4);
        let img = Image::synthetic(16, 3, 5);
        let base = m.forward(&img, None, ForwardOptions::default()).unwrap();
        let same = m
            .forward(
                &img,
                Some(&plan(vec![0, 1, 2], 0.0)),
                ForwardOptions::default(),
            )
            .unwrap();
        assert_eq!(
            base.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            same.logits.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn contrived_head_reads_cls() {
        let mut cfg = ModelConfig::tiny();
        cfg.depth = 1;
        cfg.class_count = 8;
        let mut m = VisionMamba::seeded(cfg, 6).unwrap();
        m.blocks[0].out_proj = DenseArray::zeros(vec![16, 8]);
        let mut e1 = vec![0.0; 8];
        e1[0] = 1.0;
        m.cls_token = e1.clone();
        // Zero scale and bias e1 pin the normalised CLS feature to e1.
        m.norm_scale = vec![0.0; 8];
        m.norm_bias = e1.clone();
        m.head_w = DenseArray::identity(8);
        let out = m
            .forward(&Image::synthetic(16, 3, 1), None, ForwardOptions::default())
            .unwrap();
        assert_eq!(out.logits, e1);
    }

    #[test]
    fn diagnostics_token_counts() {
        let m = tiny(7);
        let out = m
            .forward(
                &Image::synthetic(16, 3, 2),
                Some(&plan(vec![1], 0.1)),
                ForwardOptions::default(),
            )
            .unwrap();
        let diag = out.diagnostics.unwrap();
        assert_eq!(diag.tokens_in(), vec![17, 17, 16, 16]);
        assert_eq!(diag.tokens_out(), vec![17, 16, 16, 16]);
        let sim = m.config.flops_model().simulate(0.1, &[1]).unwrap();
        assert_eq!(sim.tokens_in, diag.tokens_in());
        assert_eq!(sim.tokens_out, diag.tokens_out());
        assert_eq!(sim.total_flops, diag.total_flops());
        for l in &diag.layers {
            assert!(l.surviving.contains(&8), "CLS survives layer {}", l.layer);
        }
    }

    #[test]
    fn every_indicator_runs() {
        let m = tiny(8);
        let img = Image::synthetic(16, 3, 3);
        for indicator in Indicator::ALL {
            let opts = ForwardOptions {
                indicator,
                ..Default::default()
            };
            let out = m.forward(&img, Some(&plan(vec![0, 2], 0.2)), opts).unwrap();
            assert_eq!(out.diagnostics.unwrap().tokens_out(), vec![14, 14, 12, 12]);
        }
    }

    #[test]
    fn plan_must_fit_depth() {
        let m = tiny(9);
        let err = m.forward(
            &Image::synthetic(16, 3, 3),
            Some(&plan(vec![4], 0.1)),
            ForwardOptions::default(),
        );
        assert!(matches!(err, Err(Error::InvalidPlan(_))));
    }

    #[test]
    fn nan_is_reported_with_layer() {
        let mut m = tiny(10);
        m.blocks[2].out_proj.data_mut()[0] = f32::NAN;
        let err = m.forward(&Image::synthetic(16, 3, 3), None, ForwardOptions::default());
        assert!(matches!(err, Err(Error::NonFinite { layer: 2 })));
    }

    #[test]
    fn checkpoint_round_trip_preserves_model() {
        let m = tiny(11);
        let ck = m.to_checkpoint().unwrap();
        let back =
            VisionMamba::from_checkpoint(&Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap())
                .unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = tiny(12);
        let img = Image::synthetic(16, 3, 4);
        let p = plan(vec![1, 2], 0.3);
        let a = m
            .forward(&img, Some(&p), ForwardOptions::default())
            .unwrap();
        let b = m
            .forward(&img, Some(&p), ForwardOptions::default())
            .unwrap();
        assert_eq!(a.logits, b.logits);
        let batch = m
            .forward_batch(&[img.clone(), img], Some(&p), ForwardOptions::default())
            .unwrap();
        assert_eq!(batch[1].logits, a.logits);
    }

    #[test]
    fn mean_pool_without_cls() {
        let mut cfg = ModelConfig::tiny();
        cfg.cls_position = ClsPosition::None;
        let m = VisionMamba::seeded(cfg, 13).unwrap();
        let out = m
            .forward(
                &Image::synthetic(16, 3, 4),
                Some(&plan(vec![0], 0.25)),
                ForwardOptions::default(),
            )
            .unwrap();
        let diag = out.diagnostics.unwrap();
        assert_eq!(diag.tokens_out()[0], 12);
        assert_eq!(
            diag.total_flops(),
            m.config
                .flops_model()
                .simulate(0.25, &[0])
                .unwrap()
                .total_flops
        );
    }
}
