//! Analytic FLOPs model and the solver that turns a global FLOPs-reduction
//! target into a fixed grouping ratio `k`.
//!
//! Counting convention: a multiply-add is 2 FLOPs, every other elementwise
//! operation (including `exp`, SiLU, softplus) is 1. Per-token scalars such as
//! the layer-norm reciprocal square root are not counted. Per token, one block
//! with `H` heads costs:
//!
//! | stage                         | FLOPs per token        |
//! |-------------------------------|------------------------|
//! | layer norm                    | `8·D`                  |
//! | input projection              | `2·D·2E`               |
//! | conv, width 4 (per head)      | `8·E`                  |
//! | conv SiLU (per head)          | `E`                    |
//! | `B_t`, `C_t` (per head)       | `2·E·N + 2·E·N`        |
//! | `Δ_t` low-rank + softplus     | `2·E·R + 2·R·E + E`    |
//! | scan step (per head)          | `7·E·N + 3·E`          |
//! | head accumulation (per head)  | `E`                    |
//! | gate SiLU and multiply        | `2·E`                  |
//! | output projection             | `2·E·D`                |
//! | residual add                  | `D`                    |
//!
//! which sums to `9D + 6DE + 2E + H·(14E + 11EN + 4ER)`. The scan step is
//! `exp(Δ·A)` (2), the state update `Ā·h + B·(Δx)` (3), and the readout
//! `C·h` (2) for each of the `E·N` states, plus `Δ·x` and `D·x + y` per
//! channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduction::{check_ratio, group_size, Strategy};
use crate::ssm::BlockDims;

/// Solver tolerance on the achieved reduction, as a fraction (0.25 pp).
pub const REDUCTION_TOLERANCE: f64 = 0.0025;
pub const MAX_BISECTION_STEPS: usize = 64;
/// Largest admissible ratio; `k` must stay strictly below one half.
pub const K_MAX: f64 = 0.5 - 1e-12;

pub fn per_token_block_cost(dims: &BlockDims) -> u64 {
    let BlockDims { d, e, n, r, heads } = *dims;
    let (d, e, n, r, h) = (d as u64, e as u64, n as u64, r as u64, heads as u64);
    9 * d + 6 * d * e + 2 * e + h * (14 * e + 11 * e * n + 4 * e * r)
}

pub fn block_flops(tokens: usize, dims: &BlockDims) -> Result<u64> {
    if tokens == 0 {
        return Err(Error::Contract(
            "block_flops needs at least one token".into(),
        ));
    }
    Ok(tokens as u64 * per_token_block_cost(dims))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopsModel {
    pub dims: BlockDims,
    pub depth: usize,
    /// Patch tokens, i.e. the reducible count before any reduction.
    pub patch_tokens: usize,
    pub has_cls: bool,
    /// Flattened patch length, `patch_size² · channels`.
    pub patch_dim: usize,
    pub class_count: usize,
    /// Classify from the mean of all tokens rather than the CLS token.
    pub mean_pool: bool,
    /// Count patch embedding and classifier head in totals.
    pub count_embed_and_head: bool,
}

/// Token counts through the stack for one `(k, layers)` choice.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Tokens entering each block (CLS included).
    pub tokens_in: Vec<usize>,
    /// Tokens leaving each layer, after any reduction.
    pub tokens_out: Vec<usize>,
    pub total_flops: u64,
}

impl FlopsModel {
    pub fn initial_tokens(&self) -> usize {
        self.patch_tokens + self.has_cls as usize
    }

    /// Linear patch projection plus bias, per patch.
    pub fn patch_embed_cost(&self) -> u64 {
        if !self.count_embed_and_head {
            return 0;
        }
        let (p, d) = (self.patch_dim as u64, self.dims.d as u64);
        self.patch_tokens as u64 * (2 * p * d + d)
    }

    /// Optional mean pool, final layer norm, linear classifier with bias.
    pub fn head_cost(&self, final_tokens: usize) -> u64 {
        if !self.count_embed_and_head {
            return 0;
        }
        let (d, c) = (self.dims.d as u64, self.class_count as u64);
        let pool = if self.mean_pool {
            final_tokens as u64 * d + d
        } else {
            0
        };
        pool + 8 * d + 2 * d * c + c
    }

    pub fn check_layers(&self, layers: &[usize]) -> Result<()> {
        if let Some(&bad) = layers.iter().find(|&&l| l >= self.depth) {
            return Err(Error::InvalidPlan(format!(
                "reduction layer {bad} out of range for depth {}",
                self.depth
            )));
        }
        if layers.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPlan(
                "reduction layers must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Token counts and total FLOPs when reducing after each layer in `layers`.
    pub fn simulate(&self, k: f64, layers: &[usize]) -> Result<Trajectory> {
        check_ratio(k)?;
        self.check_layers(layers)?;
        let cls = self.has_cls as usize;
        let mut cur = self.initial_tokens();
        let mut tokens_in = Vec::with_capacity(self.depth);
        let mut tokens_out = Vec::with_capacity(self.depth);
        let mut total = self.patch_embed_cost();
        for l in 0..self.depth {
            tokens_in.push(cur);
            total += block_flops(cur, &self.dims)?;
            if layers.contains(&l) {
                cur -= group_size(k, cur - cls);
            }
            tokens_out.push(cur);
        }
        total += self.head_cost(cur);
        Ok(Trajectory {
            tokens_in,
            tokens_out,
            total_flops: total,
        })
    }

    pub fn baseline_flops(&self) -> u64 {
        self.simulate(0.0, &[]).map(|t| t.total_flops).unwrap_or(0)
    }

    pub fn achieved_reduction(&self, k: f64, layers: &[usize]) -> Result<f64> {
        let t = self.simulate(k, layers)?;
        Ok(1.0 - t.total_flops as f64 / self.baseline_flops() as f64)
    }
}

/// Every fifth block starting at index 5.
pub fn default_layers(depth: usize) -> Vec<usize> {
    (5..depth).step_by(5).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReductionPlan {
    /// Layers after which tokens are reduced, ascending.
    #[serde(rename = "layers")]
    pub reduce_at_layers: Vec<usize>,
    pub k: f64,
    pub strategy: Strategy,
    pub target: f64,
    #[serde(rename = "achieved")]
    pub achieved_reduction: f64,
}

impl ReductionPlan {
    /// A plan that never reduces.
    pub fn identity(strategy: Strategy) -> Self {
        Self {
            reduce_at_layers: Vec::new(),
            k: 0.0,
            strategy,
            target: 0.0,
            achieved_reduction: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("plan serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::InvalidPlan(e.to_string()))
    }
}

/// Bisects `k ∈ [0, 0.5)` for the step of the (monotone, piecewise constant)
/// achieved-reduction curve nearest to `target`.
///
/// When no step lands within [`REDUCTION_TOLERANCE`] the nearest one is still
/// returned, with its true reduction in `achieved_reduction`.
pub fn solve_k(
    target: f64,
    layers: &[usize],
    model: &FlopsModel,
    strategy: Strategy,
) -> Result<ReductionPlan> {
    model.check_layers(layers)?;
    if !(0.0..1.0).contains(&target) {
        return Err(Error::Unattainable {
            target,
            max: model.achieved_reduction(K_MAX, layers)?,
        });
    }
    let plan = |k: f64, achieved: f64| ReductionPlan {
        reduce_at_layers: layers.to_vec(),
        k,
        strategy,
        target,
        achieved_reduction: achieved,
    };
    if target == 0.0 {
        return Ok(plan(0.0, 0.0));
    }
    let max = model.achieved_reduction(K_MAX, layers)?;
    if target > max + REDUCTION_TOLERANCE {
        return Err(Error::Unattainable { target, max });
    }

    // Invariant: achieved(lo) < target <= achieved(hi), or hi = K_MAX.
    let (mut lo, mut hi) = (0.0f64, K_MAX);
    let mut a_lo = 0.0;
    let mut a_hi = max;
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let a = model.achieved_reduction(mid, layers)?;
        if a < target {
            lo = mid;
            a_lo = a;
        } else {
            hi = mid;
            a_hi = a;
        }
    }
    if (a_hi - target).abs() <= (target - a_lo).abs() {
        Ok(plan(hi, a_hi))
    } else {
        Ok(plan(lo, a_lo))
    }
}
