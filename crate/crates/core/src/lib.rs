//! Training-free token reduction for selective state-space (Mamba-style)
//! vision models.
//!
//! A block's timescale `Δ` ranks tokens; the least important are merged into
//! similar mid-ranked tokens (or pruned) and the survivors are restored to
//! sequence order before the next block. [`flops::solve_k`] picks the
//! grouping ratio that hits a global FLOPs-reduction target.

pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod flops;
pub mod image;
pub mod importance;
pub mod model;
pub mod reduction;
pub mod report;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use flops::{solve_k, FlopsModel, ReductionPlan};
pub use image::Image;
pub use importance::{ImportanceScores, Indicator};
pub use model::{ClsPosition, ForwardOptions, ModelConfig, VisionMamba};
pub use reduction::{reduce_layer, MeanRule, Strategy, TokenSequence};
pub use tensor::DenseArray;
