//! Per-token importance scores read off a block's internal quantities.
//!
//! [`Indicator::Delta`] is the default: the timescale `Δ` is summed over the
//! scanning heads and averaged over channels. The other indicators exist for
//! comparison.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ssm::{ScanTrace, SsmBlockParams};
use crate::tensor::{cosine_similarity, DenseArray};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Indicator {
    Delta,
    BProj,
    CProj,
    HiddenX,
    ClsSim,
}

impl Indicator {
    pub const ALL: [Indicator; 5] = [
        Indicator::Delta,
        Indicator::BProj,
        Indicator::CProj,
        Indicator::HiddenX,
        Indicator::ClsSim,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Indicator::Delta => "delta",
            Indicator::BProj => "b",
            Indicator::CProj => "c",
            Indicator::HiddenX => "x",
            Indicator::ClsSim => "cls",
        }
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for Indicator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Indicator::ALL
            .into_iter()
            .find(|i| i.short_name() == s)
            .ok_or_else(|| format!("unknown indicator {s:?}; expected delta|b|c|x|cls"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProjectionMode {
    B,
    C,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceScores {
    pub scores: Vec<f32>,
    pub indicator: Indicator,
}

impl ImportanceScores {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Mean over channels of the head-summed `Δ`.
pub fn score_delta(traces: &[ScanTrace]) -> Result<ImportanceScores> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Contract("score_delta needs at least one head".into()))?;
    let (l, e) = first.delta.dims2()?;
    if let Some(bad) = traces
        .iter()
        .find(|tr| tr.delta.shape() != first.delta.shape())
    {
        return Err(Error::dim(
            "score_delta",
            first.delta.shape(),
            bad.delta.shape(),
        ));
    }
    // Accumulated in f64 so a positive rescaling of every delta cannot
    // reorder near-equal scores through rounding.
    let scores = (0..l)
        .map(|t| {
            let mut total = 0.0f64;
            for ch in 0..e {
                let summed: f64 = traces
                    .iter()
                    .map(|tr| tr.delta.data()[t * e + ch] as f64)
                    .sum();
                total += summed;
            }
            (total / e as f64) as f32
        })
        .collect();
    Ok(ImportanceScores {
        scores,
        indicator: Indicator::Delta,
    })
}

/// Single-head projection score: mean over N of `x_t · w`.
pub fn score_projection(
    x: &DenseArray,
    w: &DenseArray,
    mode: ProjectionMode,
) -> Result<ImportanceScores> {
    let summed = projection_sum(&[(x, w)])?;
    Ok(finish_projection(summed, w.shape()[1], mode))
}

/// Projection score summed across heads, pairing each head's scan input with
/// its `W_B` or `W_C`.
pub fn score_projection_heads(
    traces: &[ScanTrace],
    block: &SsmBlockParams,
    mode: ProjectionMode,
) -> Result<ImportanceScores> {
    if traces.len() != block.heads.len() {
        return Err(Error::dim(
            "score_projection_heads",
            &[traces.len()],
            &[block.heads.len()],
        ));
    }
    let pairs: Vec<_> = traces
        .iter()
        .zip(&block.heads)
        .map(|(tr, h)| {
            let w = match mode {
                ProjectionMode::B => &h.w_b,
                ProjectionMode::C => &h.w_c,
            };
            (&tr.input, w)
        })
        .collect();
    let summed = projection_sum(&pairs)?;
    let n = block.heads[0].w_b.shape()[1];
    Ok(finish_projection(summed, n, mode))
}

fn projection_sum(pairs: &[(&DenseArray, &DenseArray)]) -> Result<Vec<f32>> {
    let (l, _) = pairs
        .first()
        .ok_or_else(|| Error::Contract("projection score needs at least one head".into()))?
        .0
        .dims2()?;
    let mut totals = vec![0.0f32; l];
    for (x, w) in pairs {
        let proj = crate::tensor::matmul(x, w)?;
        if proj.rows() != l {
            return Err(Error::dim("projection", &[l], x.shape()));
        }
        for (t, tot) in totals.iter_mut().enumerate() {
            *tot += proj.row(t).iter().sum::<f32>();
        }
    }
    Ok(totals)
}

fn finish_projection(totals: Vec<f32>, n: usize, mode: ProjectionMode) -> ImportanceScores {
    ImportanceScores {
        scores: totals.into_iter().map(|s| s / n as f32).collect(),
        indicator: match mode {
            ProjectionMode::B => Indicator::BProj,
            ProjectionMode::C => Indicator::CProj,
        },
    }
}

/// Channel mean of each token's features.
pub fn score_hidden(x: &DenseArray) -> Result<ImportanceScores> {
    let (l, d) = x.dims2()?;
    let scores = (0..l)
        .map(|t| x.row(t).iter().sum::<f32>() / d as f32)
        .collect();
    Ok(ImportanceScores {
        scores,
        indicator: Indicator::HiddenX,
    })
}

/// Cosine similarity of every token to the token at `cls_index`. The CLS
/// position itself scores `+inf`.
pub fn score_cls_similarity(x: &DenseArray, cls_index: usize) -> Result<ImportanceScores> {
    let (l, _) = x.dims2()?;
    if cls_index >= l {
        return Err(Error::Index {
            index: cls_index,
            len: l,
        });
    }
    let cls = x.row(cls_index);
    let scores = (0..l)
        .map(|t| {
            if t == cls_index {
                Ok(f32::INFINITY)
            } else {
                cosine_similarity(cls, x.row(t))
            }
        })
        .collect::<Result<_>>()?;
    Ok(ImportanceScores {
        scores,
        indicator: Indicator::ClsSim,
    })
}

/// What an indicator may read at a reduction point.
pub struct ScoringInputs<'a> {
    pub block_input: &'a DenseArray,
    pub block_output: &'a DenseArray,
    pub traces: &'a [ScanTrace],
    pub block: &'a SsmBlockParams,
    pub cls_row: Option<usize>,
}

/// Dispatches to the scoring function for `indicator`.
pub fn score(indicator: Indicator, inputs: &ScoringInputs<'_>) -> Result<ImportanceScores> {
    match indicator {
        Indicator::Delta => score_delta(inputs.traces),
        Indicator::BProj => score_projection_heads(inputs.traces, inputs.block, ProjectionMode::B),
        Indicator::CProj => score_projection_heads(inputs.traces, inputs.block, ProjectionMode::C),
        Indicator::HiddenX => score_hidden(inputs.block_input),
        Indicator::ClsSim => match inputs.cls_row {
            Some(c) => score_cls_similarity(inputs.block_output, c),
            None => Err(Error::Config("cls indicator needs a CLS token".into())),
        },
    }
}
