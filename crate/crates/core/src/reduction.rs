//! Importance-guided token reduction.
//!
//! Reducible tokens are ranked by score and split into three groups: the top
//! `floor(k·L_r)` are kept untouched, the bottom `floor(k·L_r)` are sources,
//! and the rest are targets. Each source is folded into its most similar
//! target (or dropped, for pruning), and survivors are put back into their
//! original sequence order because the scan that follows is order sensitive.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::importance::ImportanceScores;
use crate::tensor::{argsort_desc, cosine_similarity, DenseArray};

/// Slack added before flooring `k·L_r`, so ratios such as `0.35` that are not
/// exactly representable still produce the intended integer group size.
const FLOOR_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    #[default]
    Merge,
    Prune,
    Hybrid,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Merge, Strategy::Prune, Strategy::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Merge => "merge",
            Strategy::Prune => "prune",
            Strategy::Hybrid => "hybrid",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Strategy::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown strategy {s:?}; expected merge|prune|hybrid"))
    }
}

/// How merged features are averaged.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MeanRule {
    /// Each participant counts as many times as the originals it represents.
    #[default]
    Weighted,
    /// Plain mean of the participating rows.
    Unweighted,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenSequence {
    /// L×D.
    pub features: DenseArray,
    /// Position of each row in the initial sequence.
    pub orig_index: Vec<usize>,
    /// Number of initial tokens each row stands for.
    pub weight: Vec<u32>,
    /// `orig_index` of the CLS token, if the sequence carries one.
    pub cls_orig: Option<usize>,
}

impl TokenSequence {
    /// Fresh sequence: rows numbered `0..L`, unit weights.
    pub fn new(features: DenseArray, cls_orig: Option<usize>) -> Result<Self> {
        let l = features.dims2()?.0;
        let seq = Self {
            features,
            orig_index: (0..l).collect(),
            weight: vec![1; l],
            cls_orig,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.orig_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orig_index.is_empty()
    }

    /// Current row of the CLS token.
    pub fn cls_row(&self) -> Option<usize> {
        let cls = self.cls_orig?;
        self.orig_index.iter().position(|&o| o == cls)
    }

    pub fn total_weight(&self) -> u64 {
        self.weight.iter().map(|&w| w as u64).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.features.dims2()?.0;
        if self.orig_index.len() != l || self.weight.len() != l {
            return Err(Error::Corrupt(format!(
                "{l} rows but {} indices and {} weights",
                self.orig_index.len(),
                self.weight.len()
            )));
        }
        let mut seen = HashSet::with_capacity(l);
        if let Some(dup) = self.orig_index.iter().find(|o| !seen.insert(**o)) {
            return Err(Error::Corrupt(format!("duplicate orig_index {dup}")));
        }
        if self.weight.contains(&0) {
            return Err(Error::Corrupt("zero merge weight".into()));
        }
        if let Some(cls) = self.cls_orig {
            if !self.orig_index.contains(&cls) {
                return Err(Error::Corrupt(format!("CLS token {cls} missing")));
            }
        }
        Ok(())
    }

    fn select(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select_rows(rows),
            orig_index: rows.iter().map(|&r| self.orig_index[r]).collect(),
            weight: rows.iter().map(|&r| self.weight[r]).collect(),
            cls_orig: self.cls_orig,
        }
    }
}

/// Row indices of each group. Every list is in descending score order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct GroupPartition {
    pub keep: Vec<usize>,
    pub target: Vec<usize>,
    pub source: Vec<usize>,
}

/// `(source row, target row)` pairs, one per source.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct MergeMapping {
    pub edges: Vec<(usize, usize)>,
}

/// `floor(k · reducible)`, the size of both the keep and the source group.
pub fn group_size(k: f64, reducible: usize) -> usize {
    (k * reducible as f64 + FLOOR_SLACK).floor() as usize
}

pub fn check_ratio(k: f64) -> Result<()> {
    if (0.0..0.5).contains(&k) {
        Ok(())
    } else {
        Err(Error::InvalidRatio(k))
    }
}

/// Splits all rows except `exclude` into keep / target / source groups.
pub fn partition(
    scores: &ImportanceScores,
    k: f64,
    exclude: Option<usize>,
) -> Result<GroupPartition> {
    check_ratio(k)?;
    let rows: Vec<usize> = (0..scores.len()).filter(|&r| Some(r) != exclude).collect();
    let reducible: Vec<f32> = rows.iter().map(|&r| scores.scores[r]).collect();
    if let Some(bad) = reducible.iter().find(|v| v.is_nan()) {
        return Err(Error::Contract(format!("importance score {bad}")));
    }
    let ranked: Vec<usize> = argsort_desc(&reducible)
        .into_iter()
        .map(|i| rows[i])
        .collect();
    let nk = group_size(k, rows.len());
    if 2 * nk > rows.len() {
        return Err(Error::InvalidRatio(k));
    }
    Ok(GroupPartition {
        keep: ranked[..nk].to_vec(),
        target: ranked[nk..rows.len() - nk].to_vec(),
        source: ranked[rows.len() - nk..].to_vec(),
    })
}

fn check_partition(seq: &TokenSequence, part: &GroupPartition) -> Result<()> {
    let l = seq.len();
    let mut seen = HashSet::new();
    for &r in part.keep.iter().chain(&part.target).chain(&part.source) {
        if r >= l {
            return Err(Error::InvalidPartition(format!(
                "row {r} out of range for {l} tokens"
            )));
        }
        if !seen.insert(r) {
            return Err(Error::InvalidPartition(format!("row {r} appears twice")));
        }
        if Some(r) == seq.cls_row() {
            return Err(Error::InvalidPartition(
                "CLS token placed in a group".into(),
            ));
        }
    }
    Ok(())
}

/// For each source, the target with the highest cosine similarity. Ties go to
/// the target with the lowest `orig_index`.
pub fn match_sources(
    seq: &TokenSequence,
    part: &GroupPartition,
    sources: &[usize],
) -> Result<MergeMapping> {
    if part.target.is_empty() && !sources.is_empty() {
        return Err(Error::InvalidPartition("empty target group".into()));
    }
    let mut edges = Vec::with_capacity(sources.len());
    for &s in sources {
        let src = seq.features.row(s);
        let mut best: Option<(f32, usize, usize)> = None;
        for &t in &part.target {
            let sim = cosine_similarity(src, seq.features.row(t))?;
            let orig = seq.orig_index[t];
            let better = match best {
                None => true,
                Some((bs, bo, _)) => sim > bs || (sim == bs && orig < bo),
            };
            if better {
                best = Some((sim, orig, t));
            }
        }
        // `best` is set because the target group is non-empty.
        edges.push((s, best.map(|b| b.2).unwrap()));
    }
    Ok(MergeMapping { edges })
}

/// Applies a fixed mapping: sources fold into their targets, `dropped` rows
/// vanish, everything else is copied bit for bit. Rows keep their input order.
pub fn apply_merge(
    seq: &TokenSequence,
    mapping: &MergeMapping,
    dropped: &[usize],
    rule: MeanRule,
) -> Result<TokenSequence> {
    let (l, d) = seq.features.dims2()?;
    let mut removed = vec![false; l];
    // Per-target accumulators: (feature sum, weight sum, participant count).
    let mut acc: Vec<Option<(Vec<f64>, u64, u32)>> = vec![None; l];
    for &(s, t) in &mapping.edges {
        if s >= l || t >= l || s == t || removed[s] {
            return Err(Error::InvalidPartition(format!(
                "bad merge edge ({s}, {t})"
            )));
        }
        removed[s] = true;
        let entry = acc[t].get_or_insert_with(|| {
            let w = scale(seq.weight[t], rule);
            let f = seq.features.row(t).iter().map(|&v| v as f64 * w).collect();
            (f, weight_or_one(seq.weight[t], rule), 1)
        });
        let w = scale(seq.weight[s], rule);
        for (a, &v) in entry.0.iter_mut().zip(seq.features.row(s)) {
            *a += v as f64 * w;
        }
        entry.1 += weight_or_one(seq.weight[s], rule);
        entry.2 += 1;
    }
    for &r in dropped {
        if r >= l {
            return Err(Error::InvalidPartition(format!("row {r} out of range")));
        }
        removed[r] = true;
    }
    if mapping.edges.iter().any(|&(_, t)| removed[t]) {
        return Err(Error::InvalidPartition(
            "merge target was itself removed".into(),
        ));
    }

    let survivors: Vec<usize> = (0..l).filter(|&r| !removed[r]).collect();
    let mut out = seq.select(&survivors);
    for (i, &r) in survivors.iter().enumerate() {
        if let Some((sum, denom, _)) = &acc[r] {
            let row = out.features.row_mut(i);
            for (o, s) in row.iter_mut().zip(sum) {
                *o = (s / *denom as f64) as f32;
            }
            debug_assert_eq!(row.len(), d);
        }
    }
    // Multiplicities always add, whatever the averaging rule.
    for &(s, t) in &mapping.edges {
        let pos = survivors.binary_search(&t).expect("target survives");
        out.weight[pos] += seq.weight[s];
    }
    Ok(out)
}

fn scale(w: u32, rule: MeanRule) -> f64 {
    match rule {
        MeanRule::Weighted => w as f64,
        MeanRule::Unweighted => 1.0,
    }
}

fn weight_or_one(w: u32, rule: MeanRule) -> u64 {
    match rule {
        MeanRule::Weighted => w as u64,
        MeanRule::Unweighted => 1,
    }
}

/// Folds every source into its most similar target (weighted mean).
pub fn bipartite_merge(
    seq: &TokenSequence,
    part: &GroupPartition,
) -> Result<(TokenSequence, MergeMapping)> {
    bipartite_merge_with(seq, part, MeanRule::Weighted)
}

pub fn bipartite_merge_with(
    seq: &TokenSequence,
    part: &GroupPartition,
    rule: MeanRule,
) -> Result<(TokenSequence, MergeMapping)> {
    check_partition(seq, part)?;
    if part.target.is_empty() {
        return Err(Error::InvalidPartition("empty target group".into()));
    }
    let mapping = match_sources(seq, part, &part.source)?;
    let out = apply_merge(seq, &mapping, &[], rule)?;
    Ok((out, mapping))
}

/// Drops every source row.
pub fn prune(seq: &TokenSequence, part: &GroupPartition) -> Result<TokenSequence> {
    check_partition(seq, part)?;
    apply_merge(
        seq,
        &MergeMapping::default(),
        &part.source,
        MeanRule::Weighted,
    )
}

/// Prunes the lower-scored half of the sources (rounded down) and merges the
/// rest. Returns the merge mapping and the pruned rows.
pub fn hybrid(
    seq: &TokenSequence,
    part: &GroupPartition,
    rule: MeanRule,
) -> Result<(TokenSequence, MergeMapping, Vec<usize>)> {
    check_partition(seq, part)?;
    let n_prune = part.source.len() / 2;
    let (merged, pruned) = part.source.split_at(part.source.len() - n_prune);
    let mapping = match_sources(seq, part, merged)?;
    let out = apply_merge(seq, &mapping, pruned, rule)?;
    Ok((out, mapping, pruned.to_vec()))
}

/// Sorts rows by `orig_index`.
pub fn reorder(seq: &TokenSequence) -> Result<TokenSequence> {
    seq.validate()?;
    let mut rows: Vec<usize> = (0..seq.len()).collect();
    rows.sort_by_key(|&r| seq.orig_index[r]);
    Ok(seq.select(&rows))
}

/// What happened at one reduction point, by `orig_index`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupRecord {
    pub keep: Vec<usize>,
    pub target: Vec<usize>,
    pub source: Vec<usize>,
    /// `(source, target)` pairs that were merged.
    pub merged: Vec<(usize, usize)>,
    pub pruned: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct LayerReduction {
    pub seq: TokenSequence,
    pub record: GroupRecord,
}

/// Partition, apply `strategy`, reorder. The CLS token never enters a group.
pub fn reduce_layer(
    seq: &TokenSequence,
    scores: &ImportanceScores,
    k: f64,
    strategy: Strategy,
) -> Result<LayerReduction> {
    reduce_layer_with(seq, scores, k, strategy, MeanRule::Weighted)
}

pub fn reduce_layer_with(
    seq: &TokenSequence,
    scores: &ImportanceScores,
    k: f64,
    strategy: Strategy,
    rule: MeanRule,
) -> Result<LayerReduction> {
    if scores.len() != seq.len() {
        return Err(Error::dim("reduce_layer", &[seq.len()], &[scores.len()]));
    }
    let part = partition(scores, k, seq.cls_row())?;
    let (reduced, mapping, pruned) = match strategy {
        Strategy::Merge => {
            let (s, m) = bipartite_merge_with(seq, &part, rule)?;
            (s, m, Vec::new())
        }
        Strategy::Prune => (
            prune(seq, &part)?,
            MergeMapping::default(),
            part.source.clone(),
        ),
        Strategy::Hybrid => hybrid(seq, &part, rule)?,
    };
    let orig = |rows: &[usize]| rows.iter().map(|&r| seq.orig_index[r]).collect::<Vec<_>>();
    let record = GroupRecord {
        keep: orig(&part.keep),
        target: orig(&part.target),
        source: orig(&part.source),
        merged: mapping
            .edges
            .iter()
            .map(|&(s, t)| (seq.orig_index[s], seq.orig_index[t]))
            .collect(),
        pruned: orig(&pruned),
    };
    Ok(LayerReduction {
        seq: reorder(&reduced)?,
        record,
    })
}
