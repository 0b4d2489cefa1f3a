//! Dense row-major `f32` arrays and the handful of kernels the rest of the
//! crate is built on.
//!
//! Every reduction runs left-to-right in a fixed order, so results are
//! bit-reproducible and can be compared exactly against naive loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm below which a vector is treated as zero by [`cosine_similarity`].
pub const NORM_EPS: f32 = 1e-12;

/// Inputs above this threshold make [`softplus`] return its argument.
pub const SOFTPLUS_THRESHOLD: f32 = 20.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("DenseArray::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![value; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(vec![n, n]);
        for i in 0..n {
            out.data[i * n + i] = 1.0;
        }
        out
    }

    /// Builds a 2-D array from equally long rows.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::dim("DenseArray::from_rows", &[cols], &[bad.len()]));
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a 2-D array.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::dim("dims2", other, &[0, 0])),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    /// Row `i` of a 2-D array.
    pub fn row(&self, i: usize) -> &[f32] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let cols = self.shape[1];
        &mut self.data[i * cols..(i + 1) * cols]
    }

    /// Gathers the given rows (in the given order) of a 2-D array.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let cols = self.shape[1];
        let mut data = Vec::with_capacity(idx.len() * cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self {
            shape: vec![idx.len(), cols],
            data,
        }
    }

    /// Rows in reverse order.
    pub fn reversed_rows(&self) -> Self {
        let idx: Vec<usize> = (0..self.rows()).rev().collect();
        self.select_rows(&idx)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise sum of two arrays of identical shape.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::dim("add", &self.shape, &other.shape));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }
}

/// Sink for floating-point operation counts.
///
/// Kernels report every multiply-add as 2 and every other elementwise op as
/// 1. The unit type discards counts and compiles away.
pub trait Tally {
    fn add(&mut self, ops: u64);
}

impl Tally for () {
    #[inline(always)]
    fn add(&mut self, _ops: u64) {}
}

/// Counts every reported operation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounter(pub u64);

impl Tally for OpCounter {
    #[inline(always)]
    fn add(&mut self, ops: u64) {
        self.0 += ops;
    }
}

pub fn matmul(a: &DenseArray, b: &DenseArray) -> Result<DenseArray> {
    matmul_tallied(a, b, &mut ())
}

pub(crate) fn matmul_tallied<T: Tally>(
    a: &DenseArray,
    b: &DenseArray,
    tally: &mut T,
) -> Result<DenseArray> {
    let (m, k) = a.dims2()?;
    let (kb, p) = b.dims2()?;
    if k != kb {
        return Err(Error::dim("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0f32; m * p];
    for i in 0..m {
        let out_row = &mut out[i * p..(i + 1) * p];
        let a_row = &a.data[i * k..(i + 1) * k];
        // i-k-j order: every out[i][j] still accumulates over k left to right.
        for (kk, &av) in a_row.iter().enumerate() {
            let b_row = &b.data[kk * p..(kk + 1) * p];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
                tally.add(2);
            }
        }
    }
    DenseArray::new(vec![m, p], out)
}

/// `exp(x)` to within a few ulp, branch free so loops over it vectorise.
/// Returns 0 below `-87` (where f32 goes subnormal) and saturates above `88`.
#[inline]
pub fn exp_fast(x: f32) -> f32 {
    const LOG2_E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    // Adding and subtracting 1.5·2^23 rounds to the nearest integer.
    const ROUND: f32 = 12_582_912.0;
    let xc = x.clamp(-87.0, 88.0);
    let shifted = xc * LOG2_E + ROUND;
    let kf = shifted - ROUND;
    // The rounded integer sits in the low mantissa bits of `shifted`.
    let k = shifted.to_bits().wrapping_sub(ROUND.to_bits());
    let r = xc - kf * LN2_HI - kf * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (0.5
                + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0))))));
    let scale = f32::from_bits(k.wrapping_add(127) << 23);
    if x < -87.0 {
        0.0
    } else {
        p * scale
    }
}

#[inline]
pub fn softplus_scalar(x: f32) -> f32 {
    if x > SOFTPLUS_THRESHOLD {
        x
    } else {
        // ln_1p keeps precision for very negative x; the floor keeps the
        // result strictly positive once exp(x) underflows f32.
        x.exp().ln_1p().max(f32::MIN_POSITIVE)
    }
}

pub fn softplus(x: &DenseArray) -> DenseArray {
    x.map(softplus_scalar)
}

#[inline]
pub fn silu(x: f32) -> f32 {
    x / (1.0 + (-x).exp())
}

pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f32> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine_similarity", &[a.len()], &[b.len()]));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na < NORM_EPS || nb < NORM_EPS {
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Indices that sort `values` in descending order. Stable: equal values keep
/// ascending index order.
pub fn argsort_desc(values: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    idx
}

/// Layer normalisation over the last axis of a 2-D array, `eps = 1e-5`.
pub(crate) fn layer_norm_tallied<T: Tally>(
    x: &DenseArray,
    scale: &[f32],
    bias: &[f32],
    tally: &mut T,
) -> Result<DenseArray> {
    let (rows, cols) = x.dims2()?;
    if scale.len() != cols || bias.len() != cols {
        return Err(Error::dim(
            "layer_norm",
            x.shape(),
            &[scale.len(), bias.len()],
        ));
    }
    let mut out = DenseArray::zeros(vec![rows, cols]);
    for r in 0..rows {
        let row = x.row(r);
        let mut sum = 0.0f32;
        for &v in row {
            sum += v;
            tally.add(1);
        }
        let mean = sum / cols as f32;
        let mut var = 0.0f32;
        for &v in row {
            let c = v - mean;
            var += c * c;
            tally.add(3);
        }
        let inv = 1.0 / (var / cols as f32 + 1e-5).sqrt();
        let dst = out.row_mut(r);
        for ((o, &v), (&s, &b)) in dst.iter_mut().zip(row).zip(scale.iter().zip(bias)) {
            *o = (v - mean) * inv * s + b;
            tally.add(4);
        }
    }
    Ok(out)
}

pub fn layer_norm(x: &DenseArray, scale: &[f32], bias: &[f32]) -> Result<DenseArray> {
    layer_norm_tallied(x, scale, bias, &mut ())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_matmul(a: &DenseArray, b: &DenseArray) -> Vec<f32> {
        let (m, k) = a.dims2().unwrap();
        let (_, p) = b.dims2().unwrap();
        let mut out = vec![0.0f32; m * p];
        for i in 0..m {
            for j in 0..p {
                let mut acc = 0.0f32;
                for kk in 0..k {
                    acc += a.data()[i * k + kk] * b.data()[kk * p + j];
                }
                out[i * p + j] = acc;
            }
        }
        out
    }

    fn random(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> DenseArray {
        let n = shape.iter().product();
        DenseArray::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn matmul_identity_and_selector() {
        let x = DenseArray::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&DenseArray::identity(2), &x).unwrap(), x);
        let a = DenseArray::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = DenseArray::from_rows(&[vec![0.0], vec![5.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, vec![7, 5]);
        let b = random(&mut rng, vec![5, 3]);
        assert_eq!(
            matmul(&a, &b).unwrap().data(),
            naive_matmul(&a, &b).as_slice()
        );
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let err = matmul(
            &DenseArray::zeros(vec![2, 3]),
            &DenseArray::zeros(vec![2, 3]),
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn exp_fast_tracks_f64_exp() {
        let mut worst = 0.0f64;
        let mut x = -86.9f32;
        while x < 88.0 {
            let want = (x as f64).exp();
            worst = worst.max(((exp_fast(x) as f64 - want) / want).abs());
            x += 0.0137;
        }
        assert!(worst < 5e-7, "relative error {worst}");
        assert_eq!(exp_fast(0.0), 1.0);
        assert_eq!(exp_fast(-200.0), 0.0);
        assert!(exp_fast(1000.0).is_finite());
    }

    #[test]
    fn softplus_reference_points() {
        assert!((softplus_scalar(0.0) - std::f32::consts::LN_2).abs() < 1e-6);
        assert!((softplus_scalar(30.0) - 30.0).abs() < 1e-6);
        // ln(1 + e^-30) = 9.357622968840175e-14
        let tiny = softplus_scalar(-30.0);
        assert!(tiny > 0.0);
        assert!(((tiny as f64) - 9.357622968840175e-14).abs() / 9.357622968840175e-14 < 1e-5);
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn argsort_cases() {
        assert_eq!(argsort_desc(&[0.1, 0.9, 0.5]), vec![1, 2, 0]);
        assert_eq!(argsort_desc(&[0.5, 0.5, 0.5]), vec![0, 1, 2]);
    }

    #[test]
    fn argsort_matches_selection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Coarse values force plenty of ties.
        let v: Vec<f32> = (0..100)
            .map(|_| (rng.gen_range(0..20) as f32) / 4.0)
            .collect();
        // O(n^2) oracle: rank of i = #{j: v_j > v_i} + #{j < i: v_j == v_i}.
        let mut oracle = vec![0usize; v.len()];
        for i in 0..v.len() {
            let rank = (0..v.len())
                .filter(|&j| v[j] > v[i] || (v[j] == v[i] && j < i))
                .count();
            oracle[rank] = i;
        }
        assert_eq!(argsort_desc(&v), oracle);
    }

    #[test]
    fn layer_norm_zero_mean_unit_var() {
        let x = DenseArray::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let y = layer_norm(&x, &[1.0; 4], &[0.0; 4]).unwrap();
        let mean: f32 = y.data().iter().sum::<f32>() / 4.0;
        let var: f32 = y.data().iter().map(|v| v * v).sum::<f32>() / 4.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }

    proptest! {
        #[test]
        fn identity_matmul_is_exact(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random(&mut rng, vec![rows, cols]);
            prop_assert_eq!(matmul(&DenseArray::identity(rows), &x).unwrap(), x);
        }

        #[test]
        fn softplus_positive_and_monotone(a in -1e30f32..1e30, b in -1e30f32..1e30) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(softplus_scalar(lo) > 0.0);
            prop_assert!(softplus_scalar(lo) <= softplus_scalar(hi));
        }

        #[test]
        fn cosine_in_range(a in prop::collection::vec(-1e3f32..1e3, 4), b in prop::collection::vec(-1e3f32..1e3, 4)) {
            let c = cosine_similarity(&a, &b).unwrap();
            prop_assert!((-1.0 - 1e-6..=1.0 + 1e-6).contains(&c));
        }

        #[test]
        fn argsort_is_permutation(v in prop::collection::vec(-10f32..10.0, 0..50)) {
            let mut idx = argsort_desc(&v);
            for w in idx.windows(2) {
                prop_assert!(v[w[0]] >= v[w[1]]);
            }
            idx.sort_unstable();
            prop_assert_eq!(idx, (0..v.len()).collect::<Vec<_>>());
        }
    }
}
