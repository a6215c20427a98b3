//! Low-level numerics: dense storage, stable log-sum-exp / softmax / sigmoid,
//! compensated summary statistics and the seedable random stream every
//! experiment draws from.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DistError, Result};

/// Floor applied to every probability before it enters a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on the sum of a [`ProbVector`].
pub const SIMPLEX_TOL: f64 = 1e-9;

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR)
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(DistError::Dimension {
                expected: rows * cols,
                got: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(DistError::param(format!("non-finite matrix entry {bad}")));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(DistError::Dimension {
                    expected: cols,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols.max(1)).take(self.rows)
    }

    /// `self · x` for a column vector `x` of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(DistError::Dimension {
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok(self.iter_rows().map(|row| dot(row, x)).collect())
    }

    /// Gathers the given rows into a new matrix.
    pub fn select_rows(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        DenseMatrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A point of the probability simplex with at least two entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.len() < 2 {
            return Err(DistError::InvalidProbs(format!(
                "length {} < 2",
                entries.len()
            )));
        }
        if let Some(p) = entries
            .iter()
            .find(|p| !p.is_finite() || **p < 0.0 || **p > 1.0)
        {
            return Err(DistError::InvalidProbs(format!("entry {p} outside [0,1]")));
        }
        let total = kahan_sum(&entries);
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(DistError::InvalidProbs(format!("entries sum to {total}")));
        }
        Ok(ProbVector(entries))
    }

    pub fn uniform(len: usize) -> Result<Self> {
        Self::new(vec![1.0 / len as f64; len])
    }

    pub fn one_hot(label: usize, len: usize) -> Result<Self> {
        if label >= len {
            return Err(DistError::LabelOutOfRange {
                label,
                num_classes: len,
            });
        }
        let mut v = vec![0.0; len];
        v[label] = 1.0;
        Self::new(v)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

impl std::ops::Deref for ProbVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Unnormalised real scores over labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(DistError::EmptyVector);
        }
        if let Some(v) = entries.iter().find(|v| !v.is_finite()) {
            return Err(DistError::param(format!("non-finite logit {v}")));
        }
        Ok(LogitVector(entries))
    }

    /// Logits of a probability-space quantity: `ln(clamp(p))`.
    pub fn from_probs(p: &[f64]) -> Self {
        LogitVector(p.iter().map(|&v| clamp_prob(v).ln()).collect())
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for LogitVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Lowest index attaining the maximum.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `ln Σ exp(v_i)`, shifted by the maximum so nothing overflows.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return Err(DistError::EmptyVector);
    }
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return Ok(m);
    }
    let s: f64 = v.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + s.ln())
}

pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(v)?;
    Ok(v.iter().map(|&x| (x - lse).exp()).collect())
}

/// Softmax returned as a validated simplex point.
pub fn softmax_probs(v: &[f64]) -> Result<ProbVector> {
    ProbVector::new(softmax(v)?)
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Neumaier-compensated sum.
pub fn kahan_sum(xs: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    kahan_sum(xs) / xs.len() as f64
}

/// Unbiased (n − 1) sample variance; `None` for fewer than two values.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    Some(kahan_sum(&sq) / (xs.len() - 1) as f64)
}

/// Standard error of the mean.
pub fn standard_error(xs: &[f64]) -> f64 {
    sample_variance(xs).map_or(0.0, |v| (v / xs.len() as f64).sqrt())
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the stream with the given index under `origin_seed`.
pub fn stream_seed(origin_seed: u64, stream_index: u64) -> u64 {
    mix64(origin_seed ^ mix64(stream_index.wrapping_add(0x6A09_E667_F3BC_C909)))
}

/// Deterministic random stream. Normal variates use the ziggurat sampler of
/// `rand_distr::StandardNormal`; the generator is ChaCha8.
#[derive(Debug, Clone)]
pub struct RandomStream {
    rng: ChaCha8Rng,
    origin_seed: u64,
    stream_index: u64,
}

pub fn derive_stream(origin_seed: u64, stream_index: u64) -> RandomStream {
    RandomStream {
        rng: ChaCha8Rng::seed_from_u64(stream_seed(origin_seed, stream_index)),
        origin_seed,
        stream_index,
    }
}

impl RandomStream {
    pub fn origin_seed(&self) -> u64 {
        self.origin_seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// The seed this stream was built from; children derive from it.
    pub fn seed(&self) -> u64 {
        stream_seed(self.origin_seed, self.stream_index)
    }

    /// Child stream keyed by `index`, independent of how far this stream has
    /// been consumed.
    pub fn child(&self, index: u64) -> RandomStream {
        derive_stream(self.seed(), index)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `[0, n)`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Draws an index from the distribution `probs`.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.uniform();
        let mut cum = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            cum += p;
            if u < cum {
                return i;
            }
        }
        last_positive
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.rng);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lse_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[5.0]).unwrap(), 5.0);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(matches!(log_sum_exp(&[]), Err(DistError::EmptyVector)));
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&[3f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
        let q = softmax(&[-4.2, -4.2, -4.2]).unwrap();
        assert!(q.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
        let r = softmax_probs(&[700.0, -700.0, 0.0]).unwrap();
        assert!((r[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(1e6), 1.0);
        assert_eq!(sigmoid(-1e6), 0.0);
        assert!((sigmoid(3f64.ln()) - 0.75).abs() < 1e-15);
        for z in [-30.0, -2.5, -0.1, 0.7, 4.0, 19.0] {
            assert!((sigmoid(-z) - (1.0 - sigmoid(z))).abs() <= f64::EPSILON);
        }
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let mut a = derive_stream(42, 0);
        let mut b = derive_stream(42, 0);
        let xs: Vec<f64> = (0..100).map(|_| a.normal()).collect();
        let ys: Vec<f64> = (0..100).map(|_| b.normal()).collect();
        assert_eq!(xs, ys);
        let mut c = derive_stream(42, 1);
        assert_ne!(xs[0], c.normal());
    }

    #[test]
    fn degenerate_categorical() {
        let mut s = derive_stream(7, 3);
        assert!((0..1000).all(|_| s.categorical(&[1.0, 0.0]) == 0));
        assert!((0..1000).all(|_| s.categorical(&[0.0, 0.0, 1.0]) == 2));
    }

    #[test]
    fn categorical_frequencies() {
        let target = [0.1, 0.25, 0.05, 0.6];
        let n = 100_000;
        let mut s = derive_stream(11, 0);
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[s.categorical(&target)] += 1;
        }
        for (c, p) in counts.iter().zip(target) {
            let freq = *c as f64 / n as f64;
            let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
            assert!((freq - p).abs() < tol, "freq {freq} vs {p}");
        }
    }

    #[test]
    fn prob_vector_validation() {
        assert!(ProbVector::new(vec![1.0]).is_err());
        assert!(ProbVector::new(vec![0.6, 0.6]).is_err());
        assert!(ProbVector::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::new(vec![0.3, 0.7]).is_ok());
    }

    #[test]
    fn variance_helpers() {
        assert_eq!(sample_variance(&[1.0]), None);
        assert!((sample_variance(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(mean(&[1e16, 1.0, -1e16]), 1.0 / 3.0);
    }
}
