//! Synthetic populations with known Bayes class-probabilities, plus dense CSV
//! and sparse multilabel ingestion.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DistError, Result};
use crate::numkit::{
    dot, sigmoid, softmax, DenseMatrix, LogitVector, ProbVector, RandomStream,
};

/// Features, labels, and optionally the true class-probabilities `p*(x)` of
/// every example.
#[derive(Debug, Clone, PartialEq)]
pub struct BayesAnnotatedDataset {
    features: DenseMatrix,
    labels: Vec<usize>,
    bayes_probs: Option<Vec<ProbVector>>,
    bayes_logits: Option<Vec<LogitVector>>,
    num_classes: usize,
}

impl BayesAnnotatedDataset {
    pub fn new(
        features: DenseMatrix,
        labels: Vec<usize>,
        bayes_probs: Option<Vec<ProbVector>>,
        num_classes: usize,
    ) -> Result<Self> {
        if features.rows() == 0 || features.cols() == 0 {
            return Err(DistError::param("dataset needs N >= 1 and d >= 1"));
        }
        if num_classes < 2 {
            return Err(DistError::param("dataset needs at least two classes"));
        }
        if labels.len() != features.rows() {
            return Err(DistError::Dimension {
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(DistError::LabelOutOfRange { label, num_classes });
        }
        if let Some(probs) = &bayes_probs {
            if probs.len() != labels.len() {
                return Err(DistError::Dimension {
                    expected: labels.len(),
                    got: probs.len(),
                });
            }
            if let Some(p) = probs.iter().find(|p| p.len() != num_classes) {
                return Err(DistError::Dimension {
                    expected: num_classes,
                    got: p.len(),
                });
            }
        }
        Ok(BayesAnnotatedDataset {
            features,
            labels,
            bayes_probs,
            bayes_logits: None,
            num_classes,
        })
    }

    /// Attaches exact posterior scores whose softmax is `bayes_probs`.
    pub fn with_bayes_logits(mut self, logits: Vec<LogitVector>) -> Result<Self> {
        if logits.len() != self.len() {
            return Err(DistError::Dimension {
                expected: self.len(),
                got: logits.len(),
            });
        }
        if let Some(s) = logits.iter().find(|s| s.len() != self.num_classes) {
            return Err(DistError::Dimension {
                expected: self.num_classes,
                got: s.len(),
            });
        }
        self.bayes_logits = Some(logits);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn x(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn bayes_probs(&self) -> Option<&[ProbVector]> {
        self.bayes_probs.as_deref()
    }

    pub fn bayes_logits(&self) -> Option<&[LogitVector]> {
        self.bayes_logits.as_deref()
    }

    pub fn require_bayes(&self, who: &str) -> Result<&[ProbVector]> {
        self.bayes_probs()
            .ok_or_else(|| DistError::MissingBayes(format!("{who} requires annotated data")))
    }

    /// Examples at the given indices, in that order.
    pub fn subset(&self, idx: &[usize]) -> BayesAnnotatedDataset {
        BayesAnnotatedDataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            bayes_probs: self
                .bayes_probs
                .as_ref()
                .map(|p| idx.iter().map(|&i| p[i].clone()).collect()),
            bayes_logits: self
                .bayes_logits
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i].clone()).collect()),
            num_classes: self.num_classes,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    TwoGaussians,
    Slab2d,
    MulticlassMixture,
}

/// Declarative description of a synthetic sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub dim: usize,
    pub num_classes: usize,
    /// Distance between the two class means (two_gaussians only).
    pub separation: f64,
    pub sample_count: usize,
    pub seed: u64,
    /// Radius of the sphere holding the mixture means.
    #[serde(default = "default_radius")]
    pub radius: f64,
}

pub fn default_radius() -> f64 {
    3.0
}

/// A data-generating distribution with known `p*`.
pub trait Population: Sync {
    fn dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn sample(&self, n: usize, stream: &mut RandomStream) -> Result<BayesAnnotatedDataset>;
}

fn draw_label(stream: &mut RandomStream, probs: &[f64]) -> usize {
    stream.categorical(probs)
}

/// Equal-prior mixture of `N(μ, I)` and `N(−μ, I)` with `μ ∝ (1, …, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoGaussians {
    mean: Vec<f64>,
    theta: Vec<f64>,
    separation: f64,
}

impl TwoGaussians {
    pub fn new(dim: usize, separation: f64) -> Result<Self> {
        if dim < 1 {
            return Err(DistError::param("two_gaussians needs dim >= 1"));
        }
        if !(separation > 0.0 && separation.is_finite()) {
            return Err(DistError::param(format!(
                "two_gaussians needs separation > 0, got {separation}"
            )));
        }
        let m = separation / 2.0 / (dim as f64).sqrt();
        let mean = vec![m; dim];
        let theta = mean.iter().map(|v| 2.0 * v).collect();
        Ok(TwoGaussians {
            mean,
            theta,
            separation,
        })
    }

    /// Separation at which the means are exactly `±(1, …, 1)`.
    pub fn unit_mean_separation(dim: usize) -> f64 {
        2.0 * (dim as f64).sqrt()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `θ*` with `p*(y = 1 | x) = σ(θ*ᵀx)`.
    pub fn theta_star(&self) -> &[f64] {
        &self.theta
    }

    pub fn separation(&self) -> f64 {
        self.separation
    }

    pub fn posterior(&self, x: &[f64]) -> [f64; 2] {
        let z = dot(&self.theta, x);
        [sigmoid(-z), sigmoid(z)]
    }
}

impl Population for TwoGaussians {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, stream: &mut RandomStream) -> Result<BayesAnnotatedDataset> {
        let d = self.dim();
        let mut features = DenseMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            let sign = if stream.bernoulli(0.5) { 1.0 } else { -1.0 };
            let row = features.row_mut(i);
            for (v, m) in row.iter_mut().zip(&self.mean) {
                *v = sign * m + stream.normal();
            }
            let z = dot(&self.theta, row);
            let p = [sigmoid(-z), sigmoid(z)];
            labels.push(draw_label(stream, &p));
            probs.push(ProbVector::new(p.to_vec())?);
            logits.push(LogitVector::new(vec![0.0, z])?);
        }
        BayesAnnotatedDataset::new(features, labels, Some(probs), 2)?.with_bayes_logits(logits)
    }
}

/// `x ~ N(0, I₂)`, `η(x) = σ(2(‖x‖∞ − 0.5))`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Slab2d;

impl Slab2d {
    pub fn eta(x: &[f64]) -> f64 {
        let inf = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        sigmoid(2.0 * (inf - 0.5))
    }
}

impl Population for Slab2d {
    fn dim(&self) -> usize {
        2
    }

    fn num_classes(&self) -> usize {
        2
    }

    fn sample(&self, n: usize, stream: &mut RandomStream) -> Result<BayesAnnotatedDataset> {
        let mut features = DenseMatrix::zeros(n, 2);
        let mut labels = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let row = features.row_mut(i);
            row[0] = stream.normal();
            row[1] = stream.normal();
            let eta = Slab2d::eta(row);
            let p = [1.0 - eta, eta];
            labels.push(draw_label(stream, &p));
            probs.push(ProbVector::new(p.to_vec())?);
        }
        BayesAnnotatedDataset::new(features, labels, Some(probs), 2)
    }
}

/// Equal-prior Gaussian mixture with identity covariance and one mean per
/// class.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    means: Vec<Vec<f64>>,
}

impl GaussianMixture {
    pub fn with_means(means: Vec<Vec<f64>>) -> Result<Self> {
        if means.len() < 2 {
            return Err(DistError::param("mixture needs at least two classes"));
        }
        let d = means[0].len();
        if d == 0 {
            return Err(DistError::param("mixture needs dim >= 1"));
        }
        if let Some(m) = means.iter().find(|m| m.len() != d) {
            return Err(DistError::Dimension {
                expected: d,
                got: m.len(),
            });
        }
        Ok(GaussianMixture { means })
    }

    /// Means drawn uniformly on the sphere of the given radius.
    pub fn random(
        dim: usize,
        num_classes: usize,
        radius: f64,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(DistError::param("mixture needs at least two classes"));
        }
        if dim < 1 || !(radius > 0.0) {
            return Err(DistError::param("mixture needs dim >= 1 and radius > 0"));
        }
        let means = (0..num_classes)
            .map(|_| loop {
                let v: Vec<f64> = (0..dim).map(|_| stream.normal()).collect();
                let norm = dot(&v, &v).sqrt();
                if norm > 1e-12 {
                    break v.iter().map(|c| c * radius / norm).collect();
                }
            })
            .collect();
        Self::with_means(means)
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// Discriminant scores `μ_yᵀx − ‖μ_y‖²/2`; their softmax is `p*(x)`.
    pub fn posterior_logits(&self, x: &[f64]) -> Vec<f64> {
        self.means
            .iter()
            .map(|m| dot(m, x) - 0.5 * dot(m, m))
            .collect()
    }

    pub fn posterior(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.posterior_logits(x)).expect("non-empty logits")
    }
}

impl Population for GaussianMixture {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn num_classes(&self) -> usize {
        self.means.len()
    }

    fn sample(&self, n: usize, stream: &mut RandomStream) -> Result<BayesAnnotatedDataset> {
        let d = self.dim();
        let l = self.num_classes();
        let mut features = DenseMatrix::zeros(n, d);
        let mut labels = Vec::with_capacity(n);
        let mut probs = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n);
        for i in 0..n {
            let component = stream.below(l);
            let row = features.row_mut(i);
            for (v, m) in row.iter_mut().zip(&self.means[component]) {
                *v = m + stream.normal();
            }
            let s = self.posterior_logits(row);
            let p = softmax(&s)?;
            labels.push(draw_label(stream, &p));
            probs.push(ProbVector::new(p)?);
            logits.push(LogitVector::new(s)?);
        }
        BayesAnnotatedDataset::new(features, labels, Some(probs), l)?.with_bayes_logits(logits)
    }
}

/// A population concentrated on one instance `x₀` with posterior `p*`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinglePoint {
    pub x: Vec<f64>,
    pub p_star: ProbVector,
}

impl Population for SinglePoint {
    fn dim(&self) -> usize {
        self.x.len()
    }

    fn num_classes(&self) -> usize {
        self.p_star.len()
    }

    fn sample(&self, n: usize, stream: &mut RandomStream) -> Result<BayesAnnotatedDataset> {
        let d = self.dim();
        let mut data = Vec::with_capacity(n * d);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            data.extend_from_slice(&self.x);
            labels.push(draw_label(stream, &self.p_star));
        }
        BayesAnnotatedDataset::new(
            DenseMatrix::from_vec(n, d, data)?,
            labels,
            Some(vec![self.p_star.clone(); n]),
            self.num_classes(),
        )
    }
}

fn check_kind(spec: &SyntheticSpec, kind: SyntheticKind) -> Result<()> {
    if spec.kind != kind {
        return Err(DistError::param(format!(
            "expected a {kind:?} spec, got {:?}",
            spec.kind
        )));
    }
    Ok(())
}

pub fn gen_two_gaussians(
    spec: &SyntheticSpec,
    stream: &mut RandomStream,
) -> Result<BayesAnnotatedDataset> {
    check_kind(spec, SyntheticKind::TwoGaussians)?;
    if spec.num_classes != 2 {
        return Err(DistError::param("two_gaussians is binary"));
    }
    TwoGaussians::new(spec.dim, spec.separation)?.sample(spec.sample_count, stream)
}

pub fn gen_slab2d(n: usize, stream: &mut RandomStream) -> Result<BayesAnnotatedDataset> {
    if n < 1 {
        return Err(DistError::param("slab2d needs n >= 1"));
    }
    Slab2d.sample(n, stream)
}

/// Draws the class means from `stream`, then the sample.
pub fn gen_multiclass_mixture(
    spec: &SyntheticSpec,
    stream: &mut RandomStream,
) -> Result<BayesAnnotatedDataset> {
    check_kind(spec, SyntheticKind::MulticlassMixture)?;
    let mixture = GaussianMixture::random(spec.dim, spec.num_classes, spec.radius, stream)?;
    mixture.sample(spec.sample_count, stream)
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> DistError {
    DistError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| DistError::io(path, e))
}

/// Reads `x₁,…,x_d,label` rows (no header). The class count is one more than
/// the largest label, and at least two.
pub fn load_dense_csv(path: impl AsRef<Path>) -> Result<BayesAnnotatedDataset> {
    let path = path.as_ref();
    parse_dense_csv(&read(path)?, None, path)
}

/// Like [`load_dense_csv`] but with a declared class count; larger labels are
/// errors.
pub fn load_dense_csv_with_classes(
    path: impl AsRef<Path>,
    num_classes: usize,
) -> Result<BayesAnnotatedDataset> {
    let path = path.as_ref();
    parse_dense_csv(&read(path)?, Some(num_classes), path)
}

pub fn parse_dense_csv(
    text: &str,
    num_classes: Option<usize>,
    path: &Path,
) -> Result<BayesAnnotatedDataset> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() < 2 {
            return Err(parse_err(path, lineno, "need at least one feature and a label"));
        }
        match width {
            None => width = Some(cells.len()),
            Some(w) if w != cells.len() => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected {w} columns, found {}", cells.len()),
                ))
            }
            _ => {}
        }
        let (label_cell, feature_cells) = cells.split_last().expect("len >= 2");
        let row = feature_cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| {
                        parse_err(path, lineno, format!("column {}: bad feature {cell:?}", c + 1))
                    })
            })
            .collect::<Result<Vec<f64>>>()?;
        let label: usize = label_cell
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad label {label_cell:?}")))?;
        if let Some(l) = num_classes {
            if label >= l {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("label {label} out of range for {l} classes"),
                ));
            }
        }
        rows.push(row);
        labels.push(label);
    }
    if rows.is_empty() {
        return Err(parse_err(path, 0, "empty file"));
    }
    let l = num_classes.unwrap_or_else(|| labels.iter().max().map_or(2, |m| (m + 1).max(2)));
    BayesAnnotatedDataset::new(DenseMatrix::from_rows(&rows)?, labels, None, l)
}

/// One line of a sparse multilabel file.
#[derive(Debug, Clone, PartialEq)]
pub struct MultilabelRecord {
    /// Sorted, duplicate-free.
    pub labels: Vec<usize>,
    pub features: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultilabelData {
    pub num_features: usize,
    pub num_labels: usize,
    pub records: Vec<MultilabelRecord>,
}

/// Reads the `N d L` header format. `index_base` (0 or 1) is subtracted from
/// every label and feature index.
pub fn load_multilabel_sparse(path: impl AsRef<Path>, index_base: usize) -> Result<MultilabelData> {
    let path = path.as_ref();
    parse_multilabel_sparse(&read(path)?, index_base, path)
}

pub fn parse_multilabel_sparse(text: &str, index_base: usize, path: &Path) -> Result<MultilabelData> {
    if index_base > 1 {
        return Err(DistError::param("index base must be 0 or 1"));
    }
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 0, "empty file"))?;
    let nums: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| parse_err(path, 1, "header must be `N d L`"))?;
    let [n, d, l] = nums[..] else {
        return Err(parse_err(path, 1, "header must be `N d L`"));
    };
    let rebase = |raw: &str, what: &str, lineno: usize| -> Result<usize> {
        let v: usize = raw
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad {what} index {raw:?}")))?;
        v.checked_sub(index_base)
            .ok_or_else(|| parse_err(path, lineno, format!("{what} index {v} below base")))
    };

    let mut records = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let mut tokens = line.split_whitespace().peekable();
        let mut labels = Vec::new();
        if let Some(first) = tokens.peek() {
            if !first.contains(':') {
                for raw in first.split(',').filter(|s| !s.is_empty()) {
                    let y = rebase(raw, "label", lineno)?;
                    if y >= l {
                        return Err(parse_err(
                            path,
                            lineno,
                            format!("label {y} out of range for {l} labels"),
                        ));
                    }
                    labels.push(y);
                }
                tokens.next();
            }
        }
        labels.sort_unstable();
        labels.dedup();
        let mut features = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno, format!("bad feature token {tok:?}")))?;
            let j = rebase(idx, "feature", lineno)?;
            if j >= d {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("feature index {j} out of range for d = {d}"),
                ));
            }
            let v: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(path, lineno, format!("bad feature value {val:?}")))?;
            features.push((j, v));
        }
        records.push(MultilabelRecord { labels, features });
    }
    if records.len() != n {
        return Err(parse_err(
            path,
            1,
            format!("header declares {n} records, body has {}", records.len()),
        ));
    }
    Ok(MultilabelData {
        num_features: d,
        num_labels: l,
        records,
    })
}

/// One multiclass example per (record, label) pair; features are densified
/// and shared. Records without labels produce nothing.
pub fn expand_multilabel_to_multiclass(data: &MultilabelData) -> Result<BayesAnnotatedDataset> {
    let d = data.num_features;
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for rec in &data.records {
        if rec.labels.is_empty() {
            continue;
        }
        let mut row = vec![0.0; d];
        for &(j, v) in &rec.features {
            row[j] = v;
        }
        for &y in &rec.labels {
            features.extend_from_slice(&row);
            labels.push(y);
        }
    }
    if labels.is_empty() {
        return Err(DistError::param(
            "expansion produced no examples: every record is label-free",
        ));
    }
    let n = labels.len();
    BayesAnnotatedDataset::new(
        DenseMatrix::from_vec(n, d, features)?,
        labels,
        None,
        data.num_labels.max(2),
    )
}
