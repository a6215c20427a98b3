//! Evaluation metrics and cross-draw statistics of risk estimators.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::Serialize;

use crate::datagen::{BayesAnnotatedDataset, Population};
use crate::error::{DistError, Result};
use crate::losses::loss_vector;
use crate::models::Predictor;
use crate::numkit::{
    argmax, clamp_prob, kahan_sum, mean, sample_variance, standard_error, ProbVector, RandomStream,
    PROB_FLOOR,
};
use crate::teachers::{teacher_bias_variance, TeacherBiasVariance, TeacherOutput};

/// Named metric values with the counts they were computed over.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub values: IndexMap<String, f64>,
    pub num_examples: usize,
    pub num_classes: usize,
}

impl MetricReport {
    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(DistError::param(format!("metric {name} is not finite")));
        }
        self.values.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DistError::Dimension { expected, got });
    }
    Ok(())
}

/// Ranks starting at 1 with tied values sharing their mean rank, doubled so
/// they stay integral.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let doubled = (i + 1 + j) as u64;
        order[i..j].iter().for_each(|&k| ranks[k] = doubled);
        i = j;
    }
    ranks
}

fn binary_labels(labels: &[usize]) -> Result<(u64, u64)> {
    let mut pos = 0u64;
    for &y in labels {
        match y {
            0 => {}
            1 => pos += 1,
            _ => {
                return Err(DistError::LabelOutOfRange {
                    label: y,
                    num_classes: 2,
                })
            }
        }
    }
    Ok((pos, labels.len() as u64 - pos))
}

/// Mann–Whitney AUC with ties credited one half, via midranks.
pub fn auc_roc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_len(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(DistError::param("NaN score"));
    }
    let (pos, neg) = binary_labels(labels)?;
    if pos == 0 || neg == 0 {
        return Err(DistError::AucUndefined);
    }
    let ranks = doubled_midranks(scores);
    let rank_sum: u64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let doubled_u = rank_sum - pos * (pos + 1);
    Ok(doubled_u as f64 / (2 * pos * neg) as f64)
}

/// Mean of `−ln p_{y_n}` with probabilities clamped at 1e-12.
pub fn log_loss(probs: &[ProbVector], labels: &[usize]) -> Result<f64> {
    check_len(probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(DistError::EmptyVector);
    }
    let terms = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| {
            p.get(y)
                .map(|&v| -clamp_prob(v).ln())
                .ok_or(DistError::LabelOutOfRange {
                    label: y,
                    num_classes: p.len(),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean(&terms))
}

/// Expected calibration error over equal-width confidence bins on (0, 1].
pub fn ece(probs: &[ProbVector], labels: &[usize], num_bins: usize) -> Result<f64> {
    check_len(probs.len(), labels.len())?;
    if num_bins == 0 {
        return Err(DistError::param("ece needs at least one bin"));
    }
    if probs.is_empty() {
        return Err(DistError::EmptyVector);
    }
    let mut count = vec![0usize; num_bins];
    let mut correct = vec![0usize; num_bins];
    let mut conf: Vec<Vec<f64>> = vec![Vec::new(); num_bins];
    for (p, &y) in probs.iter().zip(labels) {
        let k = p.argmax();
        let c = p[k];
        let b = ((c * num_bins as f64).ceil() as usize).clamp(1, num_bins) - 1;
        count[b] += 1;
        correct[b] += usize::from(k == y);
        conf[b].push(c);
    }
    let n = probs.len() as f64;
    let total = (0..num_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            conf[b].sort_by(f64::total_cmp);
            let gap = correct[b] as f64 / nb - kahan_sum(&conf[b]) / nb;
            nb / n * gap.abs()
        })
        .sum();
    Ok(total)
}

/// Whether `y` is among the `k` highest scores, ties going to lower indices.
pub fn in_top_k(scores: &[f64], y: usize, k: usize) -> bool {
    let sy = scores[y];
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > sy || (s == sy && j < y))
        .count();
    ahead < k
}

/// Number of rows whose label lands in the top `k`.
pub fn top_k_hits<S: AsRef<[f64]>>(scores: &[S], labels: &[usize], k: usize) -> Result<usize> {
    check_len(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(DistError::EmptyVector);
    }
    let mut hits = 0;
    for (row, &y) in scores.iter().zip(labels) {
        let row = row.as_ref();
        if k == 0 || k > row.len() {
            return Err(DistError::param(format!("k = {k} must lie in 1..={}", row.len())));
        }
        if y >= row.len() {
            return Err(DistError::LabelOutOfRange {
                label: y,
                num_classes: row.len(),
            });
        }
        hits += usize::from(in_top_k(row, y, k));
    }
    Ok(hits)
}

/// Mean of `|{y_n} ∩ top_k| / k`.
pub fn precision_at_k<S: AsRef<[f64]>>(scores: &[S], labels: &[usize], k: usize) -> Result<f64> {
    let hits = top_k_hits(scores, labels, k)?;
    Ok(hits as f64 / (scores.len() * k) as f64)
}

/// Fraction of rows whose label misses the top `k`.
pub fn top_k_loss<S: AsRef<[f64]>>(scores: &[S], labels: &[usize], k: usize) -> Result<f64> {
    let hits = top_k_hits(scores, labels, k)?;
    Ok((scores.len() - hits) as f64 / scores.len() as f64)
}

/// Precision@k against label sets.
pub fn precision_at_k_multilabel<S: AsRef<[f64]>>(scores: &[S], label_sets: &[Vec<usize>], k: usize) -> Result<f64> {
    check_len(scores.len(), label_sets.len())?;
    if scores.is_empty() {
        return Err(DistError::EmptyVector);
    }
    let mut total = 0usize;
    for (row, set) in scores.iter().zip(label_sets) {
        let row = row.as_ref();
        if k == 0 || k > row.len() {
            return Err(DistError::param(format!("k = {k} must lie in 1..={}", row.len())));
        }
        total += set.iter().filter(|&&y| y < row.len() && in_top_k(row, y, k)).count();
    }
    Ok(total as f64 / (scores.len() * k) as f64)
}

/// Mean `KL(p* ‖ p)`, with `0·ln 0 = 0` and `p` floored at 1e-12.
pub fn kl_to_bayes(probs: &[ProbVector], dataset: &BayesAnnotatedDataset) -> Result<f64> {
    let bayes = dataset.require_bayes("KL to Bayes")?;
    check_len(bayes.len(), probs.len())?;
    let terms: Vec<f64> = probs
        .iter()
        .zip(bayes)
        .map(|(p, b)| {
            b.iter()
                .zip(p.iter())
                .filter(|(&bv, _)| bv > 0.0)
                .map(|(&bv, &pv)| bv * (bv / pv.max(PROB_FLOOR)).ln())
                .sum()
        })
        .collect();
    Ok(mean(&terms))
}

/// Fraction of rows whose argmax matches the label.
pub fn accuracy<S: AsRef<[f64]>>(scores: &[S], labels: &[usize]) -> Result<f64> {
    check_len(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(DistError::EmptyVector);
    }
    let hits = scores.iter().zip(labels).filter(|(s, &y)| argmax(s.as_ref()) == y).count();
    Ok(hits as f64 / scores.len() as f64)
}

/// Spearman rank correlation with midranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(DistError::param("spearman needs at least two points"));
    }
    let ra: Vec<f64> = doubled_midranks(a).into_iter().map(|r| r as f64).collect();
    let rb: Vec<f64> = doubled_midranks(b).into_iter().map(|r| r as f64).collect();
    pearson(&ra, &rb)
}

pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(DistError::param("correlation of a constant series"));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Maps an instance to its loss vector `ℓ(f(x))`.
pub trait LossField: Sync {
    fn losses(&self, x: &[f64]) -> Result<Vec<f64>>;
}

/// Softmax cross-entropy losses of a fixed predictor.
pub struct PredictorLosses<'a, P: ?Sized>(pub &'a P);

impl<P: Predictor + ?Sized> LossField for PredictorLosses<'_, P> {
    fn losses(&self, x: &[f64]) -> Result<Vec<f64>> {
        loss_vector(&self.0.predict_logits(x)?)
    }
}

/// The same loss vector at every instance.
pub struct ConstantLosses(pub Vec<f64>);

impl LossField for ConstantLosses {
    fn losses(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// `R(f) = E_x[p*(x)ᵀ ℓ(f(x))]` by Monte Carlo, with its standard error.
pub fn population_risk_mc(
    field: &dyn LossField,
    population: &dyn Population,
    samples: usize,
    stream: &RandomStream,
) -> Result<(f64, f64)> {
    const CHUNK: usize = 10_000;
    if samples < 2 {
        return Err(DistError::param("population risk needs at least two samples"));
    }
    let chunks = samples.div_ceil(CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(samples - c * CHUNK);
            let ds = population.sample(n, &mut stream.child(c as u64))?;
            bayes_terms(field, &ds)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let terms: Vec<f64> = parts.concat();
    Ok((kahan_sum(&terms) / terms.len() as f64, standard_error(&terms)))
}

fn bayes_terms(field: &dyn LossField, ds: &BayesAnnotatedDataset) -> Result<Vec<f64>> {
    let p = ds.require_bayes("population risk")?;
    (0..ds.len())
        .map(|i| Ok(dotp(&p[i], &field.losses(ds.x(i))?)))
        .collect()
}

fn dotp(p: &[f64], l: &[f64]) -> f64 {
    p.iter().zip(l).map(|(a, b)| a * b).sum()
}

/// Cross-draw mean and spread of one estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub mean: f64,
    pub variance: f64,
    /// Standard error of `mean`.
    pub mean_se: f64,
}

impl EstimatorSummary {
    fn of(values: &[f64]) -> Result<Self> {
        Ok(EstimatorSummary {
            mean: kahan_sum(values) / values.len() as f64,
            variance: sample_variance(values).ok_or_else(|| DistError::param("need at least two draws"))?,
            mean_se: standard_error(values),
        })
    }
}

/// One-hot versus Bayes-distilled risk estimates over fresh samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorStatistics {
    pub one_hot: EstimatorSummary,
    pub bayes_distilled: EstimatorSummary,
    /// `Var(one_hot) − Var(bayes_distilled)`.
    pub variance_gap: f64,
    /// Standard error of `variance_gap` from the paired draws.
    pub variance_gap_se: f64,
    pub population_risk_mc: f64,
    pub population_risk_se: f64,
    #[serde(skip)]
    pub draws: Vec<(f64, f64)>,
}

impl EstimatorStatistics {
    /// Distance of an estimator mean from the population risk in units of
    /// the combined standard error.
    pub fn bias_z(&self, summary: &EstimatorSummary) -> f64 {
        let se = (summary.mean_se.powi(2) + self.population_risk_se.powi(2)).sqrt();
        (summary.mean - self.population_risk_mc).abs() / se.max(f64::MIN_POSITIVE)
    }
}

/// Draws `trials` samples of size `n`, evaluating both estimators of the
/// fixed loss field on each. Draw `t` uses `stream.child(t)`, the population
/// estimate `stream.child(u32::MAX)`; `population_samples = 0` skips it.
pub fn estimator_statistics(
    field: &dyn LossField,
    population: &dyn Population,
    n: usize,
    trials: usize,
    population_samples: usize,
    stream: &RandomStream,
) -> Result<EstimatorStatistics> {
    if trials < 2 {
        return Err(DistError::param("estimator statistics need at least two draws"));
    }
    if n == 0 {
        return Err(DistError::param("sample size must be >= 1"));
    }
    let draws = (0..trials)
        .into_par_iter()
        .map(|t| {
            let ds = population.sample(n, &mut stream.child(t as u64))?;
            let p = ds.require_bayes("Bayes-distilled risk")?;
            let mut one_hot = Vec::with_capacity(n);
            let mut bayes = Vec::with_capacity(n);
            for i in 0..n {
                let l = field.losses(ds.x(i))?;
                one_hot.push(l[ds.labels()[i]]);
                bayes.push(dotp(&p[i], &l));
            }
            Ok((kahan_sum(&one_hot) / n as f64, kahan_sum(&bayes) / n as f64))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;

    let oh: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let bd: Vec<f64> = draws.iter().map(|d| d.1).collect();
    let one_hot = EstimatorSummary::of(&oh)?;
    let bayes_distilled = EstimatorSummary::of(&bd)?;
    let (gap, gap_se) = paired_variance_gap(&oh, &bd);
    let (population_risk_mc, population_risk_se) = if population_samples > 0 {
        population_risk_mc(field, population, population_samples, &stream.child(u32::MAX as u64))?
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(EstimatorStatistics {
        one_hot,
        bayes_distilled,
        variance_gap: gap,
        variance_gap_se: gap_se,
        population_risk_mc,
        population_risk_se,
        draws,
    })
}

/// `Var(a) − Var(b)` on paired draws and its delta-method standard error.
pub fn paired_variance_gap(a: &[f64], b: &[f64]) -> (f64, f64) {
    let t = a.len() as f64;
    let (ma, mb) = (mean(a), mean(b));
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| ((x - ma).powi(2) - (y - mb).powi(2)) * t / (t - 1.0))
        .collect();
    (mean(&diffs), standard_error(&diffs))
}

/// Closed-form variance of the one-hot and Bayes-distilled estimates at
/// sample size `n` for a population concentrated on a single instance.
pub fn single_point_variances(p_star: &[f64], losses: &[f64], n: usize) -> Result<(f64, f64)> {
    check_len(p_star.len(), losses.len())?;
    if n == 0 {
        return Err(DistError::param("sample size must be >= 1"));
    }
    let m = dotp(p_star, losses);
    let second: f64 = p_star.iter().zip(losses).map(|(p, l)| p * l * l).sum();
    Ok(((second - m * m) / n as f64, 0.0))
}

/// Absolute slack for comparisons whose standard errors vanish.
const ROUNDING: f64 = 1e-12;

/// Monte-Carlo estimates of every term in the distilled-risk bias/variance
/// bound for one teacher and one fixed predictor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasVarianceReport {
    /// `E[(R̃ − R)²]`.
    pub distilled_sq_error: f64,
    pub distilled_sq_error_se: f64,
    /// `E[(R̂* − R)²]`.
    pub bayes_sq_error: f64,
    pub bayes_sq_error_se: f64,
    /// Standard error of the paired difference of the two squared errors.
    pub sq_error_gap_se: f64,
    /// `V[p^tᵀ ℓ(f(x))]` pooled over instances and teacher draws.
    pub term_variance: f64,
    pub sample_size: usize,
    /// `max ‖ℓ(f(x))‖₂` over every evaluated instance.
    pub loss_norm_bound: f64,
    /// `E‖p^t − p*‖₂`.
    pub mean_teacher_error: f64,
    /// `E‖p^t − p*‖₂²` on the same draws.
    pub teacher_mse: f64,
    pub teacher_mse_se: f64,
    /// Repeated-draw decomposition of teacher MSE on a fixed evaluation set.
    pub decomposition: TeacherBiasVariance,
    pub population_risk: f64,
}

impl BiasVarianceReport {
    /// `V/N + C²·(E‖p^t − p*‖₂)²`.
    pub fn first_bound(&self) -> f64 {
        self.term_variance / self.sample_size as f64 + self.loss_norm_bound.powi(2) * self.mean_teacher_error.powi(2)
    }

    /// `V/N + C²·(‖E p^t − p*‖² + V[p^t])`.
    pub fn second_bound(&self) -> f64 {
        self.term_variance / self.sample_size as f64 + self.loss_norm_bound.powi(2) * self.decomposition.total()
    }

    /// Both inequalities of the chain, each with `slack` standard errors.
    pub fn chain_holds(&self, slack: f64) -> bool {
        let first = self.distilled_sq_error <= self.first_bound() + slack * self.distilled_sq_error_se + ROUNDING;
        let c2 = self.loss_norm_bound.powi(2);
        let se2 = c2 * (self.teacher_mse_se.powi(2) + self.decomposition.total_se.powi(2)).sqrt();
        let second = self.first_bound() <= self.second_bound() + slack * se2 + ROUNDING;
        first && second
    }

    /// `|bias² + variance − direct MSE|` against `slack` standard errors.
    pub fn decomposition_matches(&self, slack: f64) -> bool {
        let se = (self.teacher_mse_se.powi(2) + self.decomposition.total_se.powi(2)).sqrt();
        (self.decomposition.total() - self.teacher_mse).abs() <= slack * se + ROUNDING
    }

    /// `E[(R̂* − R)²] ≤ E[(R̃ − R)²] + slack·SE`.
    pub fn bayes_no_worse(&self, slack: f64) -> bool {
        self.bayes_sq_error <= self.distilled_sq_error + slack * self.sq_error_gap_se + ROUNDING
    }
}

/// Settings for [`bias_variance_report`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasVarianceSetup {
    pub sample_size: usize,
    pub trials: usize,
    pub population_samples: usize,
    /// Size of the fixed set used for the bias/variance decomposition.
    pub eval_size: usize,
    pub eval_trials: usize,
}

/// Draws `trials` samples, each labelled by a fresh teacher realisation, and
/// estimates every quantity of the bias/variance bound for `field`.
pub fn bias_variance_report<T>(
    teacher_factory: T,
    population: &dyn Population,
    field: &dyn LossField,
    setup: &BiasVarianceSetup,
    stream: &RandomStream,
) -> Result<BiasVarianceReport>
where
    T: Fn(&BayesAnnotatedDataset, &mut RandomStream) -> Result<Vec<TeacherOutput>> + Sync,
{
    let BiasVarianceSetup {
        sample_size: n,
        trials,
        population_samples,
        eval_size,
        eval_trials,
    } = *setup;
    if trials < 2 || eval_trials < 2 || n == 0 || eval_size == 0 {
        return Err(DistError::param("bias/variance report needs >= 2 trials and non-empty samples"));
    }
    let (risk, _) = population_risk_mc(field, population, population_samples, &stream.child(u32::MAX as u64))?;

    struct Draw {
        distilled: f64,
        bayes: f64,
        terms: Vec<f64>,
        errors: Vec<f64>,
        max_norm: f64,
    }
    let draws = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut s = stream.child(t as u64);
            let ds = population.sample(n, &mut s)?;
            let p = ds.require_bayes("bias/variance report")?;
            let teacher = teacher_factory(&ds, &mut s)?;
            check_len(n, teacher.len())?;
            let mut terms = Vec::with_capacity(n);
            let mut bayes = Vec::with_capacity(n);
            let mut errors = Vec::with_capacity(n);
            let mut max_norm: f64 = 0.0;
            for i in 0..n {
                let l = field.losses(ds.x(i))?;
                max_norm = max_norm.max(l.iter().map(|v| v * v).sum::<f64>().sqrt());
                terms.push(dotp(&teacher[i].probs, &l));
                bayes.push(dotp(&p[i], &l));
                let e2: f64 = teacher[i].probs.iter().zip(p[i].iter()).map(|(a, b)| (a - b) * (a - b)).sum();
                errors.push(e2.sqrt());
            }
            Ok(Draw {
                distilled: kahan_sum(&terms) / n as f64,
                bayes: kahan_sum(&bayes) / n as f64,
                terms,
                errors,
                max_norm,
            })
        })
        .collect::<Result<Vec<Draw>>>()?;

    let d_sq: Vec<f64> = draws.iter().map(|d| (d.distilled - risk).powi(2)).collect();
    let b_sq: Vec<f64> = draws.iter().map(|d| (d.bayes - risk).powi(2)).collect();
    let gap: Vec<f64> = d_sq.iter().zip(&b_sq).map(|(a, b)| a - b).collect();
    let all_terms: Vec<f64> = draws.iter().flat_map(|d| d.terms.iter().copied()).collect();
    let all_errors: Vec<f64> = draws.iter().flat_map(|d| d.errors.iter().copied()).collect();
    let per_draw_mse: Vec<f64> = draws
        .iter()
        .map(|d| d.errors.iter().map(|e| e * e).sum::<f64>() / n as f64)
        .collect();

    let mut eval_stream = stream.child(u32::MAX as u64 - 1);
    let eval = population.sample(eval_size, &mut eval_stream)?;
    let decomposition = teacher_bias_variance(|s| teacher_factory(&eval, s), &eval, eval_trials, &mut eval_stream)?;

    Ok(BiasVarianceReport {
        distilled_sq_error: mean(&d_sq),
        distilled_sq_error_se: standard_error(&d_sq),
        bayes_sq_error: mean(&b_sq),
        bayes_sq_error_se: standard_error(&b_sq),
        sq_error_gap_se: standard_error(&gap),
        term_variance: sample_variance(&all_terms).unwrap_or(0.0),
        sample_size: n,
        loss_norm_bound: draws.iter().map(|d| d.max_norm).fold(0.0, f64::max),
        mean_teacher_error: mean(&all_errors),
        teacher_mse: mean(&per_draw_mse),
        teacher_mse_se: standard_error(&per_draw_mse),
        decomposition,
        population_risk: risk,
    })
}
