//! Softmax cross-entropy and its distilled, generalised and double-distilled
//! variants, with analytic gradients in the student logits.

use serde::{Deserialize, Serialize};

use crate::datagen::BayesAnnotatedDataset;
use crate::error::{DistError, Result};
use crate::models::Predictor;
use crate::numkit::{
    kahan_sum, log_sum_exp, sample_variance, sigmoid, softmax, PROB_FLOOR,
};
use crate::teachers::TeacherOutput;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeWeightKind {
    Uniform,
    OneMinusProb,
    SigmoidLogit,
}

/// How double distillation weighs the labels inside the generalised softmax.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NegativeWeightScheme {
    pub kind: NegativeWeightKind,
    /// Only read by `SigmoidLogit`.
    pub scale_a: f64,
}

impl NegativeWeightScheme {
    pub const UNIFORM: NegativeWeightScheme = NegativeWeightScheme {
        kind: NegativeWeightKind::Uniform,
        scale_a: 1.0,
    };
    pub const ONE_MINUS_PROB: NegativeWeightScheme = NegativeWeightScheme {
        kind: NegativeWeightKind::OneMinusProb,
        scale_a: 1.0,
    };

    pub fn sigmoid_logit(scale_a: f64) -> Result<Self> {
        if !(scale_a > 0.0 && scale_a.is_finite()) {
            return Err(DistError::param(format!("scale a must be > 0, got {scale_a}")));
        }
        Ok(NegativeWeightScheme {
            kind: NegativeWeightKind::SigmoidLogit,
            scale_a,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskEstimatorKind {
    OneHot,
    Distilled,
    BayesDistilled,
    DoubleDistilled,
}

impl RiskEstimatorKind {
    pub const ALL: [RiskEstimatorKind; 4] = [
        RiskEstimatorKind::OneHot,
        RiskEstimatorKind::Distilled,
        RiskEstimatorKind::BayesDistilled,
        RiskEstimatorKind::DoubleDistilled,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RiskEstimatorKind::OneHot => "one_hot",
            RiskEstimatorKind::Distilled => "distilled",
            RiskEstimatorKind::BayesDistilled => "bayes_distilled",
            RiskEstimatorKind::DoubleDistilled => "double_distilled",
        }
    }
}

/// Sample mean of per-example loss terms with their spread.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskEstimate {
    pub value: f64,
    pub per_example_terms: Vec<f64>,
    /// Unbiased sample variance of the terms; 0 when undefined.
    pub empirical_variance: f64,
    /// False for single-term estimates.
    pub variance_defined: bool,
}

impl RiskEstimate {
    pub fn from_terms(terms: Vec<f64>) -> Result<Self> {
        if terms.is_empty() {
            return Err(DistError::EmptyVector);
        }
        let value = kahan_sum(&terms) / terms.len() as f64;
        let var = sample_variance(&terms);
        Ok(RiskEstimate {
            value,
            empirical_variance: var.unwrap_or(0.0),
            variance_defined: var.is_some(),
            per_example_terms: terms,
        })
    }
}

fn check_label(y: usize, len: usize) -> Result<()> {
    if y >= len {
        return Err(DistError::LabelOutOfRange {
            label: y,
            num_classes: len,
        });
    }
    Ok(())
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DistError::Dimension { expected, got });
    }
    Ok(())
}

/// `−f_y + ln Σ_{y'} e^{f_{y'}}`.
pub fn softmax_xent(y: usize, f: &[f64]) -> Result<f64> {
    check_label(y, f.len())?;
    Ok(log_sum_exp(f)? - f[y])
}

/// Entry `y` is `softmax_xent(y, f)`.
pub fn loss_vector(f: &[f64]) -> Result<Vec<f64>> {
    let lse = log_sum_exp(f)?;
    Ok(f.iter().map(|v| lse - v).collect())
}

/// `pᵀ ℓ(f)`.
pub fn weighted_xent(p: &[f64], f: &[f64]) -> Result<f64> {
    check_len(f.len(), p.len())?;
    let lse = log_sum_exp(f)?;
    Ok(p.iter().zip(f).map(|(w, v)| w * (lse - v)).sum())
}

/// `ln Σ_{y'} P_{y'} e^{f_{y'}} − f_y`, i.e. `ln E_{y'~P} e^{f_{y'} − f_y}`.
/// Can be negative.
pub fn generalized_xent(y: usize, f: &[f64], weights: &[f64]) -> Result<f64> {
    check_len(f.len(), weights.len())?;
    check_label(y, f.len())?;
    Ok(tilted_lse(f, weights)? - f[y])
}

/// `ln Σ_k w_k e^{f_k}` over the support of `w`.
fn tilted_lse(f: &[f64], weights: &[f64]) -> Result<f64> {
    let shifted: Vec<f64> = f
        .iter()
        .zip(weights)
        .filter(|(_, &w)| w > 0.0)
        .map(|(v, w)| v + w.ln())
        .collect();
    if shifted.is_empty() {
        return Err(DistError::param("label distribution P is all zero"));
    }
    log_sum_exp(&shifted)
}

/// `q_k ∝ w_k e^{f_k}`: the weight-tilted softmax.
fn tilted_softmax(f: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    let lse = tilted_lse(f, weights)?;
    Ok(f
        .iter()
        .zip(weights)
        .map(|(v, &w)| if w > 0.0 { (v + w.ln() - lse).exp() } else { 0.0 })
        .collect())
}

/// `Ψ(p^t(x))`, floored at 1e-12 per entry and renormalised to sum one.
pub fn negative_weights(scheme: NegativeWeightScheme, teacher: &TeacherOutput) -> Vec<f64> {
    let l = teacher.probs.len();
    let raw: Vec<f64> = match scheme.kind {
        NegativeWeightKind::Uniform => return vec![1.0 / l as f64; l],
        NegativeWeightKind::OneMinusProb => teacher.probs.iter().map(|p| 1.0 - p).collect(),
        NegativeWeightKind::SigmoidLogit => teacher
            .logits
            .iter()
            .map(|s| sigmoid(-scheme.scale_a * s))
            .collect(),
    };
    let floored: Vec<f64> = raw.into_iter().map(|w| w.max(PROB_FLOOR)).collect();
    let total = kahan_sum(&floored);
    floored.into_iter().map(|w| w / total).collect()
}

/// `Σ_y p^t_y · generalized_xent(y, f, Ψ(p^t))` with one weight vector shared
/// by every positive label.
pub fn double_distill_loss(
    teacher: &TeacherOutput,
    f: &[f64],
    scheme: NegativeWeightScheme,
) -> Result<f64> {
    check_len(f.len(), teacher.probs.len())?;
    let weights = negative_weights(scheme, teacher);
    double_distill_with_weights(&teacher.probs, &weights, f)
}

fn double_distill_with_weights(positives: &[f64], weights: &[f64], f: &[f64]) -> Result<f64> {
    let lse = tilted_lse(f, weights)?;
    Ok(positives.iter().zip(f).map(|(p, v)| p * (lse - v)).sum())
}

/// Per-example supervision for a loss kind.
#[derive(Debug, Clone, Default)]
pub struct LossContext<'a> {
    pub label: Option<usize>,
    /// Soft targets: `p^t` for distilled, `p*` for Bayes-distilled.
    pub probs: Option<&'a [f64]>,
    pub teacher: Option<&'a TeacherOutput>,
    pub scheme: Option<NegativeWeightScheme>,
}

/// A resolved per-example target, ready for repeated loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum LossTarget {
    OneHot(usize),
    /// Distilled and Bayes-distilled targets.
    Soft(Vec<f64>),
    /// Positive smoothing `p^t` and negative weights `Ψ(p^t)`.
    Double { positives: Vec<f64>, weights: Vec<f64> },
}

impl LossTarget {
    pub fn resolve(kind: RiskEstimatorKind, ctx: &LossContext<'_>) -> Result<Self> {
        let mismatch = |what: &str| {
            DistError::MissingTeacher(format!("{} loss needs {what}", kind.name()))
        };
        match kind {
            RiskEstimatorKind::OneHot => ctx.label.map(LossTarget::OneHot).ok_or_else(|| mismatch("a label")),
            RiskEstimatorKind::Distilled | RiskEstimatorKind::BayesDistilled => {
                let p = ctx
                    .probs
                    .or(ctx.teacher.map(|t| t.probs.as_slice()))
                    .ok_or_else(|| mismatch("target probabilities"))?;
                Ok(LossTarget::Soft(p.to_vec()))
            }
            RiskEstimatorKind::DoubleDistilled => {
                let teacher = ctx.teacher.ok_or_else(|| mismatch("a teacher output"))?;
                let scheme = ctx.scheme.ok_or_else(|| mismatch("a negative-weight scheme"))?;
                Ok(LossTarget::Double {
                    positives: teacher.probs.to_vec(),
                    weights: negative_weights(scheme, teacher),
                })
            }
        }
    }

    pub fn num_classes(&self) -> Option<usize> {
        match self {
            LossTarget::OneHot(_) => None,
            LossTarget::Soft(p) => Some(p.len()),
            LossTarget::Double { positives, .. } => Some(positives.len()),
        }
    }

    pub fn loss(&self, f: &[f64]) -> Result<f64> {
        match self {
            LossTarget::OneHot(y) => softmax_xent(*y, f),
            LossTarget::Soft(p) => weighted_xent(p, f),
            LossTarget::Double { positives, weights } => {
                check_len(f.len(), positives.len())?;
                double_distill_with_weights(positives, weights, f)
            }
        }
    }

    /// Loss and its gradient with respect to `f`.
    pub fn loss_and_gradient(&self, f: &[f64]) -> Result<(f64, Vec<f64>)> {
        match self {
            LossTarget::OneHot(y) => {
                check_label(*y, f.len())?;
                let lse = log_sum_exp(f)?;
                let mut g: Vec<f64> = f.iter().map(|v| (v - lse).exp()).collect();
                g[*y] -= 1.0;
                Ok((lse - f[*y], g))
            }
            LossTarget::Soft(p) => {
                check_len(f.len(), p.len())?;
                let lse = log_sum_exp(f)?;
                let mass: f64 = p.iter().sum();
                let loss = p.iter().zip(f).map(|(w, v)| w * (lse - v)).sum();
                let g = f
                    .iter()
                    .zip(p)
                    .map(|(v, w)| mass * (v - lse).exp() - w)
                    .collect();
                Ok((loss, g))
            }
            LossTarget::Double { positives, weights } => {
                check_len(f.len(), positives.len())?;
                let lse = tilted_lse(f, weights)?;
                let q = tilted_softmax(f, weights)?;
                let mass: f64 = positives.iter().sum();
                let loss = positives.iter().zip(f).map(|(p, v)| p * (lse - v)).sum();
                let g = q.iter().zip(positives).map(|(qk, p)| mass * qk - p).collect();
                Ok((loss, g))
            }
        }
    }
}

/// Gradient of the per-example loss of `kind` with respect to the logits.
pub fn loss_gradient(
    kind: RiskEstimatorKind,
    ctx: &LossContext<'_>,
    f: &[f64],
) -> Result<Vec<f64>> {
    Ok(LossTarget::resolve(kind, ctx)?.loss_and_gradient(f)?.1)
}

/// Gradient of [`generalized_xent`]: the `P`-tilted softmax minus `e_y`.
pub fn generalized_xent_gradient(y: usize, f: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    check_len(f.len(), weights.len())?;
    check_label(y, f.len())?;
    let mut q = tilted_softmax(f, weights)?;
    q[y] -= 1.0;
    Ok(q)
}

/// Builds the per-example targets of `kind` over a dataset.
pub fn dataset_targets(
    kind: RiskEstimatorKind,
    dataset: &BayesAnnotatedDataset,
    teacher: Option<&[TeacherOutput]>,
    scheme: Option<NegativeWeightScheme>,
) -> Result<Vec<LossTarget>> {
    let n = dataset.len();
    let missing_teacher =
        || DistError::MissingTeacher(format!("{} risk requires teacher outputs", kind.name()));
    match kind {
        RiskEstimatorKind::OneHot => Ok(dataset.labels().iter().map(|&y| LossTarget::OneHot(y)).collect()),
        RiskEstimatorKind::BayesDistilled => {
            let p = dataset.require_bayes("Bayes-distilled risk")?;
            Ok(p.iter().map(|p| LossTarget::Soft(p.to_vec())).collect())
        }
        RiskEstimatorKind::Distilled | RiskEstimatorKind::DoubleDistilled => {
            let t = teacher.ok_or_else(missing_teacher)?;
            check_len(n, t.len())?;
            t.iter()
                .map(|out| {
                    check_len(dataset.num_classes(), out.probs.len())?;
                    LossTarget::resolve(
                        kind,
                        &LossContext {
                            teacher: Some(out),
                            scheme,
                            ..Default::default()
                        },
                    )
                })
                .collect()
        }
    }
}

/// Evaluates the chosen risk estimator of `model` on `dataset`.
pub fn empirical_risk(
    kind: RiskEstimatorKind,
    dataset: &BayesAnnotatedDataset,
    model: &dyn Predictor,
    teacher: Option<&[TeacherOutput]>,
    scheme: Option<NegativeWeightScheme>,
) -> Result<RiskEstimate> {
    let targets = dataset_targets(kind, dataset, teacher, scheme)?;
    let terms = targets
        .iter()
        .enumerate()
        .map(|(i, t)| t.loss(&model.predict_logits(dataset.x(i))?))
        .collect::<Result<Vec<f64>>>()?;
    RiskEstimate::from_terms(terms)
}

/// `softmax(f) − p`, the distillation gradient for a soft target.
pub fn soft_target_gradient(p: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    check_len(f.len(), p.len())?;
    Ok(softmax(f)?.iter().zip(p).map(|(q, w)| q - w).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::{derive_stream, ProbVector};

    const LN2: f64 = std::f64::consts::LN_2;

    fn t(p: &[f64]) -> TeacherOutput {
        TeacherOutput::from_probs(ProbVector::new(p.to_vec()).unwrap())
    }

    #[test]
    fn softmax_xent_examples() {
        assert!((softmax_xent(0, &[0.0, 0.0]).unwrap() - LN2).abs() < 1e-15);
        let want = (1.0 + (-1f64).exp()).ln();
        assert!((softmax_xent(0, &[1.0, 0.0]).unwrap() - want).abs() < 1e-15);
        assert!((want - 0.313262).abs() < 1e-6);
        assert!((softmax_xent(2, &[7.5; 5]).unwrap() - 5f64.ln()).abs() < 1e-14);
        assert!(softmax_xent(3, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn loss_vector_examples() {
        let v = loss_vector(&[1.0, 0.0]).unwrap();
        assert!((v[0] - (1.0 + (-1f64).exp()).ln()).abs() < 1e-15);
        assert!((v[1] - (1.0 + 1f64.exp()).ln()).abs() < 1e-15);
        let f = [0.3, 2.0, -1.0, 1.9];
        let v = loss_vector(&f).unwrap();
        assert_eq!(crate::numkit::argmax(&f), {
            let mut best = 0;
            for i in 1..v.len() {
                if v[i] < v[best] {
                    best = i;
                }
            }
            best
        });
    }

    #[test]
    fn weighted_xent_examples() {
        let f = [0.4, -1.2, 2.0];
        assert_eq!(weighted_xent(&[0.0, 0.0, 1.0], &f).unwrap(), softmax_xent(2, &f).unwrap());
        assert!((weighted_xent(&[0.5, 0.5], &[0.0, 0.0]).unwrap() - LN2).abs() < 1e-15);
        let p = softmax(&f).unwrap();
        let entropy: f64 = -p.iter().map(|q| q * q.ln()).sum::<f64>();
        assert!((weighted_xent(&p, &f).unwrap() - entropy).abs() < 1e-12);
        assert!(weighted_xent(&[1.0], &f).is_err());
    }

    #[test]
    fn generalized_xent_examples() {
        assert!(generalized_xent(0, &[0.0, 0.0], &[0.5, 0.5]).unwrap().abs() < 1e-15);
        assert_eq!(generalized_xent(1, &[3.0, -2.0, 0.5], &[0.0, 1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(generalized_xent(0, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), -1.0);
        assert!(generalized_xent(0, &[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn negative_weight_examples() {
        let w = negative_weights(NegativeWeightScheme::UNIFORM, &t(&[0.1, 0.2, 0.3, 0.4]));
        assert_eq!(w, vec![0.25; 4]);
        let w = negative_weights(NegativeWeightScheme::ONE_MINUS_PROB, &t(&[1.0, 0.0]));
        assert!(w[0] < 1e-11 && (w[1] - 1.0).abs() < 1e-11);
        let logits = TeacherOutput::from_logits(vec![0.0, 0.0]).unwrap();
        let w = negative_weights(NegativeWeightScheme::sigmoid_logit(1.0).unwrap(), &logits);
        assert_eq!(w, vec![0.5, 0.5]);
    }

    #[test]
    fn sigmoid_scheme_can_silence_several_positives() {
        // Three confident positives out of six labels.
        let teacher = TeacherOutput::from_logits(vec![6.0, 6.0, 6.0, -6.0, -6.0, -6.0]).unwrap();
        let sig = negative_weights(NegativeWeightScheme::sigmoid_logit(1.0).unwrap(), &teacher);
        let omp = negative_weights(NegativeWeightScheme::ONE_MINUS_PROB, &teacher);
        let pos_sig: f64 = sig[..3].iter().sum();
        let pos_omp: f64 = omp[..3].iter().sum();
        assert!(pos_sig < 0.01, "{pos_sig}");
        assert!(pos_omp > 0.3, "{pos_omp}");
    }

    #[test]
    fn double_distill_examples() {
        let f = [0.7, -0.3, 1.1, 0.0];
        let onehot = t(&[0.0, 0.0, 1.0, 0.0]);
        let v = double_distill_loss(&onehot, &f, NegativeWeightScheme::UNIFORM).unwrap();
        assert!((v - (softmax_xent(2, &f).unwrap() - 4f64.ln())).abs() < 1e-12);
        let uni = t(&[0.25; 4]);
        assert!(double_distill_loss(&uni, &[2.0; 4], NegativeWeightScheme::UNIFORM).unwrap().abs() < 1e-15);
        assert!(double_distill_loss(&t(&[0.5, 0.5]), &[0.0, 0.0], NegativeWeightScheme::UNIFORM)
            .unwrap()
            .abs()
            < 1e-15);
    }

    #[test]
    fn gradient_examples() {
        let p = softmax(&[0.2, -0.5, 1.0]).unwrap();
        let g = loss_gradient(
            RiskEstimatorKind::Distilled,
            &LossContext {
                probs: Some(&p),
                ..Default::default()
            },
            &[0.2, -0.5, 1.0],
        )
        .unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let g = loss_gradient(
            RiskEstimatorKind::OneHot,
            &LossContext {
                label: Some(0),
                ..Default::default()
            },
            &[0.0, 0.0],
        )
        .unwrap();
        assert_eq!(g, vec![-0.5, 0.5]);
        assert!(loss_gradient(RiskEstimatorKind::DoubleDistilled, &LossContext::default(), &[0.0, 1.0]).is_err());
        assert!(loss_gradient(RiskEstimatorKind::OneHot, &LossContext::default(), &[0.0, 1.0]).is_err());
    }

    fn finite_diff(loss: impl Fn(&[f64]) -> f64, f: &[f64]) -> Vec<f64> {
        let eps = 1e-5;
        (0..f.len())
            .map(|i| {
                let mut a = f.to_vec();
                let mut b = f.to_vec();
                a[i] += eps;
                b[i] -= eps;
                (loss(&a) - loss(&b)) / (2.0 * eps)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut s = derive_stream(99, 0);
        let l = 5;
        for _ in 0..100 {
            let f: Vec<f64> = (0..l).map(|_| 2.0 * s.normal()).collect();
            let logits: Vec<f64> = (0..l).map(|_| 3.0 * s.normal()).collect();
            let teacher = TeacherOutput::from_logits(logits).unwrap();
            let y = s.below(l);
            let scheme = NegativeWeightScheme::sigmoid_logit(0.5 + s.uniform()).unwrap();
            let ctxs = [
                (RiskEstimatorKind::OneHot, LossContext { label: Some(y), ..Default::default() }),
                (RiskEstimatorKind::Distilled, LossContext { teacher: Some(&teacher), ..Default::default() }),
                (RiskEstimatorKind::BayesDistilled, LossContext { probs: Some(&teacher.probs), ..Default::default() }),
                (RiskEstimatorKind::DoubleDistilled, LossContext { teacher: Some(&teacher), scheme: Some(scheme), ..Default::default() }),
            ];
            for (kind, ctx) in &ctxs {
                let target = LossTarget::resolve(*kind, ctx).unwrap();
                let g = loss_gradient(*kind, ctx, &f).unwrap();
                let fd = finite_diff(|v| target.loss(v).unwrap(), &f);
                assert!(rel_err(&g, &fd) < 1e-4, "{kind:?}: {g:?} vs {fd:?}");
                assert!(g.iter().sum::<f64>().abs() < 1e-12);
            }
            let w = negative_weights(scheme, &teacher);
            let g = generalized_xent_gradient(y, &f, &w).unwrap();
            let fd = finite_diff(|v| generalized_xent(y, v, &w).unwrap(), &f);
            assert!(rel_err(&g, &fd) < 1e-4);
        }
    }

    #[test]
    fn single_example_risk_has_undefined_variance() {
        let r = RiskEstimate::from_terms(vec![0.8]).unwrap();
        assert_eq!(r.value, 0.8);
        assert_eq!(r.empirical_variance, 0.0);
        assert!(!r.variance_defined);
        assert!(RiskEstimate::from_terms(vec![]).is_err());
    }
}
