//! Teacher families producing `p^t(x)` and teacher logits `s(x)`.

use serde::{Deserialize, Serialize};

use crate::datagen::BayesAnnotatedDataset;
use crate::error::{DistError, Result};
use crate::models::Predictor;
use crate::numkit::{
    kahan_sum, sample_variance, sigmoid, softmax, standard_error, LogitVector,
    ProbVector, RandomStream,
};

/// Teacher prediction for one example. Teachers defined in probability space
/// carry `ln(clamped p)` as logits, so consumers must treat logits as
/// shift-invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherOutput {
    pub probs: ProbVector,
    pub logits: LogitVector,
}

impl TeacherOutput {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        let probs = ProbVector::new(softmax(&logits)?)?;
        Ok(TeacherOutput {
            probs,
            logits: LogitVector::new(logits)?,
        })
    }

    pub fn from_probs(probs: ProbVector) -> Self {
        let logits = LogitVector::from_probs(&probs);
        TeacherOutput { probs, logits }
    }

    fn binary(q: f64) -> Result<Self> {
        Ok(Self::from_probs(ProbVector::new(vec![1.0 - q, q])?))
    }
}

/// Knobs of the teacher families; each family reads only its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherParams {
    /// Bias mix of the noisy teacher.
    pub alpha: f64,
    /// Noise scale of the noisy teacher (enters as `σ²·ε`).
    pub sigma: f64,
    pub smoothing_alpha: f64,
    pub distortion_alpha: f64,
    /// Sigmoid-logit negative-weight scale.
    pub scale_a: f64,
}

impl Default for TeacherParams {
    fn default() -> Self {
        TeacherParams {
            alpha: 0.0,
            sigma: 0.0,
            smoothing_alpha: 0.0,
            distortion_alpha: 1.0,
            scale_a: 1.0,
        }
    }
}

/// Passes the true class-probabilities through. Logits are the generator's
/// exact posterior scores when it supplies them, `ln(clamped p*)` otherwise.
pub fn bayes_teacher(dataset: &BayesAnnotatedDataset) -> Result<Vec<TeacherOutput>> {
    let probs = dataset.require_bayes("Bayes teacher")?;
    Ok(match dataset.bayes_logits() {
        Some(logits) => probs
            .iter()
            .zip(logits)
            .map(|(p, s)| TeacherOutput {
                probs: p.clone(),
                logits: s.clone(),
            })
            .collect(),
        None => probs.iter().cloned().map(TeacherOutput::from_probs).collect(),
    })
}

/// `q = (1 − α)·σ(θ*ᵀx + σ²·ε) + α/2` with fresh `ε ~ N(0, 1)` per example and
/// per call.
pub fn noisy_biased_teacher(
    dataset: &BayesAnnotatedDataset,
    alpha: f64,
    sigma: f64,
    stream: &mut RandomStream,
) -> Result<Vec<TeacherOutput>> {
    if dataset.num_classes() != 2 {
        return Err(DistError::param("noisy teacher needs a binary dataset"));
    }
    if !(0.0..=1.0).contains(&alpha) || !(sigma >= 0.0) {
        return Err(DistError::param(format!(
            "noisy teacher needs alpha in [0,1] and sigma >= 0, got ({alpha}, {sigma})"
        )));
    }
    let scores = dataset.bayes_logits().ok_or_else(|| {
        DistError::MissingBayes("noisy teacher requires the linear Bayes score θ*ᵀx".into())
    })?;
    let probs = dataset.require_bayes("noisy teacher")?;
    let noise_scale = sigma * sigma;
    scores
        .iter()
        .zip(probs)
        .map(|(s, p)| {
            let eps = stream.normal();
            if alpha == 0.0 && sigma == 0.0 {
                return Ok(TeacherOutput::from_probs(p.clone()));
            }
            let z = s[1] - s[0] + noise_scale * eps;
            TeacherOutput::binary((1.0 - alpha) * sigmoid(z) + alpha / 2.0)
        })
        .collect()
}

/// Boundary-preserving calibration distortion; see [`distorted_teacher`].
pub fn psi_alpha(u: f64, alpha: f64) -> f64 {
    if u <= 0.5 {
        0.5 * (2.0 * u).powf(alpha)
    } else {
        0.5 + 0.5 * (2.0 * u - 1.0).powf(1.0 / alpha)
    }
}

/// Applies `Ψ_α` to `p*(y = 1 | x)`. The upper branch carries a ½ factor so
/// that `[½, 1]` maps onto itself.
pub fn distorted_teacher(
    dataset: &BayesAnnotatedDataset,
    distortion_alpha: f64,
) -> Result<Vec<TeacherOutput>> {
    if !(distortion_alpha >= 1.0) {
        return Err(DistError::param(format!(
            "distortion alpha must be >= 1, got {distortion_alpha}"
        )));
    }
    if dataset.num_classes() != 2 {
        return Err(DistError::param("distorted teacher needs a binary dataset"));
    }
    let probs = dataset.require_bayes("distorted teacher")?;
    probs
        .iter()
        .map(|p| {
            let q = psi_alpha(p[1], distortion_alpha);
            // keep the exact complement so that Ψ_1 reproduces p* bit for bit
            if q == p[1] {
                Ok(TeacherOutput::from_probs(p.clone()))
            } else {
                TeacherOutput::binary(q)
            }
        })
        .collect()
}

/// `(1 − α)·e_y + (α/L)·1` per example.
pub fn label_smoothing_teacher(
    labels: &[usize],
    smoothing_alpha: f64,
    num_classes: usize,
) -> Result<Vec<TeacherOutput>> {
    if !(0.0..=1.0).contains(&smoothing_alpha) {
        return Err(DistError::param("smoothing alpha must lie in [0,1]"));
    }
    let floor = smoothing_alpha / num_classes as f64;
    labels
        .iter()
        .map(|&y| {
            if y >= num_classes {
                return Err(DistError::LabelOutOfRange {
                    label: y,
                    num_classes,
                });
            }
            let mut p = vec![floor; num_classes];
            p[y] += 1.0 - smoothing_alpha;
            Ok(TeacherOutput::from_probs(ProbVector::new(p)?))
        })
        .collect()
}

/// A trained model acting as teacher: `p^t = softmax(model logits)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedTeacher<M> {
    model: M,
}

pub fn learned_teacher<M: Predictor>(model: M) -> LearnedTeacher<M> {
    LearnedTeacher { model }
}

impl<M: Predictor> LearnedTeacher<M> {
    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn into_inner(self) -> M {
        self.model
    }

    pub fn predict(&self, x: &[f64]) -> Result<TeacherOutput> {
        TeacherOutput::from_logits(self.model.predict_logits(x)?)
    }

    pub fn outputs(&self, dataset: &BayesAnnotatedDataset) -> Result<Vec<TeacherOutput>> {
        (0..dataset.len()).map(|i| self.predict(dataset.x(i))).collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

/// Sample mean of `‖p^t(x_n) − p*(x_n)‖²`.
pub fn teacher_mse(outputs: &[TeacherOutput], dataset: &BayesAnnotatedDataset) -> Result<f64> {
    let bayes = dataset.require_bayes("teacher MSE")?;
    if outputs.len() != bayes.len() {
        return Err(DistError::Dimension {
            expected: bayes.len(),
            got: outputs.len(),
        });
    }
    let terms: Vec<f64> = outputs
        .iter()
        .zip(bayes)
        .map(|(t, p)| sq_dist(&t.probs, p))
        .collect();
    Ok(kahan_sum(&terms) / terms.len() as f64)
}

/// Monte-Carlo decomposition of the teacher's squared error at fixed inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TeacherBiasVariance {
    /// Mean over x of `‖mean_t p^t(x) − p*(x)‖²`.
    pub bias_sq: f64,
    /// Mean over x of the summed coordinate-wise (n − 1) variance across trials.
    pub variance: f64,
    /// Mean over trials of the per-trial teacher MSE.
    pub mse: f64,
    /// Standard error of `mse` across trials.
    pub mse_se: f64,
    /// Standard error of `bias_sq + variance` across inputs.
    pub total_se: f64,
}

impl TeacherBiasVariance {
    /// `bias_sq + variance`, an upper estimate of `mse`.
    pub fn total(&self) -> f64 {
        self.bias_sq + self.variance
    }
}

/// Draws `trials` teacher realisations on `dataset` and decomposes their
/// error against `p*`.
pub fn teacher_bias_variance<F>(
    mut teacher_factory: F,
    dataset: &BayesAnnotatedDataset,
    trials: usize,
    stream: &mut RandomStream,
) -> Result<TeacherBiasVariance>
where
    F: FnMut(&mut RandomStream) -> Result<Vec<TeacherOutput>>,
{
    if trials < 2 {
        return Err(DistError::param("bias/variance needs at least two trials"));
    }
    let bayes = dataset.require_bayes("teacher bias/variance")?;
    let n = dataset.len();
    let l = dataset.num_classes();
    // draws[i][c] holds the trial values of p^t_c(x_i)
    let mut draws = vec![vec![Vec::with_capacity(trials); l]; n];
    let mut per_trial_mse = Vec::with_capacity(trials);
    for _ in 0..trials {
        let outputs = teacher_factory(stream)?;
        per_trial_mse.push(teacher_mse(&outputs, dataset)?);
        for (i, out) in outputs.iter().enumerate() {
            for c in 0..l {
                draws[i][c].push(out.probs[c]);
            }
        }
    }
    let mut bias_terms = Vec::with_capacity(n);
    let mut var_terms = Vec::with_capacity(n);
    for (i, per_class) in draws.iter().enumerate() {
        let mut b = 0.0;
        let mut v = 0.0;
        for (c, vals) in per_class.iter().enumerate() {
            let m = kahan_sum(vals) / trials as f64;
            b += (m - bayes[i][c]).powi(2);
            v += sample_variance(vals).unwrap_or(0.0);
        }
        bias_terms.push(b);
        var_terms.push(v);
    }
    let per_point: Vec<f64> = bias_terms.iter().zip(&var_terms).map(|(b, v)| b + v).collect();
    Ok(TeacherBiasVariance {
        bias_sq: kahan_sum(&bias_terms) / n as f64,
        variance: kahan_sum(&var_terms) / n as f64,
        mse: kahan_sum(&per_trial_mse) / trials as f64,
        mse_se: standard_error(&per_trial_mse),
        total_se: standard_error(&per_point),
    })
}
