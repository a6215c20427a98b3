//! One function per experiment, each mapping a resolved grid-point config
//! and a trial stream to named metric values.

use crate::datagen::{
    expand_multilabel_to_multiclass, load_dense_csv, load_multilabel_sparse, BayesAnnotatedDataset,
    GaussianMixture, Population, SinglePoint, Slab2d, TwoGaussians,
};
use crate::error::{DistError, Result};
use crate::losses::{NegativeWeightScheme, RiskEstimatorKind};
use crate::metrics::{
    auc_roc, bias_variance_report, estimator_statistics, precision_at_k, single_point_variances, top_k_loss,
    BiasVarianceSetup, ConstantLosses, LossField, PredictorLosses,
};
use crate::models::{train_sgd, LinearModel, Model, Predictor};
use crate::numkit::{DenseMatrix, ProbVector, RandomStream};
use crate::teachers::{
    bayes_teacher, distorted_teacher, noisy_biased_teacher, teacher_mse, TeacherOutput,
};
use crate::trees::{
    fit_forest_on, fit_tree_classifier, fit_tree_regressor_to_probs, forest_samples, training_gini, ForestConfig,
};

use super::config::{DataFormat, ExperimentConfig, PredictorFamily, TeacherSource};

pub type Metrics = Vec<(String, f64)>;

// Per-trial child streams.
const DATA: u64 = 0;
const TEST: u64 = 1;
const STUDENT: u64 = 2;
const TEACHER: u64 = 4;
const PROBLEM: u64 = 6;

fn gaussians(cfg: &ExperimentConfig) -> Result<TwoGaussians> {
    TwoGaussians::new(cfg.generator.dim, cfg.generator.separation)
}

fn binary_split(cfg: &ExperimentConfig, trial: &RandomStream) -> Result<(BayesAnnotatedDataset, BayesAnnotatedDataset)> {
    let pop = gaussians(cfg)?;
    let train = pop.sample(cfg.generator.sample_count, &mut trial.child(DATA))?;
    let test = pop.sample(cfg.test_size, &mut trial.child(TEST))?;
    Ok((train, test))
}

/// Initialises a student from the trial's student stream and trains it.
/// Every arm restarts the same stream, so arms differ only in their loss.
fn train_student(
    cfg: &ExperimentConfig,
    train: &BayesAnnotatedDataset,
    teacher: Option<&[TeacherOutput]>,
    loss: RiskEstimatorKind,
    scheme: Option<NegativeWeightScheme>,
    trial: &RandomStream,
) -> Result<Model> {
    let mut s = trial.child(STUDENT);
    let m = &cfg.model;
    let model = Model::init(m.kind, train.dim(), train.num_classes(), m.hidden, m.activation, &mut s)?;
    let (model, _) = train_sgd(model, train, teacher, &cfg.train.with_loss(loss, scheme), &mut s)?;
    Ok(model)
}

/// AUC of the logit margin `f₁ − f₀`.
fn margin_auc(model: &dyn Predictor, test: &BayesAnnotatedDataset) -> Result<f64> {
    let scores = (0..test.len())
        .map(|i| model.predict_logits(test.x(i)).map(|f| f[1] - f[0]))
        .collect::<Result<Vec<f64>>>()?;
    auc_roc(&scores, test.labels())
}

/// AUC of the predicted positive-class probability.
fn prob_auc(model: &dyn Predictor, test: &BayesAnnotatedDataset) -> Result<f64> {
    let scores = (0..test.len())
        .map(|i| model.predict_probs(test.x(i)).map(|p| p[1]))
        .collect::<Result<Vec<f64>>>()?;
    auc_roc(&scores, test.labels())
}

pub fn bayes_vs_onehot(cfg: &ExperimentConfig, trial: &RandomStream) -> Result<Metrics> {
    let (train, test) = binary_split(cfg, trial)?;
    let one_hot = train_student(cfg, &train, None, RiskEstimatorKind::OneHot, None, trial)?;
    let bayes = train_student(cfg, &train, None, RiskEstimatorKind::BayesDistilled, None, trial)?;
    Ok(vec![
        ("one_hot.auc".into(), margin_auc(&one_hot, &test)?),
        ("bayes_distilled.auc".into(), margin_auc(&bayes, &test)?),
    ])
}

pub fn distortion(cfg: &ExperimentConfig, trial: &RandomStream) -> Result<Metrics> {
    let (train, test) = binary_split(cfg, trial)?;
    let alpha = cfg.teacher.distortion_alpha;
    let teacher = distorted_teacher(&train, alpha)?;
    let student = train_student(cfg, &train, Some(&teacher), RiskEstimatorKind::Distilled, None, trial)?;

    let on_test = distorted_teacher(&test, alpha)?;
    let bayes = test.require_bayes("distortion")?;
    let agree = on_test
        .iter()
        .zip(bayes)
        .filter(|(t, p)| t.probs.argmax() == p.argmax())
        .count();
    Ok(vec![
        ("distilled.auc".into(), margin_auc(&student, &test)?),
        ("teacher.argmax_agreement".into(), agree as f64 / test.len() as f64),
        ("teacher.mse".into(), teacher_mse(&on_test, &test)?),
    ])
}

pub fn bias_variance_grid(cfg: &ExperimentConfig, trial: &RandomStream) -> Result<Metrics> {
    let (train, test) = binary_split(cfg, trial)?;
    let teacher = noisy_biased_teacher(&train, cfg.teacher.alpha, cfg.teacher.sigma, &mut trial.child(TEACHER))?;
    let student = train_student(cfg, &train, Some(&teacher), RiskEstimatorKind::Distilled, None, trial)?;
    Ok(vec![
        ("teacher.mse".into(), teacher_mse(&teacher, &train)?),
        ("distilled.auc".into(), margin_auc(&student, &test)?),
    ])
}

/// Mean squared distance between predicted probabilities and one-hot labels.
fn brier(model: &dyn Predictor, data: &BayesAnnotatedDataset) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.len() {
        let p = model.predict_probs(data.x(i))?;
        let y = data.labels()[i];
        total += p
            .iter()
            .enumerate()
            .map(|(c, v)| {
                let t = if c == y { 1.0 } else { 0.0 };
                (v - t) * (v - t)
            })
            .sum::<f64>();
    }
    Ok(total / data.len() as f64)
}

pub fn tree_depth(cfg: &ExperimentConfig, trial: &RandomStream) -> Result<Metrics> {
    let mut data = trial.child(DATA);
    let train = Slab2d.sample(cfg.generator.sample_count, &mut data)?;
    let test = Slab2d.sample(cfg.test_size, &mut trial.child(TEST))?;
    let t = &cfg.trees;
    let forest_config = ForestConfig {
        num_estimators: t.num_estimators,
        max_depth: t.max_depth,
        min_leaf: t.min_leaf,
        bootstrap: t.bootstrap,
    };
    let samples = forest_samples(train.len(), &forest_config, &mut trial.child(TEACHER))?;
    let forest = fit_forest_on(&train, &samples, &forest_config)?;
    // Each member's impurity on its own sample: the Brier score of its raw
    // leaf frequencies, which deeper trees can only lower.
    let mut fit = 0.0;
    for (tree, idx) in forest.trees().iter().zip(&samples) {
        fit += training_gini(tree, &train.subset(idx))?;
    }
    let train_mse = fit / samples.len() as f64;
    let on_train = (0..train.len())
        .map(|i| forest.predict_probs(train.x(i)))
        .collect::<Result<Vec<ProbVector>>>()?;
    let on_test = (0..test.len())
        .map(|i| forest.predict_probs(test.x(i)).map(TeacherOutput::from_probs))
        .collect::<Result<Vec<_>>>()?;
    let student = fit_tree_regressor_to_probs(train.features(), &on_train, t.student_depth, t.min_leaf)?;
    let one_hot = fit_tree_classifier(&train, t.student_depth, t.min_leaf)?;
    Ok(vec![
        ("teacher.train_mse".into(), train_mse),
        ("teacher.train_brier".into(), brier(&forest, &train)?),
        ("teacher.heldout_mse".into(), teacher_mse(&on_test, &test)?),
        ("teacher.auc".into(), prob_auc(&forest, &test)?),
        ("distilled.auc".into(), prob_auc(&student, &test)?),
        ("one_hot.auc".into(), prob_auc(&one_hot, &test)?),
    ])
}

/// A linear predictor near the Bayes direction: class weights `±s·θ*/2` plus
/// `N(0, 1/d)` noise, `s ~ U(0.5, 1.5)`, biases `N(0, 1)`.
pub fn centred_linear(pop: &TwoGaussians, stream: &mut RandomStream) -> Result<LinearModel> {
    let d = pop.dim();
    let s = 0.5 + stream.uniform();
    let sd = (1.0 / d as f64).sqrt();
    let mut w = DenseMatrix::zeros(2, d);
    for (j, &t) in pop.theta_star().iter().enumerate() {
        w.set(0, j, -s * t / 2.0 + sd * stream.normal());
        w.set(1, j, s * t / 2.0 + sd * stream.normal());
    }
    let bias = vec![stream.normal(), stream.normal()];
    LinearModel::from_parts(w, bias)
}

/// `N(0, 1/d)` weights and `N(0, 1)` biases.
pub fn random_linear(pop: &TwoGaussians, stream: &mut RandomStream) -> Result<LinearModel> {
    let m = LinearModel::init(pop.dim(), 2, stream)?;
    let bias = vec![stream.normal(), stream.normal()];
    LinearModel::from_parts(m.weights().clone(), bias)
}

/// The Bayes-optimal linear predictor, logits `(−θ*ᵀx/2, θ*ᵀx/2)`.
pub fn bayes_linear(pop: &TwoGaussians) -> Result<LinearModel> {
    let rows = vec![
        pop.theta_star().iter().map(|t| -t / 2.0).collect(),
        pop.theta_star().iter().map(|t| t / 2.0).collect(),
    ];
    LinearModel::from_parts(DenseMatrix::from_rows(&rows)?, vec![0.0, 0.0])
}

pub fn variance_check(cfg: &ExperimentConfig, trial: &RandomStream) -> Result<Metrics> {
    let v = &cfg.variance;
    let n = cfg.generator.sample_count;
    let mut out: Metrics = Vec::new();
    let draws = trial.child(DATA);

    if v.predictor == PredictorFamily::SinglePoint {
        let pop = SinglePoint {
            x: vec![0.0],
            p_star: ProbVector::new(vec![0.5, 0.5])?,
        };
        let losses = vec![0.0, 1.0];
        let (oh, bd) = single_point_variances(&pop.p_star, &losses, n)?;
        out.push(("closed_form.one_hot.variance".into(), oh));
        out.push(("closed_form.bayes_distilled.variance".into(), bd));
        let stats = estimator_statistics(&ConstantLosses(losses), &pop, n, v.draws, v.population_samples, &draws)?;
        push_estimator_stats(&mut out, &stats);
        return Ok(out);
    }

    let pop = gaussians(cfg)?;
    let mut ps = trial.child(STUDENT);
    let model = match v.predictor {
        PredictorFamily::CentredLinear => centred_linear(&pop, &mut ps)?,
        PredictorFamily::RandomLinear => random_linear(&pop, &mut ps)?,
        PredictorFamily::Zero => LinearModel::zeros(pop.dim(), 2),
        PredictorFamily::SinglePoint => unreachable!("handled above"),
    };
    let field = PredictorLosses(&model);
    let stats = estimator_statistics(&field, &pop, n, v.draws, v.population_samples, &draws)?;
    push_estimator_stats(&mut out, &stats);

    let (alpha, sigma) = (cfg.teacher.alpha, cfg.teacher.sigma);
    let report = bias_variance_report(
        |ds, s| noisy_biased_teacher(ds, alpha, sigma, s),
        &pop,
        &field,
        &BiasVarianceSetup {
            sample_size: n,
            trials: v.draws,
            population_samples: v.population_samples,
            eval_size: v.eval_size,
            eval_trials: v.eval_trials,
        },
        &draws,
    )?;
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    out.extend([
        ("distilled.sq_error".into(), report.distilled_sq_error),
        ("distilled.sq_error_se".into(), report.distilled_sq_error_se),
        ("bayes_distilled.sq_error".into(), report.bayes_sq_error),
        ("sq_error_gap_se".into(), report.sq_error_gap_se),
        ("term_variance".into(), report.term_variance),
        ("loss_norm_bound".into(), report.loss_norm_bound),
        ("teacher.mean_error".into(), report.mean_teacher_error),
        ("teacher.mse".into(), report.teacher_mse),
        ("teacher.mse_se".into(), report.teacher_mse_se),
        ("teacher.bias_sq".into(), report.decomposition.bias_sq),
        ("teacher.variance".into(), report.decomposition.variance),
        ("teacher.decomposition_se".into(), report.decomposition.total_se),
        ("bound.first".into(), report.first_bound()),
        ("bound.second".into(), report.second_bound()),
        ("check.chain".into(), flag(report.chain_holds(3.0))),
        ("check.decomposition".into(), flag(report.decomposition_matches(3.0))),
        ("check.bayes_no_worse".into(), flag(report.bayes_no_worse(2.0))),
    ]);
    Ok(out)
}

fn push_estimator_stats(out: &mut Metrics, stats: &crate::metrics::EstimatorStatistics) {
    out.extend([
        ("one_hot.mean".into(), stats.one_hot.mean),
        ("one_hot.variance".into(), stats.one_hot.variance),
        ("one_hot.mean_se".into(), stats.one_hot.mean_se),
        ("bayes_distilled.mean".into(), stats.bayes_distilled.mean),
        ("bayes_distilled.variance".into(), stats.bayes_distilled.variance),
        ("bayes_distilled.mean_se".into(), stats.bayes_distilled.mean_se),
        ("variance_gap".into(), stats.variance_gap),
        ("variance_gap_se".into(), stats.variance_gap_se),
    ]);
    if stats.population_risk_mc.is_finite() {
        out.extend([
            ("population_risk".into(), stats.population_risk_mc),
            ("population_risk_se".into(), stats.population_risk_se),
        ]);
    }
}

/// Train/test split of an on-disk dataset, shuffled by the trial stream.
fn load_split(cfg: &ExperimentConfig, trial: &RandomStream) -> Result<(BayesAnnotatedDataset, BayesAnnotatedDataset)> {
    let data = cfg.data.as_ref().expect("checked by caller");
    let full = match data.format {
        DataFormat::DenseCsv => load_dense_csv(&data.path)?,
        DataFormat::MultilabelSparse => {
            expand_multilabel_to_multiclass(&load_multilabel_sparse(&data.path, data.index_base)?)?
        }
    };
    let mut idx: Vec<usize> = (0..full.len()).collect();
    trial.child(DATA).shuffle(&mut idx);
    let cut = ((full.len() as f64 * data.train_fraction).round() as usize).clamp(1, full.len() - 1);
    Ok((full.subset(&idx[..cut]), full.subset(&idx[cut..])))
}

pub fn double_distill(cfg: &ExperimentConfig, trial: &RandomStream) -> Result<Metrics> {
    let (train, test) = if cfg.data.is_some() {
        load_split(cfg, trial)?
    } else {
        let g = &cfg.generator;
        let mixture = GaussianMixture::random(g.dim, g.num_classes, g.radius, &mut trial.child(PROBLEM))?;
        (
            mixture.sample(g.sample_count, &mut trial.child(DATA))?,
            mixture.sample(cfg.test_size, &mut trial.child(TEST))?,
        )
    };
    let l = train.num_classes();
    for &k in &cfg.double.ks {
        if k > l {
            return Err(DistError::config(format!("k = {k} exceeds the {l} classes")));
        }
    }

    let teacher = match cfg.double.teacher {
        TeacherSource::Bayes => bayes_teacher(&train)?,
        TeacherSource::Trained => {
            let mut s = trial.child(TEACHER);
            let m = &cfg.model;
            let model = Model::init(m.kind, train.dim(), l, m.hidden, m.activation, &mut s)?;
            let config = cfg.train.with_loss(RiskEstimatorKind::OneHot, None);
            let (model, _) = train_sgd(model, &train, None, &config, &mut s)?;
            (0..train.len())
                .map(|i| TeacherOutput::from_logits(model.predict_logits(train.x(i))?))
                .collect::<Result<Vec<_>>>()?
        }
    };

    let mut arms: Vec<(String, RiskEstimatorKind, Option<NegativeWeightScheme>)> = vec![
        ("one_hot".into(), RiskEstimatorKind::OneHot, None),
        ("distilled".into(), RiskEstimatorKind::Distilled, None),
    ];
    if cfg.double.include_uniform {
        arms.push((
            "double_uniform".into(),
            RiskEstimatorKind::DoubleDistilled,
            Some(NegativeWeightScheme::UNIFORM),
        ));
    }
    for &a in &cfg.double.scales {
        arms.push((
            format!("double_a{a}"),
            RiskEstimatorKind::DoubleDistilled,
            Some(NegativeWeightScheme::sigmoid_logit(a)?),
        ));
    }

    let mut out = Metrics::new();
    for (name, kind, scheme) in arms {
        let model = train_student(cfg, &train, Some(&teacher), kind, scheme, trial)?;
        let scores = (0..test.len())
            .map(|i| model.predict_logits(test.x(i)))
            .collect::<Result<Vec<_>>>()?;
        for &k in &cfg.double.ks {
            out.push((format!("{name}.p_at_{k}"), precision_at_k(&scores, test.labels(), k)?));
            out.push((format!("{name}.top_{k}_loss"), top_k_loss(&scores, test.labels(), k)?));
        }
        out.push((format!("{name}.p_at_L"), precision_at_k(&scores, test.labels(), l)?));
    }
    Ok(out)
}

/// The loss field of a fixed predictor; exposed for acceptance checks.
pub fn predictor_field(model: &LinearModel) -> impl LossField + '_ {
    PredictorLosses(model)
}
