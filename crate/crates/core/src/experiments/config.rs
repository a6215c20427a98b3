use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::datagen::{SyntheticKind, SyntheticSpec, TwoGaussians};
use crate::error::{DistError, Result};
use crate::models::{Activation, ModelKind, TrainConfig};
use crate::losses::{NegativeWeightScheme, RiskEstimatorKind};
use crate::teachers::TeacherParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    BayesVsOnehot,
    ClassSeparation,
    Distortion,
    BiasVarianceGrid,
    TreeDepth,
    VarianceCheck,
    DoubleDistill,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 7] = [
        ExperimentKind::BayesVsOnehot,
        ExperimentKind::ClassSeparation,
        ExperimentKind::Distortion,
        ExperimentKind::BiasVarianceGrid,
        ExperimentKind::TreeDepth,
        ExperimentKind::VarianceCheck,
        ExperimentKind::DoubleDistill,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::BayesVsOnehot => "bayes_vs_onehot",
            ExperimentKind::ClassSeparation => "class_separation",
            ExperimentKind::Distortion => "distortion",
            ExperimentKind::BiasVarianceGrid => "bias_variance_grid",
            ExperimentKind::TreeDepth => "tree_depth",
            ExperimentKind::VarianceCheck => "variance_check",
            ExperimentKind::DoubleDistill => "double_distill",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|k| k.name()).collect();
            DistError::config(format!(
                "unknown experiment {name:?}; valid experiments: {}",
                names.join(", ")
            ))
        })
    }
}

/// Synthetic data settings; the seed comes from the trial stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub kind: SyntheticKind,
    pub dim: usize,
    pub num_classes: usize,
    pub separation: f64,
    pub sample_count: usize,
    pub radius: f64,
}

impl GeneratorConfig {
    pub fn spec(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            kind: self.kind,
            dim: self.dim,
            num_classes: self.num_classes,
            separation: self.separation,
            sample_count: self.sample_count,
            seed,
            radius: self.radius,
        }
    }
}

/// SGD settings shared by every student arm; the loss is chosen per arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
}

impl TrainParams {
    pub fn with_loss(&self, loss_kind: RiskEstimatorKind, scheme: Option<NegativeWeightScheme>) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            weight_decay: self.weight_decay,
            loss_kind,
            scheme,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub hidden: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub num_estimators: usize,
    /// Teacher forest depth.
    pub max_depth: usize,
    pub student_depth: usize,
    pub min_leaf: usize,
    pub bootstrap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorFamily {
    /// Linear predictors scattered around the Bayes direction.
    CentredLinear,
    /// `N(0, 1/d)` weights and `N(0, 1)` biases.
    RandomLinear,
    /// `f ≡ 0`.
    Zero,
    /// One-instance population with loss vector (0, 1); closed form available.
    SinglePoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceConfig {
    /// Fresh samples per estimator statistic.
    pub draws: usize,
    pub population_samples: usize,
    pub predictor: PredictorFamily,
    /// Fixed inputs for the teacher bias/variance decomposition.
    pub eval_size: usize,
    pub eval_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSource {
    Bayes,
    /// A one-hot model of `model` type trained on the student's sample.
    Trained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoubleConfig {
    /// Sigmoid-logit scales, one double-distilled student each.
    pub scales: Vec<f64>,
    pub ks: Vec<usize>,
    pub teacher: TeacherSource,
    /// Also train a uniform-weight double-distilled student.
    pub include_uniform: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    DenseCsv,
    MultilabelSparse,
}

/// An on-disk dataset replacing the synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub format: DataFormat,
    #[serde(default)]
    pub index_base: usize,
    /// Share of records used for training; the rest is held out.
    pub train_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub generator: GeneratorConfig,
    pub teacher: TeacherParams,
    pub train: TrainParams,
    pub model: ModelConfig,
    pub trees: TreeConfig,
    pub variance: VarianceConfig,
    pub double: DoubleConfig,
    #[serde(default)]
    pub data: Option<DataConfig>,
    /// Grid axes in output order; the first key varies slowest.
    pub sweep: IndexMap<String, Vec<f64>>,
    pub trials: usize,
    pub test_size: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

/// Parameters a sweep may vary.
pub const SWEEP_KEYS: &[&str] = &[
    "sample_count",
    "separation",
    "dim",
    "num_classes",
    "radius",
    "alpha",
    "sigma",
    "smoothing_alpha",
    "distortion_alpha",
    "scale_a",
    "learning_rate",
    "epochs",
    "batch_size",
    "weight_decay",
    "hidden",
    "max_depth",
    "student_depth",
    "num_estimators",
    "min_leaf",
    "test_size",
    "draws",
    "population_samples",
];

fn as_count(key: &str, value: f64) -> Result<usize> {
    if value < 0.0 || value.fract() != 0.0 || !value.is_finite() {
        return Err(DistError::config(format!("{key} must be a non-negative integer, got {value}")));
    }
    Ok(value as usize)
}

impl ExperimentConfig {
    /// Desk-scale defaults for each experiment.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let unit = TwoGaussians::unit_mean_separation(10);
        let mut c = ExperimentConfig {
            experiment: kind,
            generator: GeneratorConfig {
                kind: SyntheticKind::TwoGaussians,
                dim: 10,
                num_classes: 2,
                separation: unit,
                sample_count: 50,
                radius: 3.0,
            },
            teacher: TeacherParams::default(),
            train: TrainParams {
                learning_rate: 0.3,
                batch_size: 1000,
                epochs: 600,
                weight_decay: 0.01,
            },
            model: ModelConfig {
                kind: ModelKind::Linear,
                hidden: 32,
                activation: Activation::Relu,
            },
            trees: TreeConfig {
                num_estimators: 3,
                max_depth: 8,
                student_depth: 4,
                min_leaf: 1,
                bootstrap: true,
            },
            variance: VarianceConfig {
                draws: 2000,
                population_samples: 1_000_000,
                predictor: PredictorFamily::CentredLinear,
                eval_size: 2000,
                eval_trials: 30,
            },
            double: DoubleConfig {
                scales: vec![0.5, 1.0, 2.0],
                ks: vec![1, 3, 5],
                teacher: TeacherSource::Bayes,
                include_uniform: false,
            },
            data: None,
            sweep: IndexMap::new(),
            trials: 100,
            test_size: 10_000,
            base_seed: 0,
            output_path: None,
        };
        match kind {
            ExperimentKind::BayesVsOnehot => {
                c.sweep.insert("sample_count".into(), vec![10.0, 20.0, 50.0, 100.0, 1000.0]);
            }
            ExperimentKind::ClassSeparation => {
                c.generator.sample_count = 20;
                c.sweep.insert("separation".into(), vec![0.5, 1.0, 2.0, 4.0]);
            }
            ExperimentKind::Distortion => {
                c.generator.sample_count = 20;
                c.sweep.insert("distortion_alpha".into(), vec![1.0, 2.0, 4.0, 8.0]);
            }
            ExperimentKind::BiasVarianceGrid => {
                c.generator.sample_count = 20;
                c.trials = 30;
                c.sweep.insert("alpha".into(), vec![0.0, 0.3, 0.6]);
                c.sweep.insert("sigma".into(), vec![0.0, 0.5, 1.0]);
            }
            ExperimentKind::TreeDepth => {
                c.generator = GeneratorConfig {
                    kind: SyntheticKind::Slab2d,
                    dim: 2,
                    num_classes: 2,
                    separation: 1.0,
                    sample_count: 100,
                    radius: 3.0,
                };
                c.sweep.insert("max_depth".into(), vec![1.0, 2.0, 4.0, 8.0, 16.0]);
            }
            ExperimentKind::VarianceCheck => {
                c.trials = 20;
                c.teacher.sigma = 0.5;
            }
            ExperimentKind::DoubleDistill => {
                c.generator = GeneratorConfig {
                    kind: SyntheticKind::MulticlassMixture,
                    dim: 32,
                    num_classes: 50,
                    separation: 1.0,
                    sample_count: 2000,
                    radius: 3.0,
                };
                c.trials = 20;
                c.test_size = 2000;
                c.train.epochs = 30;
                c.train.batch_size = 20;
            }
        }
        c
    }

    /// Parses a JSON config: the named experiment's defaults overlaid with
    /// the file's keys. Unknown keys are errors.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| DistError::config(format!("invalid JSON: {e}")))?;
        let obj = user
            .as_object()
            .ok_or_else(|| DistError::config("config must be a JSON object"))?;
        let name = obj
            .get("experiment")
            .and_then(Value::as_str)
            .ok_or_else(|| DistError::config("config must name an \"experiment\""))?;
        let kind = ExperimentKind::from_name(name)?;
        let mut merged = serde_json::to_value(Self::defaults(kind)).expect("config serialises");
        overlay(&mut merged, &user);
        let config: ExperimentConfig =
            serde_json::from_value(merged).map_err(|e| DistError::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DistError::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            DistError::Config(msg) => DistError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json_string(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    /// Applies one sweep value.
    pub fn set_param(&mut self, key: &str, value: f64) -> Result<()> {
        match key {
            "sample_count" => self.generator.sample_count = as_count(key, value)?,
            "separation" => self.generator.separation = value,
            "dim" => self.generator.dim = as_count(key, value)?,
            "num_classes" => self.generator.num_classes = as_count(key, value)?,
            "radius" => self.generator.radius = value,
            "alpha" => self.teacher.alpha = value,
            "sigma" => self.teacher.sigma = value,
            "smoothing_alpha" => self.teacher.smoothing_alpha = value,
            "distortion_alpha" => self.teacher.distortion_alpha = value,
            "scale_a" => self.teacher.scale_a = value,
            "learning_rate" => self.train.learning_rate = value,
            "epochs" => self.train.epochs = as_count(key, value)?,
            "batch_size" => self.train.batch_size = as_count(key, value)?,
            "weight_decay" => self.train.weight_decay = value,
            "hidden" => self.model.hidden = as_count(key, value)?,
            "max_depth" => self.trees.max_depth = as_count(key, value)?,
            "student_depth" => self.trees.student_depth = as_count(key, value)?,
            "num_estimators" => self.trees.num_estimators = as_count(key, value)?,
            "min_leaf" => self.trees.min_leaf = as_count(key, value)?,
            "test_size" => self.test_size = as_count(key, value)?,
            "draws" => self.variance.draws = as_count(key, value)?,
            "population_samples" => self.variance.population_samples = as_count(key, value)?,
            other => {
                return Err(DistError::config(format!(
                    "unknown sweep key {other:?}; sweepable parameters: {}",
                    SWEEP_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Every grid point in output order, as `(values, resolved config)`.
    pub fn grid(&self) -> Result<Vec<(Vec<f64>, ExperimentConfig)>> {
        let mut points: Vec<Vec<f64>> = vec![Vec::new()];
        for values in self.sweep.values() {
            points = points
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        points
            .into_iter()
            .map(|values| {
                let mut c = self.clone();
                for (key, &v) in self.sweep.keys().zip(&values) {
                    c.set_param(key, v)?;
                }
                c.sweep.clear();
                c.validate_point()?;
                Ok((values, c))
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(DistError::config("trials must be >= 1"));
        }
        for (key, values) in &self.sweep {
            if !SWEEP_KEYS.contains(&key.as_str()) {
                return Err(DistError::config(format!(
                    "unknown sweep key {key:?}; sweepable parameters: {}",
                    SWEEP_KEYS.join(", ")
                )));
            }
            if values.is_empty() {
                return Err(DistError::config(format!("sweep key {key:?} has no values")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(DistError::config(format!("sweep key {key:?} has a non-finite value")));
            }
        }
        self.grid().map(|_| ())
    }

    fn validate_point(&self) -> Result<()> {
        let bad = |msg: String| Err(DistError::config(msg));
        let g = &self.generator;
        let binary = matches!(
            self.experiment,
            ExperimentKind::BayesVsOnehot
                | ExperimentKind::ClassSeparation
                | ExperimentKind::Distortion
                | ExperimentKind::BiasVarianceGrid
                | ExperimentKind::VarianceCheck
        );
        if binary && (g.kind != SyntheticKind::TwoGaussians || g.num_classes != 2) {
            return bad(format!("{} needs a binary two_gaussians generator", self.experiment.name()));
        }
        if self.experiment == ExperimentKind::TreeDepth && g.kind != SyntheticKind::Slab2d {
            return bad("tree_depth needs the slab2d generator".into());
        }
        if self.experiment == ExperimentKind::DoubleDistill {
            if self.data.is_none() && g.kind != SyntheticKind::MulticlassMixture {
                return bad("double_distill needs the multiclass_mixture generator or a data file".into());
            }
            if self.data.is_some() && self.double.teacher == TeacherSource::Bayes {
                return bad("a data file has no Bayes probabilities; use teacher \"trained\"".into());
            }
            if self.double.ks.iter().any(|&k| k == 0) {
                return bad("every k must be >= 1".into());
            }
            if let Some(d) = &self.data {
                if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
                    return bad("train_fraction must lie in (0, 1)".into());
                }
            }
        } else if self.data.is_some() {
            return bad("only double_distill reads a data file".into());
        }
        if g.sample_count == 0 || self.test_size < 2 {
            return bad("sample_count must be >= 1 and test_size >= 2".into());
        }
        if self.experiment == ExperimentKind::VarianceCheck && self.variance.draws < 2 {
            return bad("variance draws must be >= 2".into());
        }
        self.train
            .with_loss(RiskEstimatorKind::OneHot, None)
            .validate()
            .map_err(|e| DistError::config(e.to_string()))?;
        let t = &self.teacher;
        if !(0.0..=1.0).contains(&t.alpha) || !(t.sigma >= 0.0) || t.distortion_alpha < 1.0 || !(t.scale_a > 0.0) {
            return bad("teacher parameters out of range".into());
        }
        if self.double.scales.iter().any(|a| !(*a > 0.0)) {
            return bad("double-distillation scales must be > 0".into());
        }
        if self.trees.num_estimators == 0 {
            return bad("num_estimators must be >= 1".into());
        }
        Ok(())
    }
}

/// Recursively writes `patch` over `base`; arrays and scalars replace.
fn overlay(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) if k != "sweep" => overlay(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}
