//! Linear softmax and one-hidden-layer MLP predictors, a minibatch SGD
//! trainer over any loss kind, gradient checking and text checkpoints.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datagen::BayesAnnotatedDataset;
use crate::error::{DistError, Result};
use crate::losses::{dataset_targets, LossTarget, NegativeWeightScheme, RiskEstimatorKind};
use crate::numkit::{softmax_probs, DenseMatrix, ProbVector, RandomStream};
use crate::teachers::TeacherOutput;

/// Anything mapping a feature row to class logits.
pub trait Predictor: Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn predict_logits(&self, x: &[f64]) -> Result<Vec<f64>>;

    fn predict_probs(&self, x: &[f64]) -> Result<ProbVector> {
        softmax_probs(&self.predict_logits(x)?)
    }
}

/// A predictor with a flat parameter vector and analytic backprop.
pub trait Trainable: Predictor + Clone {
    fn num_params(&self) -> usize;

    /// Parameter blocks in a fixed order; the flat layout concatenates them.
    fn blocks(&self) -> Vec<ParamBlock<'_>>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;

    /// Adds `∂(gᵀ f(x))/∂θ` into `grad`, where `g = ∂loss/∂f`.
    fn backprop(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()>;

    fn flat_params(&self) -> Vec<f64> {
        self.blocks().iter().flat_map(|b| b.values.iter().copied()).collect()
    }

    fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(DistError::Dimension {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut off = 0;
        for block in self.blocks_mut() {
            let n = block.len();
            block.copy_from_slice(&params[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ParamBlock<'a> {
    pub name: &'static str,
    pub rows: usize,
    pub cols: usize,
    pub values: &'a [f64],
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(DistError::Dimension { expected, got });
    }
    Ok(())
}

fn gaussian_matrix(rows: usize, cols: usize, stream: &mut RandomStream) -> DenseMatrix {
    let sd = (1.0 / cols as f64).sqrt();
    let mut m = DenseMatrix::zeros(rows, cols);
    m.as_mut_slice().iter_mut().for_each(|v| *v = sd * stream.normal());
    m
}

/// Softmax regression: `f(x) = Wx + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    weights: DenseMatrix,
    bias: Vec<f64>,
}

impl LinearModel {
    pub fn zeros(input_dim: usize, num_classes: usize) -> Self {
        LinearModel {
            weights: DenseMatrix::zeros(num_classes, input_dim),
            bias: vec![0.0; num_classes],
        }
    }

    /// Weights drawn from N(0, 1/d), zero bias.
    pub fn init(input_dim: usize, num_classes: usize, stream: &mut RandomStream) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(DistError::param("linear model needs d >= 1 and L >= 2"));
        }
        Ok(LinearModel {
            weights: gaussian_matrix(num_classes, input_dim, stream),
            bias: vec![0.0; num_classes],
        })
    }

    pub fn from_parts(weights: DenseMatrix, bias: Vec<f64>) -> Result<Self> {
        check_dim(weights.rows(), bias.len())?;
        if bias.iter().any(|b| !b.is_finite()) {
            return Err(DistError::param("non-finite bias"));
        }
        Ok(LinearModel { weights, bias })
    }

    pub fn weights(&self) -> &DenseMatrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }
}

impl Predictor for LinearModel {
    fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    fn num_classes(&self) -> usize {
        self.weights.rows()
    }

    fn predict_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut f = self.weights.matvec(x)?;
        f.iter_mut().zip(&self.bias).for_each(|(v, b)| *v += b);
        Ok(f)
    }
}

impl Trainable for LinearModel {
    fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        vec![
            ParamBlock {
                name: "weights",
                rows: self.weights.rows(),
                cols: self.weights.cols(),
                values: self.weights.as_slice(),
            },
            ParamBlock {
                name: "bias",
                rows: 1,
                cols: self.bias.len(),
                values: &self.bias,
            },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weights.as_mut_slice(), &mut self.bias]
    }

    fn backprop(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()> {
        let (l, d) = (self.weights.rows(), self.weights.cols());
        check_dim(d, x.len())?;
        check_dim(l, dlogits.len())?;
        check_dim(self.num_params(), grad.len())?;
        let (gw, gb) = grad.split_at_mut(l * d);
        for (k, &g) in dlogits.iter().enumerate() {
            gw[k * d..(k + 1) * d]
                .iter_mut()
                .zip(x)
                .for_each(|(w, xj)| *w += g * xj);
            gb[k] += g;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// `f(x) = W₂·act(W₁x + b₁) + b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    hidden_weights: DenseMatrix,
    hidden_bias: Vec<f64>,
    output_weights: DenseMatrix,
    output_bias: Vec<f64>,
    activation: Activation,
}

impl MlpModel {
    pub fn init(
        input_dim: usize,
        hidden: usize,
        num_classes: usize,
        activation: Activation,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        if input_dim == 0 || hidden == 0 || num_classes < 2 {
            return Err(DistError::param("MLP needs d >= 1, H >= 1 and L >= 2"));
        }
        let hidden_weights = gaussian_matrix(hidden, input_dim, stream);
        let output_weights = gaussian_matrix(num_classes, hidden, stream);
        Ok(MlpModel {
            hidden_weights,
            hidden_bias: vec![0.0; hidden],
            output_weights,
            output_bias: vec![0.0; num_classes],
            activation,
        })
    }

    pub fn from_parts(
        hidden_weights: DenseMatrix,
        hidden_bias: Vec<f64>,
        output_weights: DenseMatrix,
        output_bias: Vec<f64>,
        activation: Activation,
    ) -> Result<Self> {
        if hidden_weights.rows() == 0 {
            return Err(DistError::param("MLP needs at least one hidden unit"));
        }
        check_dim(hidden_weights.rows(), hidden_bias.len())?;
        check_dim(hidden_weights.rows(), output_weights.cols())?;
        check_dim(output_weights.rows(), output_bias.len())?;
        if hidden_bias.iter().chain(&output_bias).any(|b| !b.is_finite()) {
            return Err(DistError::param("non-finite bias"));
        }
        Ok(MlpModel {
            hidden_weights,
            hidden_bias,
            output_weights,
            output_bias,
            activation,
        })
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden_weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn pre_activation(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut z = self.hidden_weights.matvec(x)?;
        z.iter_mut().zip(&self.hidden_bias).for_each(|(v, b)| *v += b);
        Ok(z)
    }
}

impl Predictor for MlpModel {
    fn input_dim(&self) -> usize {
        self.hidden_weights.cols()
    }

    fn num_classes(&self) -> usize {
        self.output_weights.rows()
    }

    fn predict_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let h: Vec<f64> = self
            .pre_activation(x)?
            .into_iter()
            .map(|z| self.activation.apply(z))
            .collect();
        let mut f = self.output_weights.matvec(&h)?;
        f.iter_mut().zip(&self.output_bias).for_each(|(v, b)| *v += b);
        Ok(f)
    }
}

impl Trainable for MlpModel {
    fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.values.len()).sum()
    }

    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        let h = self.hidden_units();
        vec![
            ParamBlock {
                name: "hidden_weights",
                rows: h,
                cols: self.input_dim(),
                values: self.hidden_weights.as_slice(),
            },
            ParamBlock {
                name: "hidden_bias",
                rows: 1,
                cols: h,
                values: &self.hidden_bias,
            },
            ParamBlock {
                name: "output_weights",
                rows: self.num_classes(),
                cols: h,
                values: self.output_weights.as_slice(),
            },
            ParamBlock {
                name: "output_bias",
                rows: 1,
                cols: self.num_classes(),
                values: &self.output_bias,
            },
        ]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            self.hidden_weights.as_mut_slice(),
            &mut self.hidden_bias,
            self.output_weights.as_mut_slice(),
            &mut self.output_bias,
        ]
    }

    fn backprop(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()> {
        let (h, d, l) = (self.hidden_units(), self.input_dim(), self.num_classes());
        check_dim(d, x.len())?;
        check_dim(l, dlogits.len())?;
        check_dim(self.num_params(), grad.len())?;
        let z = self.pre_activation(x)?;
        let act: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();

        let (g_w1, rest) = grad.split_at_mut(h * d);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(l * h);

        let mut dh = vec![0.0; h];
        for (k, &g) in dlogits.iter().enumerate() {
            let w2_row = self.output_weights.row(k);
            for j in 0..h {
                g_w2[k * h + j] += g * act[j];
                dh[j] += g * w2_row[j];
            }
            g_b2[k] += g;
        }
        for j in 0..h {
            let dz = dh[j] * self.activation.derivative(z[j]);
            if dz == 0.0 {
                continue;
            }
            g_w1[j * d..(j + 1) * d]
                .iter_mut()
                .zip(x)
                .for_each(|(w, xi)| *w += dz * xi);
            g_b1[j] += dz;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
}

/// Either model family behind one type.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn init(
        kind: ModelKind,
        input_dim: usize,
        num_classes: usize,
        hidden: usize,
        activation: Activation,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        Ok(match kind {
            ModelKind::Linear => Model::Linear(LinearModel::init(input_dim, num_classes, stream)?),
            ModelKind::Mlp => Model::Mlp(MlpModel::init(
                input_dim,
                hidden,
                num_classes,
                activation,
                stream,
            )?),
        })
    }
}

impl Predictor for Model {
    fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.input_dim(),
            Model::Mlp(m) => m.input_dim(),
        }
    }

    fn num_classes(&self) -> usize {
        match self {
            Model::Linear(m) => m.num_classes(),
            Model::Mlp(m) => m.num_classes(),
        }
    }

    fn predict_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Model::Linear(m) => m.predict_logits(x),
            Model::Mlp(m) => m.predict_logits(x),
        }
    }
}

impl Trainable for Model {
    fn num_params(&self) -> usize {
        match self {
            Model::Linear(m) => m.num_params(),
            Model::Mlp(m) => m.num_params(),
        }
    }

    fn blocks(&self) -> Vec<ParamBlock<'_>> {
        match self {
            Model::Linear(m) => m.blocks(),
            Model::Mlp(m) => m.blocks(),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Model::Linear(m) => m.blocks_mut(),
            Model::Mlp(m) => m.blocks_mut(),
        }
    }

    fn backprop(&self, x: &[f64], dlogits: &[f64], grad: &mut [f64]) -> Result<()> {
        match self {
            Model::Linear(m) => m.backprop(x, dlogits, grad),
            Model::Mlp(m) => m.backprop(x, dlogits, grad),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub weight_decay: f64,
    pub loss_kind: RiskEstimatorKind,
    pub scheme: Option<NegativeWeightScheme>,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DistError::param("learning rate must be > 0"));
        }
        if self.batch_size == 0 {
            return Err(DistError::param("batch size must be >= 1"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(DistError::param("weight decay must be >= 0"));
        }
        Ok(())
    }
}

/// Mean loss over `idx` and its gradient in the flat parameter layout.
/// Weight decay is not included.
pub fn objective_gradient<M: Trainable>(
    model: &M,
    dataset: &BayesAnnotatedDataset,
    targets: &[LossTarget],
    idx: &[usize],
) -> Result<(f64, Vec<f64>)> {
    check_dim(dataset.len(), targets.len())?;
    if idx.is_empty() {
        return Err(DistError::EmptyVector);
    }
    let mut grad = vec![0.0; model.num_params()];
    let mut total = 0.0;
    for &i in idx {
        let f = model.predict_logits(dataset.x(i))?;
        let (loss, g) = targets[i].loss_and_gradient(&f)?;
        total += loss;
        model.backprop(dataset.x(i), &g, &mut grad)?;
    }
    let scale = 1.0 / idx.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, grad))
}

/// Minibatch SGD on the loss selected by `config.loss_kind`. Targets are
/// resolved once up front. Returns the model and its per-epoch mean loss.
pub fn train_sgd<M: Trainable>(
    mut model: M,
    dataset: &BayesAnnotatedDataset,
    teacher: Option<&[TeacherOutput]>,
    config: &TrainConfig,
    stream: &mut RandomStream,
) -> Result<(M, Vec<f64>)> {
    config.validate()?;
    check_dim(model.input_dim(), dataset.dim())?;
    check_dim(model.num_classes(), dataset.num_classes())?;
    let targets = dataset_targets(config.loss_kind, dataset, teacher, config.scheme)?;
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        stream.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, grad) = objective_gradient(&model, dataset, &targets, batch)?;
            epoch_loss += loss * batch.len() as f64;
            let mut off = 0;
            for block in model.blocks_mut() {
                for (p, g) in block.iter_mut().zip(&grad[off..]) {
                    *p -= config.learning_rate * (g + config.weight_decay * *p);
                }
                off += block.len();
            }
        }
        let mean = epoch_loss / n as f64;
        if !mean.is_finite() || model.flat_params().iter().any(|p| !p.is_finite()) {
            return Err(DistError::Diverged { epoch });
        }
        trace.push(mean);
    }
    Ok((model, trace))
}

/// Largest relative error between backprop and central differences over all
/// parameters, on the first five examples of `dataset`.
pub fn grad_check<M: Trainable>(
    model: &M,
    dataset: &BayesAnnotatedDataset,
    loss_kind: RiskEstimatorKind,
    teacher: Option<&[TeacherOutput]>,
    scheme: Option<NegativeWeightScheme>,
    eps: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(DistError::param(format!("eps must lie in [1e-7, 1e-3], got {eps}")));
    }
    let targets = dataset_targets(loss_kind, dataset, teacher, scheme)?;
    let idx: Vec<usize> = (0..dataset.len().min(5)).collect();
    let (_, analytic) = objective_gradient(model, dataset, &targets, &idx)?;
    let base = model.flat_params();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        let mut shifted = base.clone();
        shifted[k] = base[k] + eps;
        probe.set_flat_params(&shifted)?;
        let (up, _) = objective_gradient(&probe, dataset, &targets, &idx)?;
        shifted[k] = base[k] - eps;
        probe.set_flat_params(&shifted)?;
        let (down, _) = objective_gradient(&probe, dataset, &targets, &idx)?;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max(relative_error(a, numeric));
    }
    Ok(worst)
}

/// `|a − b| / max(|a|, |b|, 1e-6)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checkpoint text: a header line then one `name rows cols v…` line per block.
pub fn checkpoint_to_string(model: &Model) -> String {
    let mut out = match model {
        Model::Linear(_) => "model linear\n".to_string(),
        Model::Mlp(m) => format!("model mlp {}\n", m.activation().name()),
    };
    for b in model.blocks() {
        let _ = write!(out, "{} {} {}", b.name, b.rows, b.cols);
        for v in b.values {
            let _ = write!(out, " {v:e}");
        }
        out.push('\n');
    }
    out
}

pub fn checkpoint_from_str(text: &str, path: &Path) -> Result<Model> {
    let err = |line: usize, msg: String| DistError::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| err(1, "empty checkpoint".into()))?;
    let header: Vec<&str> = header.split_whitespace().collect();

    let mut blocks = Vec::new();
    for (no, line) in lines {
        let mut tok = line.split_whitespace();
        let name = tok.next().unwrap_or_default().to_string();
        let mut dim = |what: &str| -> Result<usize> {
            tok.next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err(no + 1, format!("bad {what} for block {name}")))
        };
        let rows = dim("rows")?;
        let cols = dim("cols")?;
        let values = tok
            .map(|t| t.parse::<f64>().map_err(|e| err(no + 1, format!("bad value {t:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != rows * cols {
            return Err(err(
                no + 1,
                format!("block {name} declares {rows}x{cols} but has {} values", values.len()),
            ));
        }
        blocks.push((no + 1, name, rows, cols, values));
    }

    let take = |i: usize, want: &str| -> Result<DenseMatrix> {
        let (line, name, rows, cols, values) = blocks
            .get(i)
            .ok_or_else(|| err(0, format!("missing block {want}")))?;
        if name != want {
            return Err(err(*line, format!("expected block {want}, found {name}")));
        }
        DenseMatrix::from_vec(*rows, *cols, values.clone())
    };
    let expect_blocks = |n: usize| -> Result<()> {
        if blocks.len() != n {
            return Err(err(0, format!("expected {n} parameter blocks, found {}", blocks.len())));
        }
        Ok(())
    };

    match header.as_slice() {
        ["model", "linear"] => {
            expect_blocks(2)?;
            let w = take(0, "weights")?;
            let b = take(1, "bias")?;
            Ok(Model::Linear(LinearModel::from_parts(w, b.as_slice().to_vec())?))
        }
        ["model", "mlp", act] => {
            let activation = match *act {
                "relu" => Activation::Relu,
                "identity" => Activation::Identity,
                other => return Err(err(1, format!("unknown activation {other:?}"))),
            };
            expect_blocks(4)?;
            Ok(Model::Mlp(MlpModel::from_parts(
                take(0, "hidden_weights")?,
                take(1, "hidden_bias")?.as_slice().to_vec(),
                take(2, "output_weights")?,
                take(3, "output_bias")?.as_slice().to_vec(),
                activation,
            )?))
        }
        _ => Err(err(1, format!("unrecognised header {:?}", header.join(" ")))),
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint_to_string(model)).map_err(|e| DistError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| DistError::io(path, e))?;
    checkpoint_from_str(&text, path)
}
