//! Minibatch SGD with momentum and softmax cross-entropy for the three
//! MNIST network cases.
//!
//! Training is single-threaded and fully determined by the config seed:
//! Glorot-uniform initialization and per-epoch shuffles both draw from one
//! ChaCha8 stream.

use ndarray::{Array1, Array2, Axis, NdFloat};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{MnistSet, PIXELS};
use crate::network::{float_predictions, Activation, DenseLayer, FcnnModel, NetworkError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] NetworkError),
}

/// Layer widths of network case 1, 2 or 3.
pub fn case_widths(case: u8) -> Result<Vec<usize>, TrainError> {
    match case {
        1 => Ok(vec![PIXELS, 10]),
        2 => Ok(vec![PIXELS, 300, 10]),
        3 => Ok(vec![PIXELS, 300, 100, 10]),
        c => Err(TrainError::Config(format!("case must be 1, 2 or 3, got {c}"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub case: u8,
    pub epochs: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub bias: bool,
    /// Hidden-layer activation; the output layer is always linear.
    pub activation: Activation,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            case: 2,
            epochs: 20,
            batch_size: 64,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: 42,
            bias: true,
            activation: Activation::Relu,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        case_widths(self.case)?;
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(TrainError::Config(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Float type the backprop code is generic over.
pub trait Real: NdFloat {
    fn lit(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn lit(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn lit(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Params<T> {
    weights: Vec<Array2<T>>,
    biases: Vec<Option<Array1<T>>>,
    activations: Vec<Activation>,
}

impl<T: Real> Params<T> {
    fn init(widths: &[usize], hidden: Activation, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let layers = widths.len() - 1;
        let mut weights = Vec::with_capacity(layers);
        for w in widths.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            weights.push(Array2::from_shape_fn((w[0], w[1]), |_| T::lit(rng.random_range(-limit..limit))));
        }
        let biases = widths[1..].iter().map(|&n| bias.then(|| Array1::zeros(n))).collect();
        let activations = (0..layers)
            .map(|k| if k + 1 == layers { Activation::None } else { hidden })
            .collect();
        Self {
            weights,
            biases,
            activations,
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: self.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: self.biases.iter().map(|b| b.as_ref().map(|b| Array1::zeros(b.raw_dim()))).collect(),
            activations: self.activations.clone(),
        }
    }

    /// Post-activation outputs of every layer.
    fn forward(&self, x: &Array2<T>) -> Vec<Array2<T>> {
        let mut outs: Vec<Array2<T>> = Vec::with_capacity(self.weights.len());
        for ((w, b), &act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let mut z = outs.last().unwrap_or(x).dot(w);
            if let Some(b) = b {
                z += b;
            }
            match act {
                Activation::Relu => z.mapv_inplace(|v| v.max(T::zero())),
                Activation::Sigmoid => z.mapv_inplace(|v| T::one() / (T::one() + (-v).exp())),
                Activation::None => {}
            }
            outs.push(z);
        }
        outs
    }

    /// Mean cross-entropy over the batch and its gradient.
    fn loss_and_grad(&self, x: &Array2<T>, labels: &[u8]) -> (f64, Params<T>) {
        let outs = self.forward(x);
        let rows = x.nrows();
        let logits = outs.last().expect("at least one layer");
        // softmax(logits) - onehot, averaged over the batch
        let mut delta = logits.clone();
        let mut loss = 0.0f64;
        for (mut row, &label) in delta.rows_mut().into_iter().zip(labels) {
            let max = row.fold(T::neg_infinity(), |a, &v| a.max(v));
            row.mapv_inplace(|v| (v - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|v| v / sum);
            loss -= row[label as usize].as_f64().max(f64::MIN_POSITIVE).ln();
            row[label as usize] -= T::one();
        }
        let inv = T::lit(1.0 / rows as f64);
        delta.mapv_inplace(|v| v * inv);

        let mut grad = self.zeros_like();
        for k in (0..self.weights.len()).rev() {
            let input = if k == 0 { x } else { &outs[k - 1] };
            grad.weights[k] = input.t().dot(&delta);
            if let Some(b) = grad.biases[k].as_mut() {
                *b = delta.sum_axis(Axis(0));
            }
            if k > 0 {
                let mut back = delta.dot(&self.weights[k].t());
                let a = &outs[k - 1];
                match self.activations[k - 1] {
                    Activation::Relu => back.zip_mut_with(a, |d, &a| {
                        if a <= T::zero() {
                            *d = T::zero();
                        }
                    }),
                    Activation::Sigmoid => back.zip_mut_with(a, |d, &a| *d = *d * a * (T::one() - a)),
                    Activation::None => {}
                }
                delta = back;
            }
        }
        (loss / rows as f64, grad)
    }
}

impl Params<f32> {
    fn into_model(self) -> Result<FcnnModel, NetworkError> {
        let layers = self
            .weights
            .into_iter()
            .zip(self.biases)
            .zip(self.activations)
            .map(|((weights, bias), activation)| DenseLayer {
                weights,
                bias,
                activation,
            })
            .collect();
        FcnnModel::new(layers)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: FcnnModel,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of every minibatch, in order.
    pub batch_losses: Vec<f64>,
    /// Accuracy on the validation set after each epoch, when one is given.
    pub validation_accuracy: Vec<f64>,
}

fn batch(set: &MnistSet, idx: &[usize]) -> (Array2<f32>, Vec<u8>) {
    let mut x = Array2::zeros((idx.len(), PIXELS));
    for (mut row, &k) in x.rows_mut().into_iter().zip(idx) {
        for (dst, &p) in row.iter_mut().zip(set.image(k)) {
            *dst = p as f32 / 255.0;
        }
    }
    (x, idx.iter().map(|&k| set.label(k)).collect())
}

pub fn train(
    cfg: &TrainConfig,
    train_set: &MnistSet,
    validation: Option<&MnistSet>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let widths = case_widths(cfg.case)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params: Params<f32> = Params::init(&widths, cfg.activation, cfg.bias, &mut rng);
    let mut velocity = params.zeros_like();
    let (lr, mu) = (cfg.learning_rate as f32, cfg.momentum as f32);

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs as usize);
    let mut batch_losses = Vec::new();
    let mut validation_accuracy = Vec::new();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, labels) = batch(train_set, chunk);
            let (loss, grad) = params.loss_and_grad(&x, &labels);
            total += loss;
            count += 1;
            batch_losses.push(loss);
            for ((p, v), g) in params.weights.iter_mut().zip(&mut velocity.weights).zip(&grad.weights) {
                v.zip_mut_with(g, |v, &g| *v = mu * *v + g);
                p.scaled_add(-lr, v);
            }
            for ((p, v), g) in params.biases.iter_mut().zip(&mut velocity.biases).zip(&grad.biases) {
                if let (Some(p), Some(v), Some(g)) = (p.as_mut(), v.as_mut(), g.as_ref()) {
                    v.zip_mut_with(g, |v, &g| *v = mu * *v + g);
                    p.scaled_add(-lr, v);
                }
            }
        }
        epoch_losses.push(total / count as f64);
        if let Some(val) = validation {
            let model = params.clone().into_model()?;
            validation_accuracy.push(evaluate(&model, val)?);
        }
    }
    Ok(TrainOutcome {
        model: params.into_model()?,
        epoch_losses,
        batch_losses,
        validation_accuracy,
    })
}

/// Fraction of images whose float argmax equals the label.
pub fn evaluate(model: &FcnnModel, set: &MnistSet) -> Result<f64, TrainError> {
    if set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if model.input_dim() != PIXELS || model.output_dim() != 10 {
        return Err(TrainError::Config(format!(
            "model maps {} -> {}, expected {PIXELS} -> 10",
            model.input_dim(),
            model.output_dim()
        )));
    }
    let predictions = float_predictions(model, set);
    let correct = predictions.iter().zip(set.labels()).filter(|(p, l)| **p == **l as usize).count();
    Ok(correct as f64 / set.len() as f64)
}

/// Largest relative difference between backprop gradients and central
/// finite differences on a small random `f64` network.
pub fn gradient_check(widths: &[usize], hidden: Activation, samples: usize, seed: u64) -> f64 {
    assert!(widths.len() >= 2 && widths[widths.len() - 1] <= 256);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params: Params<f64> = Params::init(widths, hidden, true, &mut rng);
    for b in params.biases.iter_mut().flatten() {
        b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let x = Array2::from_shape_fn((samples, widths[0]), |_| rng.random_range(-1.0..1.0));
    let classes = widths[widths.len() - 1] as u8;
    let labels: Vec<u8> = (0..samples).map(|_| rng.random_range(0..classes)).collect();
    let (_, grad) = params.loss_and_grad(&x, &labels);

    const H: f64 = 1e-5;
    let relative = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);
    let mut worst = 0.0f64;
    for k in 0..params.weights.len() {
        for idx in 0..params.weights[k].len() {
            let (r, c) = (idx / params.weights[k].ncols(), idx % params.weights[k].ncols());
            let orig = params.weights[k][[r, c]];
            params.weights[k][[r, c]] = orig + H;
            let up = params.loss_and_grad(&x, &labels).0;
            params.weights[k][[r, c]] = orig - H;
            let down = params.loss_and_grad(&x, &labels).0;
            params.weights[k][[r, c]] = orig;
            worst = worst.max(relative(grad.weights[k][[r, c]], (up - down) / (2.0 * H)));
        }
        let n = params.biases[k].as_ref().map_or(0, |b| b.len());
        for j in 0..n {
            let orig = params.biases[k].as_ref().unwrap()[j];
            params.biases[k].as_mut().unwrap()[j] = orig + H;
            let up = params.loss_and_grad(&x, &labels).0;
            params.biases[k].as_mut().unwrap()[j] = orig - H;
            let down = params.loss_and_grad(&x, &labels).0;
            params.biases[k].as_mut().unwrap()[j] = orig;
            let analytic = grad.biases[k].as_ref().unwrap()[j];
            worst = worst.max(relative(analytic, (up - down) / (2.0 * H)));
        }
    }
    worst
}
