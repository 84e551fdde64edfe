//! A small feed-forward network mapping combined user features to per-topic
//! exposure probabilities.
//!
//! Hidden layers use ReLU, the output layer sigmoid, and training minimizes
//! binary cross-entropy with clipped predictions. Everything is f64 and
//! single-threaded so runs reproduce bit-for-bit from a seed.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::prelude::*;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prediction clip bound used inside the loss: probabilities are clamped to
/// `[CLIP_EPSILON, 1 - CLIP_EPSILON]` before taking logs.
pub const CLIP_EPSILON: f64 = 1e-7;

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// Mean binary cross-entropy over every cell of a batch, with predictions
/// clamped away from 0 and 1.
pub fn bce_loss(predictions: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    assert_eq!(predictions.dim(), targets.dim(), "prediction/target shape");
    let n = predictions.len() as f64;
    let mut total = 0.0;
    for (&p, &e) in predictions.iter().zip(targets.iter()) {
        let p = p.clamp(CLIP_EPSILON, 1.0 - CLIP_EPSILON);
        total -= e * p.ln() + (1.0 - e) * (1.0 - p).ln();
    }
    total / n
}

/// One fully connected layer; `weights` is `(outputs, inputs)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    /// Glorot-uniform initialization: U(-r, r) with r = sqrt(6/(fan_in+fan_out)).
    fn glorot(n_in: usize, n_out: usize, rng: &mut ChaCha20Rng) -> Self {
        let r = (6.0 / (n_in + n_out) as f64).sqrt();
        let weights =
            Array2::from_shape_fn((n_out, n_in), |_| rng.random_range(-r..r));
        DenseLayer {
            weights,
            bias: Array1::zeros(n_out),
        }
    }

    /// Affine map for a batch: `X (b, in) -> X W^T + bias (b, out)`.
    fn affine(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.bias;
        z
    }
}

/// Network shape and initialization seed.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    /// Hidden layer widths, input to output.
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 32, 64],
            seed: 0,
        }
    }
}

/// Multilayer perceptron with ReLU hidden layers and a sigmoid output layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpModel {
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub layers: Vec<DenseLayer>,
}

impl MlpModel {
    pub fn new(n_inputs: usize, n_outputs: usize, config: &MlpConfig) -> Result<Self> {
        if n_inputs == 0 || n_outputs == 0 {
            return Err(Error::Config(format!(
                "network needs positive input/output sizes, got {n_inputs} and {n_outputs}"
            )));
        }
        if config.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("hidden layer width 0".into()));
        }
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut sizes = vec![n_inputs];
        sizes.extend(&config.hidden);
        sizes.push(n_outputs);
        let layers = sizes
            .windows(2)
            .map(|w| DenseLayer::glorot(w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            n_inputs,
            n_outputs,
            layers,
        })
    }

    /// Forward pass keeping pre-activations and activations for backprop.
    /// Returns (pre-activations per layer, activations with input first).
    fn forward_trace(&self, x: &Array2<f64>) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let n_layers = self.layers.len();
        let mut pre = Vec::with_capacity(n_layers);
        let mut act = Vec::with_capacity(n_layers + 1);
        act.push(x.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(act.last().unwrap());
            let a = if l + 1 == n_layers {
                z.mapv(sigmoid)
            } else {
                z.mapv(relu)
            };
            pre.push(z);
            act.push(a);
        }
        (pre, act)
    }

    /// Predicted exposure probabilities for a batch of feature rows.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.n_inputs {
            return Err(Error::shape(
                "network input",
                format!("{} columns", self.n_inputs),
                format!("{} columns", x.ncols()),
            ));
        }
        let (_, act) = self.forward_trace(x);
        Ok(act.into_iter().next_back().unwrap())
    }

    /// Predicted exposure probabilities for a single feature row.
    pub fn forward(&self, x: &Array1<f64>) -> Result<Array1<f64>> {
        let batch = x.view().insert_axis(Axis(0)).to_owned();
        Ok(self.forward_batch(&batch)?.row(0).to_owned())
    }

    /// Loss gradient for a batch via backprop.
    ///
    /// The gradient respects the loss clipping: cells whose prediction falls
    /// outside `[CLIP_EPSILON, 1 - CLIP_EPSILON]` contribute zero gradient
    /// (the clamp is flat there); elsewhere the output-layer gradient
    /// simplifies to `(prediction - target) / cells`.
    pub fn gradients(
        &self,
        x: &Array2<f64>,
        targets: &Array2<f64>,
    ) -> Result<(Vec<DenseLayer>, f64)> {
        if targets.dim() != (x.nrows(), self.n_outputs) {
            return Err(Error::shape(
                "training targets",
                format!("{} x {}", x.nrows(), self.n_outputs),
                format!("{} x {}", targets.nrows(), targets.ncols()),
            ));
        }
        let (pre, act) = self.forward_trace(x);
        let predictions = act.last().unwrap();
        let loss = bce_loss(predictions, targets);
        let cells = predictions.len() as f64;

        let mut delta = Array2::zeros(predictions.dim());
        for ((i, j), &p) in predictions.indexed_iter() {
            if (CLIP_EPSILON..=1.0 - CLIP_EPSILON).contains(&p) {
                delta[[i, j]] = (p - targets[[i, j]]) / cells;
            }
        }

        let mut grads: Vec<DenseLayer> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let grad_w = delta.t().dot(&act[l]);
            let grad_b = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut back = delta.dot(&self.layers[l].weights);
                back.zip_mut_with(&pre[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = back;
            }
            grads.push(DenseLayer {
                weights: grad_w,
                bias: grad_b,
            });
        }
        grads.reverse();
        Ok((grads, loss))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)
            .map_err(|e| Error::validation(format!("{path:?}"), e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: MlpModel =
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: e.to_string(),
            })?;
        for (l, layer) in model.layers.iter().enumerate() {
            let expect_in = if l == 0 {
                model.n_inputs
            } else {
                model.layers[l - 1].weights.nrows()
            };
            if layer.weights.ncols() != expect_in || layer.bias.len() != layer.weights.nrows() {
                return Err(Error::validation(
                    format!("{path:?}"),
                    format!("layer {l} has inconsistent shapes"),
                ));
            }
        }
        match model.layers.last() {
            Some(last) if last.weights.nrows() == model.n_outputs => Ok(model),
            _ => Err(Error::validation(
                format!("{path:?}"),
                "output layer size disagrees with n_outputs",
            )),
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Per-parameter Adam moments.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<DenseLayer>,
    v: Vec<DenseLayer>,
}

impl AdamState {
    pub fn new(model: &MlpModel, learning_rate: f64) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| DenseLayer {
                    weights: Array2::zeros(l.weights.dim()),
                    bias: Array1::zeros(l.bias.len()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One bias-corrected Adam update in place.
    pub fn apply(&mut self, model: &mut MlpModel, grads: &[DenseLayer]) {
        self.step += 1;
        let (lr, beta1, beta2, eps) = (self.learning_rate, self.beta1, self.beta2, self.epsilon);
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let step_one = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *param -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
        };
        for l in 0..model.layers.len() {
            let layer = &mut model.layers[l];
            for ((param, &g), (m, v)) in layer
                .weights
                .iter_mut()
                .zip(grads[l].weights.iter())
                .zip(self.m[l].weights.iter_mut().zip(self.v[l].weights.iter_mut()))
            {
                step_one(param, g, m, v);
            }
            for ((param, &g), (m, v)) in layer
                .bias
                .iter_mut()
                .zip(grads[l].bias.iter())
                .zip(self.m[l].bias.iter_mut().zip(self.v[l].bias.iter_mut()))
            {
                step_one(param, g, m, v);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Fraction of rows held out for validation-based early stopping.
    /// Ignored when an explicit validation set is passed to [`train`].
    pub val_fraction: f64,
    /// Epochs without validation improvement before stopping.
    /// `None` disables early stopping and all epochs run.
    pub patience: Option<usize>,
    /// Reshuffle rows for the split and for every epoch's minibatches.
    /// When false, rows are taken in their given order.
    pub shuffle: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-4,
            val_fraction: 0.1,
            patience: Some(20),
            shuffle: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "epochs and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..0.5).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction must be in [0, 0.5), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// What happened during training.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Train in place with minibatch Adam and early stopping; the model is left
/// at the weights that scored the best validation loss.
///
/// `validation` supplies an explicit monitoring set; when it is `None` a
/// `val_fraction` slice of the inputs is held out instead. With neither
/// (`val_fraction = 0`) the training loss doubles as the stopping signal.
pub fn train(
    model: &mut MlpModel,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    config: &TrainConfig,
    validation: Option<(&Array2<f64>, &Array2<f64>)>,
) -> Result<TrainReport> {
    config.validate()?;
    if inputs.nrows() != targets.nrows() {
        return Err(Error::shape(
            "training data",
            format!("{} target rows", inputs.nrows()),
            format!("{} target rows", targets.nrows()),
        ));
    }
    if inputs.nrows() == 0 {
        return Err(Error::validation("training data", "no rows"));
    }
    if let Some((vx, vy)) = validation {
        if vx.nrows() != vy.nrows() {
            return Err(Error::shape(
                "validation data",
                format!("{} target rows", vx.nrows()),
                format!("{} target rows", vy.nrows()),
            ));
        }
        if vx.ncols() != inputs.ncols() || vy.ncols() != targets.ncols() {
            return Err(Error::shape(
                "validation data",
                format!("{}/{} columns", inputs.ncols(), targets.ncols()),
                format!("{}/{} columns", vx.ncols(), vy.ncols()),
            ));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    if config.shuffle {
        order.shuffle(&mut rng);
    }
    let n_val = if validation.is_some() {
        0
    } else {
        ((inputs.nrows() as f64) * config.val_fraction).floor() as usize
    };
    let (train_idx, held_idx) = order.split_at(inputs.nrows() - n_val);
    let take = |idx: &[usize]| {
        (
            inputs.select(Axis(0), idx),
            targets.select(Axis(0), idx),
        )
    };
    let (held_x, held_y) = take(held_idx);
    let (val_x, val_y) = match validation {
        Some((vx, vy)) => (vx.clone(), vy.clone()),
        None => (held_x, held_y),
    };
    let (train_x, train_y) = take(train_idx);
    if train_x.nrows() == 0 {
        return Err(Error::validation(
            "training data",
            "validation split leaves no training rows",
        ));
    }

    let mut adam = AdamState::new(model, config.learning_rate);
    let mut best: Option<(usize, f64, Vec<DenseLayer>)> = None;
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut epochs_run = 0;
    let mut stopped_early = false;
    let mut batch_order: Vec<usize> = (0..train_x.nrows()).collect();

    for epoch in 0..config.epochs {
        epochs_run = epoch + 1;
        if config.shuffle {
            batch_order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for (b, chunk) in batch_order.chunks(config.batch_size).enumerate() {
            let (bx, by) = (train_x.select(Axis(0), chunk), train_y.select(Axis(0), chunk));
            let (grads, loss) = model.gradients(&bx, &by)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam.apply(model, &grads);
            epoch_loss += loss;
            n_batches += 1;
        }
        train_losses.push(epoch_loss / n_batches as f64);

        let monitored = if val_x.nrows() > 0 {
            bce_loss(&model.forward_batch(&val_x)?, &val_y)
        } else {
            *train_losses.last().unwrap()
        };
        if !monitored.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        val_losses.push(monitored);

        let improved = best.as_ref().is_none_or(|(_, b, _)| monitored < *b);
        if improved {
            best = Some((epoch, monitored, model.layers.clone()));
        } else if let Some(patience) = config.patience {
            if epoch - best.as_ref().unwrap().0 >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    let (best_epoch, best_val_loss, best_layers) = best.expect("at least one epoch ran");
    model.layers = best_layers;
    Ok(TrainReport {
        epochs_run,
        best_epoch,
        best_val_loss,
        train_losses,
        val_losses,
        stopped_early,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn sigmoid_known_values() {
        assert_relative_eq!(sigmoid(0.0), 0.5, epsilon = 1e-15);
        assert_relative_eq!(sigmoid(3.0f64.ln()), 0.75, epsilon = 1e-12);
        assert_relative_eq!(sigmoid(-(3.0f64.ln())), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn bce_hand_computed() {
        // -(ln 0.9 + ln 0.8) / 2
        let loss = bce_loss(&array![[0.9, 0.2]], &array![[1.0, 0.0]]);
        assert_relative_eq!(loss, 0.16425203348601776, epsilon = 1e-12);
    }

    #[test]
    fn bce_clipping_keeps_loss_finite() {
        let loss = bce_loss(&array![[0.0]], &array![[0.0]]);
        // -ln(1 - 1e-7)
        assert_relative_eq!(loss, 1.0000000500029088e-7, epsilon = 1e-15);
        let worst = bce_loss(&array![[0.0]], &array![[1.0]]);
        assert!(worst.is_finite());
        assert_relative_eq!(worst, -(CLIP_EPSILON.ln()), epsilon = 1e-9);
    }

    #[test]
    fn bce_perfect_prediction_near_zero() {
        let loss = bce_loss(&array![[1.0, 0.0]], &array![[1.0, 0.0]]);
        assert!(loss < 1e-6);
    }

    fn tiny_model(seed: u64) -> MlpModel {
        MlpModel::new(
            3,
            2,
            &MlpConfig {
                hidden: vec![4, 3],
                seed,
            },
        )
        .unwrap()
    }

    #[test]
    fn glorot_bounds_respected() {
        let model = tiny_model(9);
        let r = (6.0_f64 / (3.0 + 4.0)).sqrt();
        for &w in model.layers[0].weights.iter() {
            assert!(w.abs() < r);
        }
        assert!(model.layers[0].bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn forward_outputs_probabilities() {
        let model = tiny_model(1);
        let x = array![[0.5, -1.0, 2.0], [0.0, 0.0, 0.0]];
        let y = model.forward_batch(&x).unwrap();
        assert_eq!(y.dim(), (2, 2));
        for &v in y.iter() {
            assert!(v > 0.0 && v < 1.0);
        }
        let single = model.forward(&array![0.5, -1.0, 2.0]).unwrap();
        assert_relative_eq!(single[0], y[[0, 0]], epsilon = 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut model = tiny_model(3);
        let x = array![[0.3, -0.7, 1.2], [1.0, 0.4, -0.2], [0.0, 1.0, 0.5]];
        let y = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let (grads, _) = model.gradients(&x, &y).unwrap();
        let h = 1e-6;
        for l in 0..model.layers.len() {
            for idx in 0..model.layers[l].weights.len() {
                let orig = model.layers[l].weights.as_slice().unwrap()[idx];
                model.layers[l].weights.as_slice_mut().unwrap()[idx] = orig + h;
                let up = bce_loss(&model.forward_batch(&x).unwrap(), &y);
                model.layers[l].weights.as_slice_mut().unwrap()[idx] = orig - h;
                let down = bce_loss(&model.forward_batch(&x).unwrap(), &y);
                model.layers[l].weights.as_slice_mut().unwrap()[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads[l].weights.as_slice().unwrap()[idx];
                assert_relative_eq!(analytic, numeric, epsilon = 1e-7, max_relative = 1e-5);
            }
            for idx in 0..model.layers[l].bias.len() {
                let orig = model.layers[l].bias[idx];
                model.layers[l].bias[idx] = orig + h;
                let up = bce_loss(&model.forward_batch(&x).unwrap(), &y);
                model.layers[l].bias[idx] = orig - h;
                let down = bce_loss(&model.forward_batch(&x).unwrap(), &y);
                model.layers[l].bias[idx] = orig;
                let numeric = (up - down) / (2.0 * h);
                assert_relative_eq!(
                    grads[l].bias[idx],
                    numeric,
                    epsilon = 1e-7,
                    max_relative = 1e-5
                );
            }
        }
    }

    #[test]
    fn training_reduces_loss_on_learnable_mapping() {
        // exposure = input pattern itself: identity-ish mapping
        let n = 64;
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let x = Array2::from_shape_fn((n, 3), |_| if rng.random::<f64>() > 0.5 { 1.0 } else { 0.0 });
        let y = x.clone().slice_move(ndarray::s![.., 0..2]);
        let mut model = tiny_model(5);
        let before = bce_loss(&model.forward_batch(&x).unwrap(), &y);
        let report = train(
            &mut model,
            &x,
            &y,
            &TrainConfig {
                epochs: 150,
                batch_size: 16,
                learning_rate: 5e-2,
                val_fraction: 0.25,
                patience: None,
                shuffle: true,
                seed: 2,
            },
            None,
        )
        .unwrap();
        let after = bce_loss(&model.forward_batch(&x).unwrap(), &y);
        assert!(
            after < before * 0.5,
            "loss should at least halve: {before} -> {after}"
        );
        assert_eq!(report.train_losses.len(), report.epochs_run);
    }

    #[test]
    fn training_is_deterministic() {
        let x = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let y = array![[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]];
        let run = || {
            let mut m = tiny_model(7);
            let cfg = TrainConfig {
                epochs: 30,
                batch_size: 2,
                learning_rate: 1e-2,
                val_fraction: 0.0,
                patience: None,
                shuffle: true,
                seed: 9,
            };
            train(&mut m, &x, &y, &cfg, None).unwrap();
            m
        };
        let a = run();
        let b = run();
        for (la, lb) in a.layers.iter().zip(&b.layers) {
            assert_eq!(la.weights, lb.weights);
            assert_eq!(la.bias, lb.bias);
        }
    }

    #[test]
    fn early_stopping_restores_best_weights() {
        let x = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let y = array![[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]];
        let mut m = tiny_model(7);
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 4,
            learning_rate: 0.5, // aggressive on purpose, to force oscillation
            val_fraction: 0.25,
            patience: Some(5),
            shuffle: true,
            seed: 9,
        };
        let report = train(&mut m, &x, &y, &cfg, None).unwrap();
        assert!(report.best_epoch < report.epochs_run);
        // restored weights reproduce the reported best validation loss
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..4).collect();
        order.shuffle(&mut rng);
        let val = x.select(Axis(0), &order[3..]);
        let val_y = y.select(Axis(0), &order[3..]);
        let loss = bce_loss(&m.forward_batch(&val).unwrap(), &val_y);
        assert_relative_eq!(loss, report.best_val_loss, epsilon = 1e-12);
    }

    #[test]
    fn explicit_validation_set_drives_stopping_loss() {
        let x = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let y = array![[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]];
        let vx = array![[1.0, 1.0, 1.0], [0.0, 0.0, 0.0]];
        let vy = array![[1.0, 0.0], [0.0, 1.0]];
        let mut m = tiny_model(7);
        let cfg = TrainConfig {
            epochs: 40,
            batch_size: 2,
            learning_rate: 1e-2,
            val_fraction: 0.25, // ignored: explicit validation provided
            patience: Some(10),
            shuffle: true,
            seed: 3,
        };
        let report = train(&mut m, &x, &y, &cfg, Some((&vx, &vy))).unwrap();
        let loss = bce_loss(&m.forward_batch(&vx).unwrap(), &vy);
        assert_relative_eq!(loss, report.best_val_loss, epsilon = 1e-12);
    }

    #[test]
    fn unshuffled_split_holds_out_the_tail() {
        let x = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let y = array![[0.0, 1.0], [1.0, 0.0], [1.0, 1.0], [0.0, 0.0]];
        let mut m = tiny_model(7);
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            learning_rate: 1e-3,
            val_fraction: 0.25,
            patience: None,
            shuffle: false,
            seed: 0,
        };
        let report = train(&mut m, &x, &y, &cfg, None).unwrap();
        let tail_x = x.select(Axis(0), &[3]);
        let tail_y = y.select(Axis(0), &[3]);
        let loss = bce_loss(&m.forward_batch(&tail_x).unwrap(), &tail_y);
        assert_relative_eq!(loss, report.best_val_loss, epsilon = 1e-12);
    }

    #[test]
    fn gradients_negate_when_targets_flip_at_zero_weights() {
        // With all-zero weights the prediction is 0.5 everywhere, so the
        // output delta for targets e and 1-e must be exact negations.
        let mut model = MlpModel::new(3, 2, &MlpConfig { hidden: vec![], seed: 0 }).unwrap();
        model.layers[0].weights.fill(0.0);
        let x = array![[0.0, 1.0, 0.0], [1.0, 0.0, 1.0]];
        let e = array![[0.0, 1.0], [1.0, 0.0]];
        let flipped = e.mapv(|v| 1.0 - v);
        let (ga, _) = model.gradients(&x, &e).unwrap();
        let (gb, _) = model.gradients(&x, &flipped).unwrap();
        for (a, b) in ga.iter().zip(&gb) {
            assert_eq!(a.weights, b.weights.mapv(|v| -v));
            assert_eq!(a.bias, b.bias.mapv(|v| -v));
        }
    }

    #[test]
    fn full_batch_loss_is_monotone_on_convex_problem() {
        // No hidden layers makes the loss convex in the weights; small
        // full-batch steps must not increase it.
        let n = 32;
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((n, 4), |_| if rng.random::<f64>() > 0.5 { 1.0 } else { 0.0 });
        let y = x.clone().slice_move(ndarray::s![.., 0..3]);
        let mut model = MlpModel::new(4, 3, &MlpConfig { hidden: vec![], seed: 1 }).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: n,
            learning_rate: 1e-4,
            val_fraction: 0.0,
            patience: None,
            shuffle: false,
            seed: 0,
        };
        let report = train(&mut model, &x, &y, &cfg, None).unwrap();
        for w in report.train_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "loss rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = tiny_model(13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = MlpModel::load(&path).unwrap();
        assert_eq!(back.n_inputs, model.n_inputs);
        let x = array![[0.1, 0.2, 0.3]];
        assert_eq!(
            model.forward_batch(&x).unwrap(),
            back.forward_batch(&x).unwrap()
        );
    }

    #[test]
    fn load_rejects_inconsistent_shapes() {
        let model = tiny_model(13);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        let mut json = serde_json::to_value(&model).unwrap();
        json["n_outputs"] = serde_json::json!(99);
        std::fs::write(&path, serde_json::to_string(&json).unwrap()).unwrap();
        assert!(MlpModel::load(&path).is_err());
    }

    #[test]
    fn input_width_mismatch_is_an_error() {
        let model = tiny_model(1);
        let err = model.forward_batch(&array![[1.0, 2.0]]).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }
}
