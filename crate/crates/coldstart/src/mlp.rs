//! Minimal feedforward network: ReLU hidden layers, linear output, Adam on
//! the mean squared error, and a reduce-on-plateau learning-rate schedule.
//!
//! Activations apply after every hidden affine transform; raw inputs are not
//! rectified (that would clip negative observations). He-uniform init, one
//! seeded shuffle fixes the validation split (the last fraction of rows),
//! and per-epoch shuffles come from the same seeded stream, so training is
//! bit-reproducible for a fixed seed.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::Readout;
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input, hidden..., output sizes.
    pub layer_dims: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_init: f64,
    /// Epochs without a >= 1e-8 validation improvement before halving.
    pub plateau_patience: usize,
    pub lr_halving: bool,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config("layer_dims needs at least input and output".into()));
        }
        if self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("layer dimensions must be positive".into()));
        }
        if !(self.lr_init > 0.0) {
            return Err(Error::Config("initial learning rate must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("epochs and batch_size must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::Config("validation_fraction must lie in (0,1)".into()));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("plateau_patience must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Per layer, out x in.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub history: Vec<EpochStats>,
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.weights.iter().map(|w| w.nrows()));
        dims
    }
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Batched forward pass; rows are samples.
pub fn forward_batch(model: &MlpModel, x: &ArrayView2<f64>) -> Array2<f64> {
    let last = model.weights.len() - 1;
    let mut a = x.to_owned();
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        let mut z = a.dot(&w.t());
        z += &b.view().insert_axis(Axis(0));
        if l < last {
            z.mapv_inplace(relu);
        }
        a = z;
    }
    a
}

/// Single-sample forward pass.
pub fn forward(model: &MlpModel, x: &ArrayView1<f64>) -> Array1<f64> {
    let row = x.insert_axis(Axis(0));
    forward_batch(model, &row).row(0).to_owned()
}

impl Readout for MlpModel {
    fn predict(&self, state: &ArrayView1<f64>) -> Array1<f64> {
        forward(self, state)
    }

    fn output_dim(&self) -> usize {
        MlpModel::output_dim(self)
    }
}

/// Mean squared error over all entries of the prediction matrix.
pub fn mse_loss(model: &MlpModel, x: &ArrayView2<f64>, y: &ArrayView2<f64>) -> f64 {
    let pred = forward_batch(model, x);
    let diff = &pred - y;
    diff.iter().map(|v| v * v).sum::<f64>() / diff.len() as f64
}

/// Loss and analytic gradients for one batch; exposed for the finite
/// difference check and used by the Adam loop.
pub fn mse_and_gradients(
    model: &MlpModel,
    x: &ArrayView2<f64>,
    y: &ArrayView2<f64>,
) -> (f64, Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let n_layers = model.weights.len();
    let batch = x.nrows();

    // Forward pass keeping post-activation outputs per layer.
    let mut activations: Vec<Array2<f64>> = Vec::with_capacity(n_layers + 1);
    activations.push(x.to_owned());
    for l in 0..n_layers {
        let mut z = activations[l].dot(&model.weights[l].t());
        z += &model.biases[l].view().insert_axis(Axis(0));
        if l < n_layers - 1 {
            z.mapv_inplace(relu);
        }
        activations.push(z);
    }

    let pred = &activations[n_layers];
    let diff = pred - y;
    let total = (batch * pred.ncols()) as f64;
    let loss = diff.iter().map(|v| v * v).sum::<f64>() / total;

    let mut grad_w: Vec<Array2<f64>> = model.weights.iter().map(|w| Array2::zeros(w.dim())).collect();
    let mut grad_b: Vec<Array1<f64>> = model.biases.iter().map(|b| Array1::zeros(b.len())).collect();

    let mut delta = diff * (2.0 / total);
    for l in (0..n_layers).rev() {
        grad_w[l] = delta.t().dot(&activations[l]);
        grad_b[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&model.weights[l]);
            // ReLU gate: the stored activation is zero exactly where the
            // pre-activation was clipped.
            back.zip_mut_with(&activations[l], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
            delta = back;
        }
    }
    (loss, grad_w, grad_b)
}

/// He-uniform initialization from ChaCha substream 0 of the seed, layer by
/// layer, weights then bias (biases start at zero).
fn init_model(config: &MlpConfig) -> MlpModel {
    let mut rng = substream(config.seed, 0);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..config.layer_dims.len() - 1 {
        let fan_in = config.layer_dims[l];
        let fan_out = config.layer_dims[l + 1];
        let limit = (6.0 / fan_in as f64).sqrt();
        weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
            (2.0 * rng.gen::<f64>() - 1.0) * limit
        }));
        biases.push(Array1::zeros(fan_out));
    }
    MlpModel {
        weights,
        biases,
        history: Vec::new(),
    }
}

struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &MlpModel) -> Self {
        Self {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grad_w: &[Array2<f64>], grad_b: &[Array1<f64>], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t);
        let bc2 = 1.0 - BETA2.powi(self.t);
        for l in 0..model.weights.len() {
            self.m_w[l].zip_mut_with(&grad_w[l], |m, &g| *m = BETA1 * *m + (1.0 - BETA1) * g);
            self.v_w[l].zip_mut_with(&grad_w[l], |v, &g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
            {
                let m = &self.m_w[l];
                let v = &self.v_w[l];
                let w = &mut model.weights[l];
                ndarray::Zip::from(w).and(m).and(v).for_each(|w, &m, &v| {
                    *w -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                });
            }
            self.m_b[l].zip_mut_with(&grad_b[l], |m, &g| *m = BETA1 * *m + (1.0 - BETA1) * g);
            self.v_b[l].zip_mut_with(&grad_b[l], |v, &g| *v = BETA2 * *v + (1.0 - BETA2) * g * g);
            {
                let m = &self.m_b[l];
                let v = &self.v_b[l];
                let b = &mut model.biases[l];
                ndarray::Zip::from(b).and(m).and(v).for_each(|b, &m, &v| {
                    *b -= lr * (m / bc1) / ((v / bc2).sqrt() + ADAM_EPS);
                });
            }
        }
    }
}

/// Trains on `(inputs, targets)` rows and returns the final-epoch model with
/// its loss history.
pub fn train(config: &MlpConfig, inputs: &Array2<f64>, targets: &Array2<f64>) -> Result<MlpModel> {
    config.validate()?;
    let n = inputs.nrows();
    if targets.nrows() != n {
        return Err(Error::LengthMismatch {
            left: n,
            right: targets.nrows(),
        });
    }
    if inputs.ncols() != config.layer_dims[0] {
        return Err(Error::DimensionMismatch {
            expected: config.layer_dims[0],
            got: inputs.ncols(),
            context: "mlp input width",
        });
    }
    if targets.ncols() != *config.layer_dims.last().unwrap() {
        return Err(Error::DimensionMismatch {
            expected: *config.layer_dims.last().unwrap(),
            got: targets.ncols(),
            context: "mlp target width",
        });
    }
    if n < 2 {
        return Err(Error::InsufficientData { needed: 2, got: n });
    }

    // One seeded shuffle, then the last fraction of rows becomes validation.
    let mut order: Vec<usize> = (0..n).collect();
    let mut split_rng = substream(config.seed, 1);
    for i in (1..n).rev() {
        let j = split_rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let n_val = ((config.validation_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let n_train = n - n_val;
    let take = |idxs: &[usize]| {
        let mut x = Array2::zeros((idxs.len(), inputs.ncols()));
        let mut y = Array2::zeros((idxs.len(), targets.ncols()));
        for (r, &i) in idxs.iter().enumerate() {
            x.row_mut(r).assign(&inputs.row(i));
            y.row_mut(r).assign(&targets.row(i));
        }
        (x, y)
    };
    let (train_x, train_y) = take(&order[..n_train]);
    let (val_x, val_y) = take(&order[n_train..]);

    let batch_size = config.batch_size.min(n_train);
    let mut model = init_model(config);
    let mut adam = Adam::new(&model);
    let mut lr = config.lr_init;
    let mut best_val = f64::INFINITY;
    let mut stale_epochs = 0usize;
    let mut epoch_rng = substream(config.seed, 2);
    let mut indices: Vec<usize> = (0..n_train).collect();

    for epoch in 0..config.epochs {
        for i in (1..n_train).rev() {
            let j = epoch_rng.gen_range(0..=i);
            indices.swap(i, j);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(batch_size) {
            let (bx, by) = take_rows(&train_x, &train_y, chunk);
            let (loss, grad_w, grad_b) = mse_and_gradients(&model, &bx.view(), &by.view());
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            adam.step(&mut model, &grad_w, &grad_b, lr);
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_loss = mse_loss(&model, &val_x.view(), &val_y.view());
        if !val_loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        model.history.push(EpochStats {
            train_loss,
            val_loss,
            lr,
        });

        if val_loss < best_val - 1e-8 {
            best_val = val_loss;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if config.lr_halving && stale_epochs >= config.plateau_patience {
                lr *= 0.5;
                stale_epochs = 0;
            }
        }
    }
    Ok(model)
}

fn take_rows(x: &Array2<f64>, y: &Array2<f64>, idxs: &[usize]) -> (Array2<f64>, Array2<f64>) {
    let mut bx = Array2::zeros((idxs.len(), x.ncols()));
    let mut by = Array2::zeros((idxs.len(), y.ncols()));
    for (r, &i) in idxs.iter().enumerate() {
        bx.row_mut(r).assign(&x.row(i));
        by.row_mut(r).assign(&y.row(i));
    }
    (bx, by)
}

/// Writes `{stem}_arch.json` plus one matrix dump per layer.
pub fn save_mlp(model: &MlpModel, dir: &Path, stem: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let arch = serde_json::json!({ "layer_dims": model.layer_dims() });
    std::fs::write(dir.join(format!("{stem}_arch.json")), arch.to_string())?;
    for (l, (w, b)) in model.weights.iter().zip(&model.biases).enumerate() {
        crate::matio::write_matrix(&dir.join(format!("{stem}_w{l}.mat")), w)?;
        let bl = b.clone().into_shape((b.len(), 1)).unwrap();
        crate::matio::write_matrix(&dir.join(format!("{stem}_b{l}.mat")), &bl)?;
    }
    Ok(())
}

/// Loads a model written by [`save_mlp`]. Training history is not persisted.
pub fn load_mlp(dir: &Path, stem: &str) -> Result<MlpModel> {
    let arch: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}_arch.json")))?)
            .map_err(|e| Error::Config(e.to_string()))?;
    let dims: Vec<usize> = arch["layer_dims"]
        .as_array()
        .ok_or_else(|| Error::Config("bad architecture sidecar".into()))?
        .iter()
        .map(|v| v.as_u64().unwrap_or(0) as usize)
        .collect();
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..dims.len() - 1 {
        let w = crate::matio::read_matrix(&dir.join(format!("{stem}_w{l}.mat")))?;
        let b = crate::matio::read_matrix(&dir.join(format!("{stem}_b{l}.mat")))?;
        if w.dim() != (dims[l + 1], dims[l]) {
            return Err(Error::Config("weight dump inconsistent with architecture".into()));
        }
        weights.push(w);
        biases.push(b.column(0).to_owned());
    }
    Ok(MlpModel {
        weights,
        biases,
        history: Vec::new(),
    })
}
