//! Minibatch Adam training of the autoencoder with hand-rolled
//! backpropagation through the clamp-aware cross-entropy objective.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aenn::{bce_term, Activation, Layer, LayerSpec, NetworkParams, CLAMP_EPS};
use crate::error::{Error, Result};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_epochs: usize,
    /// Epochs without a `min_delta` improvement before stopping.
    pub patience: usize,
    pub min_delta: f64,
    /// Seeds both the weight initialization and the epoch shuffles.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            max_epochs: 100,
            patience: 10,
            min_delta: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Model("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Model(format!("bad learning_rate {}", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Model(format!("{name} {b} outside (0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Model("epsilon must be positive".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Model("max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Model("patience must be positive".into()));
        }
        if self.min_delta < 0.0 {
            return Err(Error::Model("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Snapshot with the lowest full-data epoch loss; `epoch` records when
    /// it was taken (0 means the untrained initialization won).
    pub params: NetworkParams,
    /// Full-data mean loss before training (index 0) and after each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Mean over rows of the summed per-dimension cross-entropy; the training
/// objective.
pub fn batch_mean_loss(params: &NetworkParams, batch: ArrayView2<'_, f64>) -> Result<f64> {
    check_training_batch(params, batch)?;
    Ok(mean_loss_unchecked(params, batch))
}

fn mean_loss_unchecked(params: &NetworkParams, batch: ArrayView2<'_, f64>) -> f64 {
    let recon = params.reconstruct_batch(batch);
    let mut total = 0.0;
    for (x, c) in batch.outer_iter().zip(recon.outer_iter()) {
        let mut row = 0.0;
        for (&a, &b) in x.iter().zip(c.iter()) {
            row += bce_term(a, b);
        }
        total += row;
    }
    total / batch.nrows() as f64
}

fn check_training_batch(params: &NetworkParams, batch: ArrayView2<'_, f64>) -> Result<()> {
    if batch.nrows() == 0 {
        return Err(Error::Model("empty batch".into()));
    }
    if batch.ncols() != params.input_dims() {
        return Err(Error::Model(format!(
            "batch width {} does not match the {}-dim input layer",
            batch.ncols(),
            params.input_dims()
        )));
    }
    if batch.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Model("training data outside [0, 1]".into()));
    }
    Ok(())
}

/// Mean batch loss plus its gradient with respect to every weight and bias.
///
/// Where the reconstruction clamp is active the local gradient is exactly
/// zero, matching the flat loss surface there.
pub fn loss_gradients(
    params: &NetworkParams,
    batch: ArrayView2<'_, f64>,
) -> Result<(f64, Vec<Layer>)> {
    check_training_batch(params, batch)?;
    let b = batch.nrows() as f64;
    let trace = params.forward_trace(batch);
    let recon = trace.post.last().unwrap();

    let mut loss = 0.0;
    for (x, c) in batch.outer_iter().zip(recon.outer_iter()) {
        for (&a, &v) in x.iter().zip(c.iter()) {
            loss += bce_term(a, v);
        }
    }
    loss /= b;

    // dL/dz of the sigmoid output layer collapses to (xhat - x) / B, except
    // where the clamp flattens the loss.
    let mut delta = Array2::zeros(recon.dim());
    for ((i, d), g) in delta.indexed_iter_mut() {
        let c = recon[[i, d]];
        if c > CLAMP_EPS && c < 1.0 - CLAMP_EPS {
            *g = (c - batch[[i, d]]) / b;
        }
    }

    let n_layers = params.layers.len();
    let mut grads: Vec<Layer> = Vec::with_capacity(n_layers);
    for l in (0..n_layers).rev() {
        let input = if l == 0 { batch.to_owned() } else { trace.post[l - 1].clone() };
        let grad_w = input.t().dot(&delta);
        let grad_b = delta.sum_axis(Axis(0));
        grads.push(Layer { weight: grad_w, bias: grad_b });
        if l > 0 {
            let back = delta.dot(&params.layers[l].weight.t());
            let pre = &trace.pre[l - 1];
            delta = match params.spec.activation(l - 1) {
                Activation::Identity => back,
                Activation::LeakyRelu(alpha) => {
                    let mut d = back;
                    d.zip_mut_with(pre, |g, &z| {
                        if z < 0.0 {
                            *g *= alpha;
                        }
                    });
                    d
                }
                // the sigmoid only ever sits on the final layer, whose
                // gradient was folded into the initial delta
                Activation::Sigmoid => unreachable!("sigmoid before the final layer"),
            };
        }
    }
    grads.reverse();
    Ok((loss, grads))
}

struct AdamState {
    m: Vec<Layer>,
    v: Vec<Layer>,
    t: u64,
}

impl AdamState {
    fn new(params: &NetworkParams) -> Self {
        let zeros = |l: &Layer| Layer {
            weight: Array2::zeros(l.weight.dim()),
            bias: Array1::zeros(l.bias.len()),
        };
        Self {
            m: params.layers.iter().map(zeros).collect(),
            v: params.layers.iter().map(zeros).collect(),
            t: 0,
        }
    }

    fn step(&mut self, params: &mut NetworkParams, grads: &[Layer], cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (l, grad) in grads.iter().enumerate() {
            update(
                params.layers[l].weight.iter_mut(),
                self.m[l].weight.iter_mut(),
                self.v[l].weight.iter_mut(),
                grad.weight.iter(),
                cfg,
                bc1,
                bc2,
            );
            update(
                params.layers[l].bias.iter_mut(),
                self.m[l].bias.iter_mut(),
                self.v[l].bias.iter_mut(),
                grad.bias.iter(),
                cfg,
                bc1,
                bc2,
            );
        }
    }
}

fn update<'a>(
    theta: impl Iterator<Item = &'a mut f64>,
    m: impl Iterator<Item = &'a mut f64>,
    v: impl Iterator<Item = &'a mut f64>,
    g: impl Iterator<Item = &'a f64>,
    cfg: &TrainConfig,
    bc1: f64,
    bc2: f64,
) {
    for (((th, m), v), &g) in theta.zip(m).zip(v).zip(g) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mhat = *m / bc1;
        let vhat = *v / bc2;
        *th -= cfg.learning_rate * mhat / (vhat.sqrt() + cfg.epsilon);
    }
}

/// Trains a fresh network on `data` and returns the best epoch snapshot.
///
/// Early stopping: after `patience` consecutive epochs without the full-data
/// loss improving by more than `min_delta` over the best significant level,
/// training halts. A non-finite epoch loss aborts with a divergence error.
pub fn train(data: ArrayView2<'_, f64>, spec: &LayerSpec, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = NetworkParams::init(spec, cfg.seed)?;
    check_training_batch(&params, data)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "epoch-shuffle", 0));
    let mut order: Vec<usize> = (0..data.nrows()).collect();

    let init_loss = mean_loss_unchecked(&params, data);
    let mut epoch_losses = vec![init_loss];
    let mut best_loss = init_loss;
    let mut best = params.clone();
    let mut reference = init_loss;
    let mut stale = 0usize;
    let mut adam = AdamState::new(&params);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.select(Axis(0), chunk);
            let (_, grads) = loss_gradients(&params, batch.view())?;
            adam.step(&mut params, &grads, cfg);
        }
        let loss = mean_loss_unchecked(&params, data);
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        epoch_losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best = params.clone();
            best.epoch = epoch;
        }
        if loss < reference - cfg.min_delta {
            reference = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best, epoch_losses })
}
