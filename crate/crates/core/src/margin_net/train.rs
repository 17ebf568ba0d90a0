//! Mini-batch Adam regression on the MSE loss.
//!
//! Training is single-threaded and every random choice (initialization,
//! validation split, shuffling) is drawn from one seeded stream, so a given
//! dataset and config always produce bit-identical parameters.

use std::time::Instant;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{InputBox, MlpParams, Sample, DEFAULT_LAYER_DIMS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub sample_count: usize,
    pub seed: u64,
    pub layer_dims: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Factor applied to the learning rate after `patience` epochs without
    /// validation improvement.
    pub lr_decay: f64,
    pub patience: usize,
    /// Training stops once the decayed learning rate falls below this.
    pub min_learning_rate: f64,
    pub max_epochs: usize,
    pub validation_fraction: f64,
    /// Half-width of the uniform draw for first-layer weights and biases.
    pub first_layer_init: f64,
    /// Validation MSE that counts as converged.
    pub target_mse: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            sample_count: 70_000,
            seed: 7,
            layer_dims: DEFAULT_LAYER_DIMS.to_vec(),
            batch_size: 256,
            learning_rate: 1e-3,
            lr_decay: 0.5,
            patience: 25,
            min_learning_rate: 2e-5,
            max_epochs: 2000,
            validation_fraction: 0.1,
            first_layer_init: 3.0,
            target_mse: 1e-4,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.sample_count == 0 {
            return bad("sample_count must be positive".into());
        }
        if self.layer_dims.len() < 2 || self.layer_dims[0] != 3 || *self.layer_dims.last().unwrap() != 1 {
            return bad(format!("layer_dims must start at 3 and end at 1, got {:?}", self.layer_dims));
        }
        if self.layer_dims.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("need learning_rate > 0 and lr_decay in (0, 1)".into());
        }
        if !(self.first_layer_init > 0.0 && self.first_layer_init.is_finite()) {
            return bad("first_layer_init must be positive".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub final_learning_rate: f64,
    pub seconds: f64,
}

struct Moments {
    m_w: Array2<f64>,
    v_w: Array2<f64>,
    m_b: Array1<f64>,
    v_b: Array1<f64>,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    moments: Vec<Moments>,
}

impl Adam {
    fn new(net: &MlpParams) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: net
                .layers
                .iter()
                .map(|l| Moments {
                    m_w: Array2::zeros(l.weights.raw_dim()),
                    v_w: Array2::zeros(l.weights.raw_dim()),
                    m_b: Array1::zeros(l.bias.raw_dim()),
                    v_b: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    fn step(&mut self, net: &mut MlpParams, grads: &[(Array2<f64>, Array1<f64>)], lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let alpha = lr * c2.sqrt() / c1;
        for ((layer, mom), (gw, gb)) in net.layers.iter_mut().zip(&mut self.moments).zip(grads) {
            ndarray::Zip::from(&mut layer.weights)
                .and(&mut mom.m_w)
                .and(&mut mom.v_w)
                .and(gw)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= alpha * *m / (v.sqrt() + eps);
                });
            ndarray::Zip::from(&mut layer.bias)
                .and(&mut mom.m_b)
                .and(&mut mom.v_b)
                .and(gb)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *w -= alpha * *m / (v.sqrt() + eps);
                });
        }
    }
}

fn normalized_inputs(net: &MlpParams, samples: &[Sample]) -> Array2<f64> {
    let mut x = Array2::zeros((samples.len(), 3));
    for (r, s) in samples.iter().enumerate() {
        for n in 0..3 {
            x[[r, n]] = (s.input[n] - net.input_offset[n]) * net.input_scale[n];
        }
    }
    x
}

/// Batch forward pass. Returns the activations of every layer, the first
/// entry being the input batch and the last the (linear) output.
fn forward_batch(net: &MlpParams, x: Array2<f64>) -> Vec<Array2<f64>> {
    let mut acts = Vec::with_capacity(net.layers.len() + 1);
    acts.push(x);
    let last = net.layers.len() - 1;
    for (n, layer) in net.layers.iter().enumerate() {
        let mut z = acts[n].dot(&layer.weights.t());
        z += &layer.bias;
        if n < last {
            z.mapv_inplace(f64::tanh);
        }
        acts.push(z);
    }
    acts
}

fn mse(net: &MlpParams, x: &Array2<f64>, y: &Array1<f64>) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let out = forward_batch(net, x.clone()).pop().unwrap();
    out.column(0).iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
}

/// Gradients of the mean squared error over one batch.
fn batch_gradients(net: &MlpParams, x: Array2<f64>, y: &Array1<f64>) -> Vec<(Array2<f64>, Array1<f64>)> {
    let acts = forward_batch(net, x);
    let rows = y.len() as f64;
    let out = acts.last().unwrap();
    // d loss / d output
    let mut delta = Array2::zeros(out.raw_dim());
    for (r, t) in y.iter().enumerate() {
        delta[[r, 0]] = 2.0 * (out[[r, 0]] - t) / rows;
    }

    let mut grads = Vec::with_capacity(net.layers.len());
    for n in (0..net.layers.len()).rev() {
        let input = &acts[n];
        let gw = delta.t().dot(input);
        let gb = delta.sum_axis(Axis(0));
        grads.push((gw, gb));
        if n > 0 {
            let mut back = delta.dot(&net.layers[n].weights);
            ndarray::Zip::from(&mut back).and(input).for_each(|d, &a| *d *= 1.0 - a * a);
            delta = back;
        }
    }
    grads.reverse();
    grads
}

/// Fits a fresh network to `dataset`. Returns the parameters with the best
/// validation loss seen.
pub fn train(dataset: &[Sample], config: &TrainingConfig, range: InputBox) -> Result<(MlpParams, TrainingReport)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidConfig("training dataset is empty".into()));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = MlpParams::init(&config.layer_dims, range, rand::Rng::random(&mut rng));
    // Start from the zero function; hidden layers pick up gradient once the
    // output weights move.
    net.layers.last_mut().unwrap().weights.fill(0.0);
    // The margin oscillates in the relative heading; small first-layer
    // weights leave the network nearly linear in it and training stalls.
    let s = config.first_layer_init;
    net.layers[0].weights.mapv_inplace(|_| rand::Rng::random_range(&mut rng, -s..=s));
    net.layers[0].bias.mapv_inplace(|_| rand::Rng::random_range(&mut rng, -s..=s));

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((dataset.len() as f64) * config.validation_fraction).round() as usize;
    let n_val = n_val.min(dataset.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize]| idx.iter().map(|&i| dataset[i]).collect::<Vec<_>>();
    let (train_set, val_set) = (pick(train_idx), pick(val_idx));

    let x_train = normalized_inputs(&net, &train_set);
    let y_train = Array1::from_iter(train_set.iter().map(|s| s.target));
    let x_val = normalized_inputs(&net, &val_set);
    let y_val = Array1::from_iter(val_set.iter().map(|s| s.target));
    let monitor = |net: &MlpParams| {
        if y_val.is_empty() {
            mse(net, &x_train, &y_train)
        } else {
            mse(net, &x_val, &y_val)
        }
    };

    let mut adam = Adam::new(&net);
    let mut lr = config.learning_rate;
    let mut best = (monitor(&net), net.clone(), 0usize);
    let mut stale = 0usize;
    let mut perm: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = 0;

    while epochs < config.max_epochs && lr >= config.min_learning_rate {
        perm.shuffle(&mut rng);
        for chunk in perm.chunks(config.batch_size) {
            let xb = x_train.select(Axis(0), chunk);
            let yb = y_train.select(Axis(0), chunk);
            let grads = batch_gradients(&net, xb, &yb);
            adam.step(&mut net, &grads, lr);
        }
        epochs += 1;

        let val = monitor(&net);
        if val < best.0 {
            best = (val, net.clone(), epochs);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                lr *= config.lr_decay;
                stale = 0;
            }
        }
        if epochs % 25 == 0 {
            log::debug!("epoch {epochs}: val mse {val:.3e} (best {:.3e}), lr {lr:.1e}", best.0);
        }
    }

    let (val_mse, net, best_epoch) = best;
    let report = TrainingReport {
        epochs,
        best_epoch,
        train_mse: mse(&net, &x_train, &y_train),
        val_mse,
        final_learning_rate: lr,
        seconds: started.elapsed().as_secs_f64(),
    };
    if config.max_epochs > 0 && !(val_mse <= config.target_mse) {
        return Err(Error::NotConverged {
            epochs,
            train_mse: report.train_mse,
            val_mse,
            target: config.target_mse,
        });
    }
    Ok((net, report))
}
