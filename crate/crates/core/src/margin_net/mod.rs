//! Learned, smooth surrogate of the MTV margin.
//!
//! A fully connected `3 -> 62 -> 62 -> 1` network with tanh hidden layers maps
//! the relative pose `(x, y, psi)` of robot `j` in robot `i`'s frame to the
//! margin. Inputs are normalized per dimension to `[-1, 1]` before the first
//! layer; the normalization is part of the model and of its derivatives.

mod dataset;
mod io;
mod train;

pub use dataset::{estimate_error_bound, generate_dataset, margin_target, ErrorBound, Sample};
pub use io::{load_model, parse_model, save_model, write_model};
pub use train::{train, TrainingConfig, TrainingReport};

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::vehicle::VehicleParams;

pub const DEFAULT_LAYER_DIMS: [usize; 4] = [3, 62, 62, 1];

/// Axis-aligned box of relative poses the network was trained on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl InputBox {
    /// `x, y in [-3 l_wb, 3 l_wb]`, `psi in [-pi, pi]`.
    pub fn for_vehicle(params: &VehicleParams) -> Self {
        let r = 3.0 * params.wheelbase;
        Self {
            lo: [-r, -r, -PI],
            hi: [r, r, PI],
        }
    }

    /// Closed-box membership. Bounds reconstructed from a saved model may be
    /// off by an ulp, so the faces get a tiny slack.
    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|n| {
            let slack = 1e-12 * (1.0 + self.lo[n].abs().max(self.hi[n].abs()));
            p[n] >= self.lo[n] - slack && p[n] <= self.hi[n] + slack
        })
    }

    /// Offset and scale mapping the box onto `[-1, 1]^3`.
    pub fn normalization(&self) -> ([f64; 3], [f64; 3]) {
        let offset = std::array::from_fn(|n| 0.5 * (self.lo[n] + self.hi[n]));
        let scale = std::array::from_fn(|n| 2.0 / (self.hi[n] - self.lo[n]));
        (offset, scale)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> [f64; 3] {
        std::array::from_fn(|n| rng.random_range(self.lo[n]..=self.hi[n]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
        }
    }
}

/// One affine layer, `weights` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub input_offset: [f64; 3],
    pub input_scale: [f64; 3],
    pub trained_range: InputBox,
}

impl MlpParams {
    /// All-zero network over `dims` (first entry 3, last entry 1).
    pub fn zeros(dims: &[usize], range: InputBox) -> Self {
        let (input_offset, input_scale) = range.normalization();
        Self {
            layers: dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect(),
            activation: Activation::Tanh,
            input_offset,
            input_scale,
            trained_range: range,
        }
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init(dims: &[usize], range: InputBox, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(dims, range);
        for layer in &mut params.layers {
            let bound = (6.0 / (layer.inputs() + layer.outputs()) as f64).sqrt();
            layer.weights.mapv_inplace(|_| rng.random_range(-bound..bound));
        }
        params
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs()];
        dims.extend(self.layers.iter().map(Layer::outputs));
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
            && self.input_offset.iter().chain(&self.input_scale).all(|v| v.is_finite())
    }

    fn normalize(&self, input: &[f64; 3]) -> Array1<f64> {
        Array1::from_iter((0..3).map(|n| (input[n] - self.input_offset[n]) * self.input_scale[n]))
    }

    fn output_layer(&self) -> &Layer {
        self.layers.last().expect("network has at least one layer")
    }

    fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }
}

/// Network output at `input`.
pub fn forward(params: &MlpParams, input: &[f64; 3]) -> f64 {
    let mut a = params.normalize(input);
    for layer in params.hidden_layers() {
        a = (layer.weights.dot(&a) + &layer.bias).mapv(f64::tanh);
    }
    let out = params.output_layer();
    out.weights.row(0).dot(&a) + out.bias[0]
}

/// Gradient of [`forward`] with respect to the raw (unnormalized) input,
/// by reverse-mode accumulation.
pub fn gradient(params: &MlpParams, input: &[f64; 3]) -> [f64; 3] {
    let mut activations = Vec::with_capacity(params.layers.len());
    let mut a = params.normalize(input);
    for layer in params.hidden_layers() {
        let next = (layer.weights.dot(&a) + &layer.bias).mapv(f64::tanh);
        activations.push(next.clone());
        a = next;
    }

    let mut adjoint = params.output_layer().weights.row(0).to_owned();
    for (layer, act) in params.hidden_layers().iter().zip(&activations).rev() {
        let pre_adjoint = &adjoint * &act.mapv(|t| 1.0 - t * t);
        adjoint = layer.weights.t().dot(&pre_adjoint);
    }
    std::array::from_fn(|n| adjoint[n] * params.input_scale[n])
}

/// Upper-triangle index of symmetric 3x3 entries.
const SYM: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

/// Value, gradient and Hessian in one forward-mode pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: [f64; 3],
    pub hessian: [[f64; 3]; 3],
}

/// Propagates per-neuron value, Jacobian (n x 3) and the upper triangle of
/// the Hessian (n x 6) through the network. Only the upper triangle is
/// computed, so the assembled Hessian is exactly symmetric.
pub fn evaluate(params: &MlpParams, input: &[f64; 3]) -> Evaluation {
    let mut a = params.normalize(input);
    let mut jac = Array2::<f64>::zeros((3, 3));
    for n in 0..3 {
        jac[[n, n]] = 1.0;
    }
    let mut hess = Array2::<f64>::zeros((3, 6));

    for layer in params.hidden_layers() {
        let pre = layer.weights.dot(&a) + &layer.bias;
        let pre_jac = layer.weights.dot(&jac);
        let pre_hess = layer.weights.dot(&hess);
        let t = pre.mapv(f64::tanh);
        let d1 = t.mapv(|t| 1.0 - t * t);
        let mut next_jac = pre_jac.clone();
        let mut next_hess = pre_hess;
        for k in 0..t.len() {
            let d2 = -2.0 * t[k] * d1[k];
            for n in 0..3 {
                next_jac[[k, n]] *= d1[k];
            }
            for (e, &(p, q)) in SYM.iter().enumerate() {
                next_hess[[k, e]] = d1[k] * next_hess[[k, e]] + d2 * pre_jac[[k, p]] * pre_jac[[k, q]];
            }
        }
        a = t;
        jac = next_jac;
        hess = next_hess;
    }

    let out = params.output_layer();
    let w = out.weights.row(0);
    let value = w.dot(&a) + out.bias[0];
    let gz = w.dot(&jac);
    let hz = w.dot(&hess);
    let s = params.input_scale;
    let gradient = std::array::from_fn(|n| gz[n] * s[n]);
    let mut hessian = [[0.0; 3]; 3];
    for (e, &(p, q)) in SYM.iter().enumerate() {
        let v = hz[e] * s[p] * s[q];
        hessian[p][q] = v;
        hessian[q][p] = v;
    }
    Evaluation { value, gradient, hessian }
}

pub fn hessian(params: &MlpParams, input: &[f64; 3]) -> [[f64; 3]; 3] {
    evaluate(params, input).hessian
}
