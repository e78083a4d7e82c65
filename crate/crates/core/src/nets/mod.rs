//! Predictor networks, the hypernetwork variational family, the Gaussian
//! prior and the Gaussian likelihood.
//!
//! Parameter vectors are flattened layer by layer: the weight matrix of a
//! layer (shape `fan_out × fan_in`) in row-major order, followed by its bias
//! vector. Every component that exchanges parameter vectors (training,
//! sampling, persistence, evaluation) relies on this order.

mod hypernet;
mod io;
mod likelihood;
mod predictor;

pub use hypernet::{HyperLeaves, HyperNet};
pub use io::{
    param_batch_from_bytes, param_batch_to_bytes, read_param_batch, write_param_batch,
    PARAM_BATCH_MAGIC,
};
pub use likelihood::{gaussian_log_lik, GaussianPrior, LikelihoodNoise, NoiseMode};
pub use predictor::{mlp_forward, predict_batch, predict_batch_node};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("likelihood noise must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Diff(#[from] crate::diffmath::DiffError),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

/// `e^x` for `x ≤ 0`, branch-free so that loops over slices vectorize.
/// Cody–Waite reduction by ln 2 and a degree-12 Taylor polynomial on
/// `|r| ≤ ln 2 / 2`; relative error within a few ulps.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LN2_HI: f64 = 6.931_471_803_691_238e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    // adding 1.5·2^52 rounds to the nearest integer and leaves it in the low bits
    const SHIFTER: f64 = 6_755_399_441_055_744.0;
    let x = if x < -700.0 { -700.0 } else { x };
    let shifted = x * std::f64::consts::LOG2_E + SHIFTER;
    let n = shifted - SHIFTER;
    let r = x - n * LN2_HI - n * LN2_LO;
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let k = shifted.to_bits().wrapping_sub(SHIFTER.to_bits());
    p * f64::from_bits(k.wrapping_add(1023) << 52)
}

#[inline(always)]
fn tanh_fast(x: f64) -> f64 {
    let e = exp_nonpositive(-2.0 * x.abs());
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Applies the activation to every element of `v`.
#[inline]
pub(crate) fn activate_in_place(act: Activation, v: &mut [f64]) {
    match act {
        Activation::Tanh => v.iter_mut().for_each(|z| *z = tanh_fast(*z)),
        Activation::Relu => v.iter_mut().for_each(|z| *z = z.max(0.0)),
    }
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => tanh_fast(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a = act(z)`.
    #[inline]
    pub fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected regression network with a single linear output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorArch {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
}

/// Position of one layer inside a flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerLayout {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl PredictorArch {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, activation: Activation) -> Self {
        assert!(input_dim > 0, "input dimension must be positive");
        assert!(
            hidden_widths.iter().all(|&w| w > 0),
            "hidden widths must be positive"
        );
        Self {
            input_dim,
            hidden_widths,
            activation,
        }
    }

    /// Single hidden layer of 50 tanh units on a 1-D input.
    pub fn wave() -> Self {
        Self::new(1, vec![50], Activation::Tanh)
    }

    /// Single hidden ReLU layer (50 units for small data sets, 100 for large).
    pub fn uci(input_dim: usize, width: usize) -> Self {
        Self::new(input_dim, vec![width], Activation::Relu)
    }

    pub fn output_dim(&self) -> usize {
        1
    }

    /// `(fan_in, fan_out)` for every layer including the output layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in &self.hidden_widths {
            dims.push((fan_in, w));
            fan_in = w;
        }
        dims.push((fan_in, 1));
        dims
    }

    pub fn layouts(&self) -> Vec<LayerLayout> {
        let mut offset = 0;
        self.layer_dims()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let l = LayerLayout {
                    fan_in,
                    fan_out,
                    weight_offset: offset,
                    bias_offset: offset + fan_in * fan_out,
                };
                offset += (fan_in + 1) * fan_out;
                l
            })
            .collect()
    }

    /// Total number of weights and biases, `Σ (fan_in + 1) · fan_out`.
    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// One dense layer in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `fan_out × fan_in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Flat encoding of all weights and biases of a predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(arch: &PredictorArch) -> Self {
        Self(vec![0.0; arch.num_params()])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn unflatten(&self, arch: &PredictorArch) -> Result<Vec<Layer>> {
        let d = arch.num_params();
        if self.0.len() != d {
            return Err(NetError::DimensionMismatch {
                what: "parameter vector",
                expected: d,
                got: self.0.len(),
            });
        }
        Ok(arch
            .layouts()
            .iter()
            .map(|l| {
                let w = &self.0[l.weight_offset..l.bias_offset];
                let b = &self.0[l.bias_offset..l.bias_offset + l.fan_out];
                Layer {
                    weight: Array2::from_shape_vec((l.fan_out, l.fan_in), w.to_vec()).unwrap(),
                    bias: Array1::from_vec(b.to_vec()),
                }
            })
            .collect())
    }

    pub fn flatten(layers: &[Layer]) -> Self {
        let mut out = Vec::new();
        for l in layers {
            out.extend(l.weight.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        Self(out)
    }
}

/// Negates the incoming weights and bias of hidden unit `unit` in the first
/// hidden layer and its outgoing weights. For odd activations (tanh) the
/// realized function is unchanged.
pub fn flip_hidden_unit(arch: &PredictorArch, theta: &mut [f64], unit: usize) {
    let layouts = arch.layouts();
    assert!(layouts.len() >= 2, "architecture has no hidden layer");
    let (first, next) = (layouts[0], layouts[1]);
    assert!(unit < first.fan_out);
    for k in 0..first.fan_in {
        theta[first.weight_offset + unit * first.fan_in + k] *= -1.0;
    }
    theta[first.bias_offset + unit] *= -1.0;
    for j in 0..next.fan_out {
        theta[next.weight_offset + j * next.fan_in + unit] *= -1.0;
    }
}
