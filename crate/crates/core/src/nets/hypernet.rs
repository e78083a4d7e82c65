use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Result;
use crate::diffmath::{Tape, Var};

/// Generative network `h_λ: R^l → R^d` with ReLU hidden layers and a linear
/// output layer. Its pushforward of `N(0, I_l)` is the variational family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperNet {
    pub noise_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    /// `(weight fan_out×fan_in, bias 1×fan_out)` per layer.
    layers: Vec<(Array2<f64>, Array2<f64>)>,
}

/// Tape handles for the hypernetwork weights of one training step.
pub struct HyperLeaves(pub Vec<(Var, Var)>);

impl HyperNet {
    /// He-uniform hidden layers; the output layer starts as a small cloud
    /// (weights scaled by 0.01) around a bias drawn at the prior scale.
    pub fn new<R: Rng + ?Sized>(
        noise_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        prior_std: f64,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::new();
        let mut fan_in = noise_dim;
        for &w in &hidden_widths {
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight =
                Array2::from_shape_simple_fn((w, fan_in), || rng.random_range(-bound..bound));
            layers.push((weight, Array2::zeros((1, w))));
            fan_in = w;
        }
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((output_dim, fan_in), || {
            0.01 * rng.random_range(-bound..bound)
        });
        let bias = Array2::from_shape_simple_fn((1, output_dim), || {
            prior_std * rng.sample::<f64, _>(StandardNormal)
        });
        layers.push((weight, bias));
        Self {
            noise_dim,
            hidden_widths,
            output_dim,
            layers,
        }
    }

    /// Default shape: 5-D noise, hidden widths 20 and 40.
    pub fn standard<R: Rng + ?Sized>(output_dim: usize, prior_std: f64, rng: &mut R) -> Self {
        Self::new(5, vec![20, 40], output_dim, prior_std, rng)
    }

    /// Network of the given shape holding the flat parameters `flat`.
    pub fn from_params(
        noise_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        flat: &[f64],
    ) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = noise_dim;
        for &w in hidden_widths.iter().chain(std::iter::once(&output_dim)) {
            layers.push((Array2::zeros((w, fan_in)), Array2::zeros((1, w))));
            fan_in = w;
        }
        let mut net = Self {
            noise_dim,
            hidden_widths,
            output_dim,
            layers,
        };
        if flat.len() != net.num_params() {
            return Err(super::NetError::DimensionMismatch {
                what: "hypernet parameters",
                expected: net.num_params(),
                got: flat.len(),
            });
        }
        net.set_params(flat);
        Ok(net)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Flat λ: per layer, weights row-major then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in &self.layers {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "hypernet parameter length");
        let mut offset = 0;
        for (w, b) in &mut self.layers {
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = flat[offset];
                offset += 1;
            }
        }
    }

    pub fn layers_mut(&mut self) -> &mut [(Array2<f64>, Array2<f64>)] {
        &mut self.layers
    }

    pub fn register(&self, tape: &mut Tape) -> HyperLeaves {
        HyperLeaves(
            self.layers
                .iter()
                .map(|(w, b)| (tape.param(w.clone()), tape.param(b.clone())))
                .collect(),
        )
    }

    /// Rebuilds the layer weights on the tape from a flat `1 × |λ|` node laid
    /// out as in [`HyperNet::params`], so gradients reach that node.
    pub fn leaves_from_flat(&self, tape: &mut Tape, flat: Var) -> Result<HyperLeaves> {
        let mut offset = 0;
        let mut leaves = Vec::with_capacity(self.layers.len());
        for (w, b) in &self.layers {
            let (fo, fi) = w.dim();
            let mut rows = Vec::with_capacity(fo);
            for r in 0..fo {
                rows.push(tape.slice(flat, 0..1, offset + r * fi..offset + (r + 1) * fi)?);
            }
            let wv = tape.concat(&rows, 0)?;
            offset += fo * fi;
            let bv = tape.slice(flat, 0..1, offset..offset + b.len())?;
            offset += b.len();
            leaves.push((wv, bv));
        }
        Ok(HyperLeaves(leaves))
    }

    /// Flattens leaf gradients in the same order as [`HyperNet::params`].
    pub fn collect_grads(&self, tape: &Tape, leaves: &HyperLeaves) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in &leaves.0 {
            out.extend(tape.grad(*w).iter().copied());
            out.extend(tape.grad(*b).iter().copied());
        }
        out
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((n, self.noise_dim), || rng.sample::<f64, _>(StandardNormal))
    }

    /// Maps each noise row to a parameter row (`n × d`) on the tape.
    pub fn forward_node(
        &self,
        tape: &mut Tape,
        leaves: &HyperLeaves,
        noise: Array2<f64>,
    ) -> Result<Var> {
        let mut h = tape.constant(noise);
        let last = leaves.0.len() - 1;
        for (i, (w, b)) in leaves.0.iter().enumerate() {
            let z = tape.affine(*w, h, *b)?;
            h = if i == last { z } else { tape.relu(z) };
        }
        Ok(h)
    }

    /// Plain forward pass; bitwise identical to [`HyperNet::forward_node`].
    pub fn forward(&self, noise: &Array2<f64>) -> Array2<f64> {
        let mut h = noise.clone();
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut z = h.dot(&w.t());
            z += b;
            h = if i == last { z } else { z.mapv(|x| x.max(0.0)) };
        }
        h
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let noise = self.draw_noise(n, rng);
        self.forward(&noise)
    }

    /// `n` parameter vectors from a dedicated seed.
    pub fn sample_seeded(&self, n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample(n, &mut rng)
    }
}
