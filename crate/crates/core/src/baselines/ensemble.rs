use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{BaselineError, Result};
use crate::datasets::Dataset;
use crate::diffmath::Tape;
use crate::inference::{
    Method, Posterior, PosteriorKind, StopReason, TraceRow, TrainOutcome, TrainingTrace,
};
use crate::nets::{predict_batch, predict_batch_node, Activation, PredictorArch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_models: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Noise level attached to the posterior for predictive densities;
    /// `None` uses the training RMSE of the ensemble mean.
    pub sigma_l: Option<f64>,
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_models: 5,
            epochs: 3000,
            batch_size: 50,
            lr: 0.01,
            momentum: 0.9,
            sigma_l: None,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    /// 500 epochs on mini-batches of 500 for large data sets.
    pub fn uci(large: bool) -> Self {
        if large {
            Self {
                epochs: 500,
                batch_size: 500,
                ..Self::default()
            }
        } else {
            Self::default()
        }
    }
}

/// Glorot-normal weights for tanh and linear layers, He-normal for ReLU
/// layers; zero biases.
pub fn init_predictor<R: Rng + ?Sized>(arch: &PredictorArch, rng: &mut R) -> Vec<f64> {
    let mut theta = vec![0.0; arch.num_params()];
    let layouts = arch.layouts();
    let n = layouts.len();
    for (li, l) in layouts.iter().enumerate() {
        let var = if li + 1 < n && arch.activation == Activation::Relu {
            2.0 / l.fan_in as f64
        } else {
            2.0 / (l.fan_in + l.fan_out) as f64
        };
        let sd = var.sqrt();
        for w in &mut theta[l.weight_offset..l.bias_offset] {
            *w = sd * rng.sample::<f64, _>(StandardNormal);
        }
    }
    theta
}

/// Batch RMSE loss and its gradient.
fn rmse_step(
    arch: &PredictorArch,
    theta: &[f64],
    x: &Array2<f64>,
    y: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let th = tape.row_param(theta);
    let preds = predict_batch_node(&mut tape, arch, th, x.view())?;
    let neg_y: Vec<f64> = y.iter().map(|v| -v).collect();
    let neg_y = tape.row_constant(&neg_y);
    let resid = tape.add_row(preds, neg_y)?;
    let sq = tape.square(resid);
    let mse = tape.mean(sq);
    let loss = tape.sqrt(mse)?;
    tape.backward(loss)?;
    Ok((tape.scalar(loss), tape.grad(th).iter().copied().collect()))
}

/// Independently initialized members trained by SGD with momentum on the
/// batch RMSE. Member `i` draws its initialization and shuffling from
/// streams `2i` and `2i + 1` of `config.seed`. The trace averages the
/// epoch loss across members.
pub fn train_ensemble(
    data: &Dataset,
    arch: &PredictorArch,
    config: &EnsembleConfig,
) -> Result<TrainOutcome> {
    if config.n_models == 0 || config.batch_size == 0 {
        return Err(BaselineError::Config(
            "ensemble needs at least one member and a positive batch size".into(),
        ));
    }
    if data.dim() != arch.input_dim {
        return Err(BaselineError::Config(format!(
            "architecture expects {} inputs, dataset has {}",
            arch.input_dim,
            data.dim()
        )));
    }
    let started = Instant::now();
    let d = arch.num_params();
    let mut members = Array2::zeros((config.n_models, d));
    let mut epoch_loss = vec![0.0; config.epochs];
    for member in 0..config.n_models {
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(config.seed);
            r.set_stream(s);
            r
        };
        let mut init_rng = stream(2 * member as u64);
        let mut shuffle_rng = stream(2 * member as u64 + 1);
        let mut theta = init_predictor(arch, &mut init_rng);
        let mut velocity = vec![0.0; d];
        let mut order: Vec<usize> = (0..data.len()).collect();
        for (epoch, slot) in epoch_loss.iter_mut().enumerate() {
            order.shuffle(&mut shuffle_rng);
            let (mut sum, mut steps) = (0.0, 0usize);
            for chunk in order.chunks(config.batch_size) {
                let x = data.x.select(Axis(0), chunk);
                let y: Vec<f64> = chunk.iter().map(|&i| data.y[i]).collect();
                let (loss, grad) = rmse_step(arch, &theta, &x, &y)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(BaselineError::NonFinite { member, epoch });
                }
                for ((t, v), g) in theta.iter_mut().zip(&mut velocity).zip(&grad) {
                    *v = config.momentum * *v + g;
                    *t -= config.lr * *v;
                }
                sum += loss;
                steps += 1;
            }
            *slot += sum / steps.max(1) as f64 / config.n_models as f64;
        }
        members
            .row_mut(member)
            .assign(&ndarray::ArrayView1::from(&theta));
    }
    let sigma_l = match config.sigma_l {
        Some(s) => s,
        None => {
            let preds = predict_batch(arch, members.view(), data.x.view())?;
            let mean = preds.mean_axis(Axis(0)).expect("at least one member");
            let sse: f64 = mean.iter().zip(&data.y).map(|(p, y)| (p - y).powi(2)).sum();
            (sse / data.len() as f64).sqrt()
        }
    };
    let trace = TrainingTrace {
        rows: epoch_loss
            .iter()
            .enumerate()
            .map(|(epoch, &objective)| TraceRow {
                epoch,
                objective,
                kl_term: 0.0,
                ll_term: 0.0,
                lr: config.lr,
                sigma_l,
            })
            .collect(),
    };
    Ok(TrainOutcome {
        posterior: Posterior {
            method: Method::Ensemble,
            arch: arch.clone(),
            sigma_l,
            kind: PosteriorKind::Ensemble(members),
        },
        trace,
        stop: StopReason::MaxEpochs,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}
