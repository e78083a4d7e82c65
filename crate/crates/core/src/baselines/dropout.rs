use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ensemble::init_predictor;
use super::{BaselineError, Result};
use crate::datasets::Dataset;
use crate::diffmath::{softplus, softplus_inv, Tape};
use crate::inference::objectives::{expected_log_lik, Batch};
use crate::inference::{
    apply_dropout_mask, Adam, Method, Posterior, PosteriorKind, StopReason, TraceRow, TrainOutcome,
    TrainingTrace,
};
use crate::nets::{predict_batch_node, PredictorArch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutConfig {
    pub p_drop: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// `None` uses `10^(−1/√N)` for a training set of `N` rows.
    pub weight_decay: Option<f64>,
    /// Learn σ_l jointly (starting from 1) or hold it at `sigma_l`.
    pub learn_sigma: bool,
    pub sigma_l: f64,
    pub seed: u64,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        Self {
            p_drop: 0.05,
            epochs: 2000,
            batch_size: 50,
            lr: 1e-3,
            weight_decay: None,
            learn_sigma: true,
            sigma_l: 1.0,
            seed: 0,
        }
    }
}

impl DropoutConfig {
    pub fn weight_decay_for(&self, n: usize) -> f64 {
        self.weight_decay
            .unwrap_or_else(|| 10f64.powf(-1.0 / (n as f64).sqrt()))
    }
}

/// Trains one network with dropout on hidden units, minimizing the batch-mean
/// negative log-likelihood plus an L2 penalty folded into the Adam gradient.
/// Every mini-batch sees a fresh mask. Stream 0 of `config.seed` initializes,
/// stream 1 shuffles, stream 2 draws masks.
pub fn train_mc_dropout(
    data: &Dataset,
    arch: &PredictorArch,
    config: &DropoutConfig,
) -> Result<TrainOutcome> {
    if !(0.0..1.0).contains(&config.p_drop) || config.batch_size == 0 {
        return Err(BaselineError::Config(format!(
            "dropout probability {} must lie in [0, 1) with a positive batch size",
            config.p_drop
        )));
    }
    if data.dim() != arch.input_dim {
        return Err(BaselineError::Config(format!(
            "architecture expects {} inputs, dataset has {}",
            arch.input_dim,
            data.dim()
        )));
    }
    let started = Instant::now();
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(s);
        r
    };
    let (mut init_rng, mut shuffle_rng, mut mask_rng) = (stream(0), stream(1), stream(2));
    let d = arch.num_params();
    let wd = config.weight_decay_for(data.len());
    let mut flat = init_predictor(arch, &mut init_rng);
    flat.push(softplus_inv(config.sigma_l));
    let mut adam = Adam::new(flat.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut trace = TrainingTrace::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut sum, mut steps) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let x = data.x.select(Axis(0), chunk);
            let y = data.y.select(Axis(0), chunk);
            let batch = Batch {
                x: x.view(),
                y: y.view(),
                dataset_size: data.len(),
            };
            let mut mask = vec![1.0; d];
            apply_dropout_mask(arch, &mut mask, config.p_drop, &mut mask_rng);

            let mut tape = Tape::new();
            let th = tape.row_param(&flat[..d]);
            let mask = tape.row_constant(&mask);
            let masked = tape.mul(th, mask)?;
            let raw = tape.scalar_param(flat[d]);
            let sigma = tape.softplus(raw);
            let preds = predict_batch_node(&mut tape, arch, masked, batch.x)?;
            let ll = expected_log_lik(&mut tape, preds, batch.y, sigma)?;
            let loss = tape.scale(ll, -1.0 / chunk.len() as f64);
            tape.backward(loss)?;
            let value = tape.scalar(loss);
            let mut grad: Vec<f64> = tape.grad(th).iter().copied().collect();
            for (g, t) in grad.iter_mut().zip(&flat[..d]) {
                *g += wd * t;
            }
            grad.push(if config.learn_sigma {
                tape.grad(raw)[[0, 0]]
            } else {
                0.0
            });
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(BaselineError::NonFinite { member: 0, epoch });
            }
            adam.step(&mut flat, &grad, config.lr);
            sum += value;
            steps += 1;
        }
        let loss = sum / steps.max(1) as f64;
        trace.rows.push(TraceRow {
            epoch,
            objective: loss,
            kl_term: 0.0,
            ll_term: -loss,
            lr: config.lr,
            sigma_l: softplus(flat[d]),
        });
    }
    let sigma_l = softplus(flat[d]);
    flat.truncate(d);
    Ok(TrainOutcome {
        posterior: Posterior {
            method: Method::Dropout,
            arch: arch.clone(),
            sigma_l,
            kind: PosteriorKind::Dropout {
                weights: flat,
                p_drop: config.p_drop,
            },
        },
        trace,
        stop: StopReason::MaxEpochs,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}
