use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::Axis;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objectives::{elbo_funn_hyvi, elbo_mfvi, elbo_nn_hyvi, Batch, StepNoise};
use super::{Adam, ReduceOnPlateau};
use super::{
    InferenceError, MeanFieldParams, Method, Posterior, PosteriorKind, Result, Space, TrainConfig,
};
use crate::datasets::{Dataset, InputDistribution};
use crate::diffmath::{softplus, softplus_inv, Tape};
use crate::nets::{GaussianPrior, HyperNet, NoiseMode, PredictorArch};

/// One epoch of the training trace; terms are epoch means over steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub objective: f64,
    pub kl_term: f64,
    pub ll_term: f64,
    pub lr: f64,
    pub sigma_l: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub rows: Vec<TraceRow>,
}

impl TrainingTrace {
    /// CSV with a leading `#` provenance line.
    pub fn write_csv(&self, path: &Path, provenance: &str) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "# {provenance}")?;
        let mut w = csv::Writer::from_writer(file);
        for row in &self.rows {
            w.serialize(row)
                .map_err(|e| InferenceError::Format(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| InferenceError::Format(e.to_string()))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<TraceRow>, _>>()
            .map_err(|e| InferenceError::Format(e.to_string()))?;
        Ok(Self { rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    LrFloor,
    MaxEpochs,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub posterior: Posterior,
    pub trace: TrainingTrace,
    pub stop: StopReason,
    pub runtime_s: f64,
}

enum Family {
    Hyper(HyperNet),
    MeanField(MeanFieldParams),
}

impl Family {
    fn flat(&self) -> Vec<f64> {
        match self {
            Family::Hyper(h) => h.params(),
            Family::MeanField(mf) => mf.mu.iter().chain(&mf.rho).copied().collect(),
        }
    }

    fn set_flat(&mut self, flat: &[f64]) {
        match self {
            Family::Hyper(h) => h.set_params(flat),
            Family::MeanField(mf) => {
                let d = mf.mu.len();
                mf.mu.copy_from_slice(&flat[..d]);
                mf.rho.copy_from_slice(&flat[d..2 * d]);
            }
        }
    }

    fn base_dim(&self) -> usize {
        match self {
            Family::Hyper(h) => h.noise_dim,
            Family::MeanField(mf) => mf.dim(),
        }
    }
}

struct StepResult {
    objective: f64,
    kl: f64,
    ll: f64,
    grad: Vec<f64>,
}

/// Reads the flat optimiser gradient off a tape after the backward pass.
type GradReader<'a> = Box<dyn FnMut(&Tape) -> Vec<f64> + 'a>;

#[allow(clippy::too_many_arguments)]
fn step(
    method: Method,
    family: &Family,
    arch: &PredictorArch,
    batch: &Batch,
    sigma_raw: f64,
    learned: bool,
    noise: &StepNoise,
    prior: &GaussianPrior,
    k: usize,
) -> Result<StepResult> {
    let mut tape = Tape::new();
    let (sigma, raw_leaf) = if learned {
        let raw = tape.scalar_param(sigma_raw);
        (tape.softplus(raw), Some(raw))
    } else {
        (tape.scalar_constant(softplus(sigma_raw)), None)
    };
    let (nodes, mut grad_of): (_, GradReader) = match family {
        Family::Hyper(h) => {
            let leaves = h.register(&mut tape);
            let nodes = if method == Method::FunnHyvi {
                elbo_funn_hyvi(&mut tape, h, &leaves, arch, batch, sigma, noise, k)?
            } else {
                elbo_nn_hyvi(&mut tape, h, &leaves, arch, batch, sigma, noise, k)?
            };
            (nodes, Box::new(move |t: &Tape| h.collect_grads(t, &leaves)))
        }
        Family::MeanField(mf) => {
            let mu = tape.row_param(&mf.mu);
            let rho = tape.row_param(&mf.rho);
            let space = if method == Method::FunnMfvi {
                Space::Predictor
            } else {
                Space::Parameter
            };
            let nodes = elbo_mfvi(
                &mut tape, mu, rho, arch, batch, sigma, noise, prior, k, space,
            )?;
            (
                nodes,
                Box::new(move |t: &Tape| {
                    t.grad(mu)
                        .iter()
                        .chain(t.grad(rho).iter())
                        .copied()
                        .collect()
                }),
            )
        }
    };
    let objective = tape.scalar(nodes.total);
    let (kl, ll) = (tape.scalar(nodes.kl), tape.scalar(nodes.ll));
    if !objective.is_finite() {
        return Ok(StepResult {
            objective,
            kl,
            ll,
            grad: Vec::new(),
        });
    }
    tape.backward(nodes.total)?;
    let mut grad = grad_of(&tape);
    if let Some(raw) = raw_leaf {
        grad.push(tape.grad(raw)[[0, 0]]);
    }
    Ok(StepResult {
        objective,
        kl,
        ll,
        grad,
    })
}

/// Trains one variational method on `data` (already in model units).
///
/// Three ChaCha8 streams derive from `config.seed`: stream 0 initializes the
/// variational family, stream 1 shuffles epochs, stream 2 supplies all
/// per-step noise in the order documented on [`StepNoise`].
pub fn train(
    method: Method,
    data: &Dataset,
    arch: &PredictorArch,
    nu: Option<&InputDistribution>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if !method.is_variational() {
        return Err(InferenceError::NotVariational(method));
    }
    config.validate()?;
    if data.dim() != arch.input_dim {
        return Err(InferenceError::Config(format!(
            "architecture expects {} inputs, dataset has {}",
            arch.input_dim,
            data.dim()
        )));
    }
    if method.is_functional() && nu.is_none() {
        return Err(InferenceError::Config(format!(
            "{method} needs an input distribution"
        )));
    }
    let started = Instant::now();
    let d = arch.num_params();
    let prior = GaussianPrior::new(config.prior_variance);
    let stream = |s: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(config.seed);
        r.set_stream(s);
        r
    };
    let (mut init_rng, mut shuffle_rng, mut noise_rng) = (stream(0), stream(1), stream(2));

    let mut family = if method.is_mean_field() {
        Family::MeanField(MeanFieldParams::init(d, &mut init_rng))
    } else {
        Family::Hyper(HyperNet::new(
            config.hypernet_noise_dim,
            config.hypernet_hidden.clone(),
            d,
            prior.std(),
            &mut init_rng,
        ))
    };
    let learned = config.noise.mode == NoiseMode::Learned;
    let mut sigma_raw = if learned {
        softplus_inv(1.0)
    } else {
        softplus_inv(config.noise.sigma)
    };

    let mut flat = family.flat();
    if learned {
        flat.push(sigma_raw);
    }
    let mut adam = Adam::new(flat.len());
    let mut schedule = ReduceOnPlateau::new(
        config.lr_init,
        config.lr_factor,
        config.patience_for(method),
        config.plateau_threshold,
    );
    let nu_draw = if method.is_functional() {
        nu.map(|n| (n, config.eval_t))
    } else {
        None
    };
    let mut trace = TrainingTrace::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut stop = StopReason::MaxEpochs;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = schedule.lr;
        let (mut sum_obj, mut sum_kl, mut sum_ll, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for (step_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = data.x.select(Axis(0), chunk);
            let y = data.y.select(Axis(0), chunk);
            let batch = Batch {
                x: x.view(),
                y: y.view(),
                dataset_size: data.len(),
            };
            let noise = StepNoise::draw(
                &mut noise_rng,
                family.base_dim(),
                d,
                config.n_kl_samples,
                config.n_ll_samples,
                &prior,
                nu_draw,
            );
            let r = step(
                method, &family, arch, &batch, sigma_raw, learned, &noise, &prior, config.k,
            )?;
            if !r.objective.is_finite() || r.grad.iter().any(|g| !g.is_finite()) {
                return Err(InferenceError::NonFinite {
                    epoch,
                    step: step_idx,
                    trace: Box::new(trace),
                });
            }
            adam.step(&mut flat, &r.grad, lr);
            if learned {
                sigma_raw = flat[flat.len() - 1];
                family.set_flat(&flat[..flat.len() - 1]);
            } else {
                family.set_flat(&flat);
            }
            sum_obj += r.objective;
            sum_kl += r.kl;
            sum_ll += r.ll;
            steps += 1;
        }
        let n = steps.max(1) as f64;
        let mean_obj = sum_obj / n;
        trace.rows.push(TraceRow {
            epoch,
            objective: mean_obj,
            kl_term: sum_kl / n,
            ll_term: sum_ll / n,
            lr,
            sigma_l: softplus(sigma_raw),
        });
        schedule.observe(mean_obj);
        if schedule.lr < config.lr_min {
            stop = StopReason::LrFloor;
            break;
        }
    }

    let kind = match family {
        Family::Hyper(h) => PosteriorKind::Hypernet(h),
        Family::MeanField(mf) => PosteriorKind::MeanField(mf),
    };
    Ok(TrainOutcome {
        posterior: Posterior {
            method,
            arch: arch.clone(),
            sigma_l: softplus(sigma_raw),
            kind,
        },
        trace,
        stop,
        runtime_s: started.elapsed().as_secs_f64(),
    })
}
