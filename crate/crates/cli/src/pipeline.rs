use std::path::{Path, PathBuf};

use hyvi_core::baselines::{
    hmc_sample, init_predictor, train_ensemble, train_mc_dropout, PosteriorTarget,
};
use hyvi_core::datasets::{
    apply_norm_stats, hyperrectangle_from, load_csv, load_uci, make_wave, sample_inputs,
    split_standardize, wave_ood, Dataset, InputDistribution,
};
use hyvi_core::evaluation::{
    epistemic_profile, lpp_from_predictions, posterior_entropy, predictive_draws,
    rmse_from_predictions, BandData, EpistemicGroups, MetricReport,
};
use hyvi_core::inference::{
    train, InferenceError, Method, Posterior, PosteriorKind, Provenance, Space, StopReason,
    TraceRow, TrainOutcome, TrainingTrace,
};
use hyvi_core::nets::{GaussianPrior, NoiseMode, PredictorArch};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::{CliError, Result};

/// Seed offset of the independent wave test draw.
const WAVE_TEST_OFFSET: u64 = 1_000_003;
const BAND_POINTS: usize = 200;

/// Train/test split in model units with the input distribution `ν` and
/// the predictor architecture for the dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
    pub nu: InputDistribution,
    pub arch: PredictorArch,
}

impl Prepared {
    pub fn is_wave(&self) -> bool {
        self.name == "wave"
    }

    /// `n` off-distribution inputs: for the wave problem, ν draws that fall
    /// in the gap between the training patches or outside `[−1, 1]`; for
    /// tabular data, plain ν draws.
    pub fn ood_inputs(&self, n: usize, seed: u64) -> Array2<f64> {
        if !self.is_wave() {
            return sample_inputs(&self.nu, n, seed);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kept = Vec::with_capacity(n);
        while kept.len() < n {
            for v in self.nu.sample(n, &mut rng).iter() {
                if (v.abs() < 0.5 || v.abs() > 1.0) && kept.len() < n {
                    kept.push(*v);
                }
            }
        }
        Array2::from_shape_vec((n, 1), kept).expect("n × 1")
    }
}

fn load_spec(spec: &DatasetSpec, data_dir: Option<&Path>) -> Result<Dataset> {
    Ok(match spec {
        DatasetSpec::Wave => unreachable!("wave is generated"),
        DatasetSpec::Uci { name } => load_uci(name, data_dir)?,
        DatasetSpec::Csv { path, target } => load_csv(path, target)?,
    })
}

pub fn prepare(config: &ExperimentConfig, seed: u64, data_dir: Option<&Path>) -> Result<Prepared> {
    if config.dataset == DatasetSpec::Wave {
        return Ok(Prepared {
            name: "wave".into(),
            train: make_wave(seed),
            test: make_wave(seed.wrapping_add(WAVE_TEST_OFFSET)),
            nu: wave_ood(),
            arch: PredictorArch::wave(),
        });
    }
    let mut full = load_spec(&config.dataset, data_dir)?;
    if let Some(n) = config.subsample {
        if n < full.len() {
            let mut idx: Vec<usize> = (0..full.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(5);
            idx.shuffle(&mut rng);
            idx.truncate(n);
            idx.sort_unstable();
            full = full.select(&idx);
        }
    }
    let (train, test) = split_standardize(&full, config.train_fraction, seed)?;
    let stats = train.norm_stats.clone().expect("standardized");
    let nu = hyperrectangle_from(&apply_norm_stats(&full, &stats));
    let arch = PredictorArch::uci(full.dim(), config.width);
    Ok(Prepared {
        name: config.dataset.name(),
        train,
        test,
        nu,
        arch,
    })
}

/// Trains `config.method` on the prepared split with every random choice
/// derived from `seed`.
pub fn fit(
    config: &ExperimentConfig,
    prepared: &Prepared,
    seed: u64,
) -> std::result::Result<(TrainOutcome, serde_json::Value), FitError> {
    let learned = config.train.noise.mode == NoiseMode::Learned;
    let sigma = config.train.noise.sigma;
    match config.method {
        m if m.is_variational() => {
            let mut tc = config.train.clone();
            tc.seed = seed;
            let out = train(m, &prepared.train, &prepared.arch, Some(&prepared.nu), &tc)?;
            let extra = json!({ "stop": out_stop(&out) });
            Ok((out, extra))
        }
        Method::Hmc => {
            let started = std::time::Instant::now();
            let prior = GaussianPrior::new(config.train.prior_variance);
            let target = PosteriorTarget::new(&prepared.train, &prepared.arch, prior, sigma)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(3);
            let init = init_predictor(&prepared.arch, &mut rng);
            let mut hc = config.hmc.clone();
            hc.seed = seed;
            let chain = hmc_sample(|t: &[f64]| target.eval(t), &init, &hc)?;
            let every = (chain.step_size_trace.len() / 1000).max(1);
            let rows = chain
                .step_size_trace
                .iter()
                .enumerate()
                .step_by(every)
                .map(|(i, &eps)| TraceRow {
                    epoch: i,
                    objective: f64::NAN,
                    kl_term: f64::NAN,
                    ll_term: f64::NAN,
                    lr: eps,
                    sigma_l: sigma,
                })
                .collect();
            let extra = json!({
                "accept_rate": chain.accept_rate,
                "step_size": chain.step_size,
                "divergences": chain.divergences,
                "retained": chain.samples.nrows(),
            });
            let posterior = Posterior {
                method: Method::Hmc,
                arch: prepared.arch.clone(),
                sigma_l: sigma,
                kind: PosteriorKind::Samples(chain.samples),
            };
            Ok((
                TrainOutcome {
                    posterior,
                    trace: TrainingTrace { rows },
                    stop: StopReason::MaxEpochs,
                    runtime_s: started.elapsed().as_secs_f64(),
                },
                extra,
            ))
        }
        Method::Ensemble => {
            let mut ec = config.ensemble.clone();
            ec.seed = seed;
            if ec.sigma_l.is_none() && !learned {
                ec.sigma_l = Some(sigma);
            }
            Ok((
                train_ensemble(&prepared.train, &prepared.arch, &ec)?,
                json!({ "members": ec.n_models }),
            ))
        }
        Method::Dropout => {
            let mut dc = config.dropout.clone();
            dc.seed = seed;
            dc.learn_sigma = learned;
            if !learned {
                dc.sigma_l = sigma;
            }
            Ok((
                train_mc_dropout(&prepared.train, &prepared.arch, &dc)?,
                json!({ "p_drop": dc.p_drop }),
            ))
        }
        _ => unreachable!("every method is covered"),
    }
}

fn out_stop(out: &TrainOutcome) -> &'static str {
    match out.stop {
        StopReason::LrFloor => "lr_floor",
        StopReason::MaxEpochs => "max_epochs",
    }
}

/// Training failure, keeping the partial trace when the objective went
/// non-finite.
#[derive(Debug)]
pub enum FitError {
    NonFinite {
        detail: String,
        trace: TrainingTrace,
    },
    Other(CliError),
}

impl From<InferenceError> for FitError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::NonFinite { epoch, step, trace } => FitError::NonFinite {
                detail: format!("epoch {epoch}, step {step}"),
                trace: *trace,
            },
            other => FitError::Other(other.into()),
        }
    }
}

impl From<hyvi_core::baselines::BaselineError> for FitError {
    fn from(e: hyvi_core::baselines::BaselineError) -> Self {
        match e {
            hyvi_core::baselines::BaselineError::NonFinite { member, epoch } => {
                FitError::NonFinite {
                    detail: format!("member {member}, epoch {epoch}"),
                    trace: TrainingTrace::default(),
                }
            }
            hyvi_core::baselines::BaselineError::Inference(i) => i.into(),
            other => FitError::Other(other.into()),
        }
    }
}

/// Files written by one training run.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub posterior: PathBuf,
    pub sidecar: PathBuf,
    pub trace: PathBuf,
}

pub fn run_stem(method: Method, dataset: &str, seed: u64) -> String {
    format!("{method}_{dataset}_seed{seed}")
}

/// Wall-clock training time is kept next to the posterior rather than in
/// its sidecar so that reruns reproduce the posterior files byte for byte.
pub fn runtime_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}_runtime.txt"))
}

pub fn read_runtime(dir: &Path, stem: &str) -> f64 {
    std::fs::read_to_string(runtime_path(dir, stem))
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(f64::NAN)
}

pub fn provenance_line(hash: &str, seed: u64) -> String {
    format!("config_hash={hash} seed={seed}")
}

/// Trains one (config, seed) run and writes `<stem>.bin`, `<stem>.json` and
/// `<stem>_trace.csv` under `out`.
pub fn train_and_save(
    config: &ExperimentConfig,
    prepared: &Prepared,
    seed: u64,
    out: &Path,
) -> Result<(TrainOutcome, RunFiles)> {
    std::fs::create_dir_all(out)?;
    let hash = config.hash();
    let stem = run_stem(config.method, &prepared.name, seed);
    let trace_path = out.join(format!("{stem}_trace.csv"));
    let prov = provenance_line(&hash, seed);
    let (outcome, extra) = match fit(config, prepared, seed) {
        Ok(v) => v,
        Err(FitError::NonFinite { detail, trace }) => {
            trace.write_csv(&trace_path, &prov)?;
            return Err(CliError::NonFinite {
                detail,
                trace: trace_path,
            });
        }
        Err(FitError::Other(e)) => return Err(e),
    };
    let provenance = Provenance {
        seed,
        config_hash: hash,
        config: config.run_record(),
        extra,
    };
    let (posterior, sidecar) = outcome.posterior.save(out, &stem, provenance)?;
    outcome.trace.write_csv(&trace_path, &prov)?;
    Ok((
        outcome,
        RunFiles {
            posterior,
            sidecar,
            trace: trace_path,
        },
    ))
}

/// Which metrics an evaluation computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSet {
    pub entropy_param: bool,
    pub entropy_pred: bool,
    pub epistemic: bool,
    pub band: bool,
}

impl MetricSet {
    pub fn all() -> Self {
        Self {
            entropy_param: true,
            entropy_pred: true,
            epistemic: true,
            band: true,
        }
    }
}

/// RMSE and LPP on the test split plus the selected entropy, epistemic and
/// band metrics for one posterior.
pub fn evaluate(
    post: &Posterior,
    prepared: &Prepared,
    config: &ExperimentConfig,
    seed: u64,
    metrics: MetricSet,
    runtime_s: f64,
) -> Result<MetricReport> {
    if post.arch.input_dim != prepared.train.dim() {
        return Err(CliError::ArchMismatch(format!(
            "posterior expects {} inputs, dataset {} has {}",
            post.arch.input_dim,
            prepared.name,
            prepared.train.dim()
        )));
    }
    let settings = hyvi_core::evaluation::EvalSettings {
        seed,
        ..config.eval.clone()
    };
    let mut report = MetricReport::new(post.method.name(), &prepared.name, seed);
    report.runtime_s = runtime_s;
    let preds = predictive_draws(post, prepared.test.x.view(), settings.n_samples, seed)?;
    let y_std = prepared.test.stats().y_std;
    report.rmse = rmse_from_predictions(preds.view(), prepared.test.y.view(), y_std);
    report.lpp = lpp_from_predictions(preds.view(), prepared.test.y.view(), post.sigma_l, y_std);
    if metrics.entropy_param {
        report.entropy_param = Some(posterior_entropy(post, Space::Parameter, None, &settings)?);
    }
    if metrics.entropy_pred {
        report.entropy_pred = Some(posterior_entropy(
            post,
            Space::Predictor,
            Some(&prepared.nu),
            &settings,
        )?);
    }
    if metrics.epistemic {
        let k = settings.k_entropy;
        let values = |x: ndarray::ArrayView2<f64>| -> Result<Vec<f64>> {
            Ok(epistemic_profile(post, x, settings.n_samples, k, seed)?
                .into_iter()
                .map(|m| m.value)
                .collect())
        };
        let ood = prepared.ood_inputs(config.ood_samples, seed.wrapping_add(17));
        report.epistemic = Some(EpistemicGroups {
            train: values(prepared.train.x.view())?,
            test: values(prepared.test.x.view())?,
            ood: values(ood.view())?,
        });
    }
    if metrics.band && prepared.train.dim() == 1 {
        report.band = Some(band(post, prepared, settings.n_samples, seed)?);
    }
    Ok(report)
}

/// Predictive mean and standard deviation on an even grid over ν.
pub fn band(
    post: &Posterior,
    prepared: &Prepared,
    n_samples: usize,
    seed: u64,
) -> Result<BandData> {
    let (lo, hi) = (prepared.nu.lower[0], prepared.nu.upper[0]);
    let x: Vec<f64> = (0..BAND_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (BAND_POINTS - 1) as f64)
        .collect();
    let grid = Array2::from_shape_vec((BAND_POINTS, 1), x.clone()).expect("column");
    let preds = predictive_draws(post, grid.view(), n_samples, seed)?;
    let mean = preds.mean_axis(Axis(0)).expect("draws");
    let std = preds.std_axis(Axis(0), 0.0);
    let stats = prepared.train.stats();
    let to_y = |v: f64| stats.destandardize_y(v);
    Ok(BandData {
        x,
        mean: mean.iter().map(|&m| to_y(m)).collect(),
        std: std.iter().map(|s| s * stats.y_std).collect(),
        train_x: prepared.train.x.column(0).to_vec(),
        train_y: prepared.train.y.iter().map(|&v| to_y(v)).collect(),
    })
}
