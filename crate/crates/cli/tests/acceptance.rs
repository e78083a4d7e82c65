//! Acceptance checks. Each test prints one `criterion N PASS|FAIL` line
//! (visible with or without `--nocapture`) and then asserts it.

use std::io::Write;
use std::sync::OnceLock;
use std::time::Instant;

use hyvi_cli::commands::apply_wave_budget;
use hyvi_cli::pipeline::{evaluate, fit, prepare, train_and_save, MetricSet, Prepared};
use hyvi_cli::{DatasetSpec, ExperimentConfig};
use hyvi_core::baselines::{hmc_sample, leapfrog, HmcConfig, PosteriorTarget};
use hyvi_core::datasets::{locate_uci, Dataset, InputDistribution};
use hyvi_core::diffmath::{finite_difference_check, softplus_inv, Tape, Var};
use hyvi_core::evaluation::{median, quartiles, MetricReport};
use hyvi_core::inference::{
    elbo_funn_hyvi, elbo_mfvi, elbo_nn_hyvi, Batch, Method, Space, StepNoise,
};
use hyvi_core::knn::{entropy_knn, functional_kl, kl_knn, EvalDesign, ParamCloud, SampleCloud};
use hyvi_core::nets::{
    flip_hidden_unit, mlp_forward, Activation, GaussianPrior, HyperNet, NoiseMode, PredictorArch,
};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn report(n: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    writeln!(out, "criterion {n} {verdict}: {detail}").unwrap();
}

fn gaussian(n: usize, dim: usize, shift: &[f64], rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |(_, j)| {
        rng.sample::<f64, _>(StandardNormal) + shift.get(j).copied().unwrap_or(0.0)
    })
}

#[test]
fn criterion_1_estimators_match_closed_forms() {
    let started = Instant::now();
    // KL(N(0,I) || N(μ,I)) = |μ|²/2
    let truth_kl = 0.5 * 1.0f64.powi(2);
    let kls: Vec<f64> = (0..50u64)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = SampleCloud::new(gaussian(2000, 2, &[0.0, 0.0], &mut rng)).unwrap();
            let p = SampleCloud::new(gaussian(2000, 2, &[1.0, 0.0], &mut rng)).unwrap();
            kl_knn(&q, &p, 1).unwrap()
        })
        .collect();
    let mean_kl = kls.iter().sum::<f64>() / kls.len() as f64;
    // H(N(0,I₅)) = (d/2)·ln(2πe)
    let truth_h = 2.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let h = entropy_knn(
        &SampleCloud::new(gaussian(4000, 5, &[], &mut rng)).unwrap(),
        1,
    )
    .unwrap();
    let secs = started.elapsed().as_secs_f64();
    let pass = (mean_kl - truth_kl).abs() <= 0.07 && (h - truth_h).abs() <= 0.1 && secs < 60.0;
    report(
        1,
        pass,
        &format!("mean KL {mean_kl:.4} (truth {truth_kl}, ±0.07); 5-D entropy {h:.4} (truth {truth_h:.4}, ±0.1); {secs:.1}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_2_functional_kl_ignores_sign_flips() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let arch = PredictorArch::new(1, vec![16], Activation::Tanh);
    let d = arch.num_params();
    let center: Vec<f64> = (0..d)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect();
    let cloud = |scale: f64, rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((200, d), |(_, j)| {
            center[j] + scale * rng.sample::<f64, _>(StandardNormal)
        })
    };
    let f = cloud(0.3, &mut rng);
    let g = cloud(0.4, &mut rng);
    let mut flipped = f.clone();
    for mut row in flipped.rows_mut() {
        let mut theta = row.to_vec();
        for u in 0..16 {
            if rng.random_bool(0.5) {
                flip_hidden_unit(&arch, &mut theta, u);
            }
        }
        row.assign(&Array1::from(theta));
    }
    let design = EvalDesign::new(
        50,
        3,
        InputDistribution::new(vec![-3.0], vec![3.0]).unwrap(),
    )
    .unwrap();
    let fkl = |a: &Array2<f64>| {
        let fa = ParamCloud {
            arch: &arch,
            thetas: a.view(),
        };
        let gb = ParamCloud {
            arch: &arch,
            thetas: g.view(),
        };
        functional_kl(&fa, &gb, &design, 1, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
    };
    let pkl = |a: &Array2<f64>| {
        kl_knn(
            &SampleCloud::new(a.clone()).unwrap(),
            &SampleCloud::new(g.clone()).unwrap(),
            1,
        )
        .unwrap()
    };
    let d_param = (pkl(&f) - pkl(&flipped)).abs();
    let d_fn = (fkl(&f) - fkl(&flipped)).abs();
    let pass = d_param > 1.0 && d_fn < 1e-9;
    report(
        2,
        pass,
        &format!(
            "parameter KL moved by {d_param:.3} (> 1), functional KL moved by {d_fn:.2e} (< 1e-9)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_3_objective_gradients_match_finite_differences() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let arch = PredictorArch::new(2, vec![], Activation::Tanh);
    let data = Dataset::new(
        array![
            [0.1, -0.4],
            [0.8, 0.3],
            [-0.6, 0.9],
            [0.2, 0.2],
            [-1.0, -0.3],
            [0.5, -0.7]
        ],
        array![0.3, -0.2, 0.9, 0.1, -0.5, 0.4],
    )
    .unwrap();
    let batch = Batch {
        x: data.x.view(),
        y: data.y.view(),
        dataset_size: 20,
    };
    let prior = GaussianPrior::default();
    let nu = InputDistribution::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let noise = |base: usize, functional: bool, seed: u64| {
        StepNoise::draw(
            &mut ChaCha8Rng::seed_from_u64(seed),
            base,
            arch.num_params(),
            12,
            7,
            &prior,
            functional.then_some((&nu, 5)),
        )
    };

    let mut h = HyperNet::new(2, vec![2], arch.num_params(), 0.7, &mut rng);
    let jitter: Vec<f64> = h
        .params()
        .iter()
        .map(|v| v + rng.random_range(-0.3..0.3))
        .collect();
    h.set_params(&jitter);
    let n_lambda = h.num_params();
    let mut hyvi_x0 = h.params();
    hyvi_x0.push(softplus_inv(0.8));

    let mut errors = Vec::new();
    for (name, functional) in [("NN-HyVI", false), ("FuNN-HyVI", true)] {
        let nz = noise(2, functional, 5);
        let f = |t: &mut Tape, v: Var| {
            let lam = t.slice(v, 0..1, 0..n_lambda)?;
            let raw = t.slice(v, 0..1, n_lambda..n_lambda + 1)?;
            let sigma = t.softplus(raw);
            let leaves = h.leaves_from_flat(t, lam).unwrap();
            let nodes = if functional {
                elbo_funn_hyvi(t, &h, &leaves, &arch, &batch, sigma, &nz, 1)
            } else {
                elbo_nn_hyvi(t, &h, &leaves, &arch, &batch, sigma, &nz, 1)
            };
            Ok(nodes.unwrap().total)
        };
        errors.push((
            name,
            hyvi_x0.len(),
            finite_difference_check(f, &hyvi_x0, 1e-6).unwrap(),
        ));
    }
    let d = arch.num_params();
    let mf_x0 = vec![0.2, -0.4, 0.1, -1.0, -0.5, -2.0, 0.3];
    for (name, space) in [("MFVI", Space::Parameter), ("FuNN-MFVI", Space::Predictor)] {
        let nz = noise(d, space == Space::Predictor, 9);
        let f = |t: &mut Tape, v: Var| {
            let mu = t.slice(v, 0..1, 0..d)?;
            let rho = t.slice(v, 0..1, d..2 * d)?;
            let raw = t.slice(v, 0..1, 2 * d..2 * d + 1)?;
            let sigma = t.softplus(raw);
            Ok(
                elbo_mfvi(t, mu, rho, &arch, &batch, sigma, &nz, &prior, 1, space)
                    .unwrap()
                    .total,
            )
        };
        errors.push((
            name,
            mf_x0.len(),
            finite_difference_check(f, &mf_x0, 1e-6).unwrap(),
        ));
    }
    let pass = errors.iter().all(|&(_, n, e)| n <= 20 && e < 1e-3);
    let detail: Vec<String> = errors
        .iter()
        .map(|(name, n, e)| format!("{name} {e:.1e} ({n} params)"))
        .collect();
    report(
        3,
        pass,
        &format!(
            "worst relative error {} (< 1e-3); {:.2}s",
            detail.join(", "),
            started.elapsed().as_secs_f64()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_4_hmc_recovers_conjugate_posterior() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 30;
    let (w_true, b_true, sigma, prior_var) = (0.8, -0.3, 0.5, 0.5);
    let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|&xi| w_true * xi + b_true + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let data = Dataset::new(
        Array2::from_shape_vec((n, 1), x.clone()).unwrap(),
        Array1::from(y.clone()),
    )
    .unwrap();
    // a predictor without hidden layers is linear: θ = (w, b)
    let arch = PredictorArch::new(1, vec![], Activation::Tanh);
    assert_eq!(
        mlp_forward(&arch, &[2.0, 0.5], data.x.view()).unwrap()[0],
        2.0 * x[0] + 0.5
    );

    // Closed form: A = XᵀX/σ² + I/v, Σ = A⁻¹, μ = Σ Xᵀy/σ² with X rows (x, 1).
    let s2 = sigma * sigma;
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sx: f64 = x.iter().sum();
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
    let sy: f64 = y.iter().sum();
    let a = [
        [sxx / s2 + 1.0 / prior_var, sx / s2],
        [sx / s2, n as f64 / s2 + 1.0 / prior_var],
    ];
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let cov = [
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ];
    let rhs = [sxy / s2, sy / s2];
    let mean = [
        cov[0][0] * rhs[0] + cov[0][1] * rhs[1],
        cov[1][0] * rhs[0] + cov[1][1] * rhs[1],
    ];

    let target = PosteriorTarget::new(&data, &arch, GaussianPrior::new(prior_var), sigma).unwrap();
    let config = HmcConfig {
        n_iterations: 12_000,
        n_burnin: 2_000,
        n_leapfrog: 10,
        max_retained: 10_000,
        seed: 4,
        ..HmcConfig::default()
    };
    let chain = hmc_sample(|t: &[f64]| target.eval(t), &[0.0, 0.0], &config).unwrap();
    let s = &chain.samples;
    let m = s.nrows() as f64;
    let est_mean = [s.column(0).sum() / m, s.column(1).sum() / m];
    let c = |i: usize, j: usize| {
        s.column(i)
            .iter()
            .zip(s.column(j))
            .map(|(a, b)| (a - est_mean[i]) * (b - est_mean[j]))
            .sum::<f64>()
            / (m - 1.0)
    };
    let est_cov = [[c(0, 0), c(0, 1)], [c(1, 0), c(1, 1)]];
    let mean_err = (0..2)
        .map(|i| (est_mean[i] - mean[i]).abs())
        .fold(0.0, f64::max);
    // diagonal: relative; off-diagonal: relative to the geometric mean of the variances
    let cov_err = (0..2)
        .flat_map(|i| (0..2).map(move |j| (i, j)))
        .map(|(i, j)| (est_cov[i][j] - cov[i][j]).abs() / (cov[i][i] * cov[j][j]).sqrt())
        .fold(0.0, f64::max);

    let q0 = [0.3, -0.2];
    let p0 = [0.7, -1.1];
    let (_, g0) = target.eval(&q0);
    let (q1, p1, _, g1) = leapfrog(&|t: &[f64]| target.eval(t), &q0, &p0, &g0, 0.05, 40);
    let back: Vec<f64> = p1.iter().map(|v| -v).collect();
    let (q2, p2, _, _) = leapfrog(&|t: &[f64]| target.eval(t), &q1, &back, &g1, 0.05, 40);
    let rev_err = (0..2)
        .map(|i| (q2[i] - q0[i]).abs().max((p2[i] + p0[i]).abs()))
        .fold(0.0, f64::max);

    let secs = started.elapsed().as_secs_f64();
    let pass = s.nrows() == 10_000
        && mean_err <= 0.05
        && cov_err <= 0.10
        && rev_err < 1e-8
        && secs < 120.0;
    report(
        4,
        pass,
        &format!(
            "{} samples, accept {:.2}; mean error {mean_err:.4} (≤ 0.05), covariance error {:.1}% (≤ 10%), reversibility {rev_err:.1e} (< 1e-8); {secs:.1}s",
            s.nrows(),
            chain.accept_rate,
            100.0 * cov_err
        ),
    );
    assert!(pass);
}

struct WaveRun {
    method: Method,
    report: MetricReport,
    /// Training plus the epistemic evaluation.
    seconds: f64,
}

const WAVE_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const WAVE_METHODS: [Method; 4] = [
    Method::FunnHyvi,
    Method::NnHyvi,
    Method::Mfvi,
    Method::Ensemble,
];

fn wave_config(method: Method) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        method,
        ..ExperimentConfig::default()
    };
    apply_wave_budget(&mut c);
    c
}

/// Every wave run shared by criteria 5, 6 and 8, trained once.
fn wave_runs() -> &'static [WaveRun] {
    static RUNS: OnceLock<Vec<WaveRun>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut runs = Vec::new();
        for seed in WAVE_SEEDS {
            let prepared: Prepared = prepare(&wave_config(Method::FunnHyvi), seed, None).unwrap();
            for method in WAVE_METHODS {
                let config = wave_config(method);
                let started = Instant::now();
                let (outcome, _) = fit(&config, &prepared, seed)
                    .unwrap_or_else(|_| panic!("{method} seed {seed} failed"));
                let only = |epistemic: bool| MetricSet {
                    entropy_param: !epistemic,
                    entropy_pred: !epistemic,
                    epistemic,
                    band: false,
                };
                let post = &outcome.posterior;
                let mut report = evaluate(
                    post,
                    &prepared,
                    &config,
                    seed,
                    only(true),
                    outcome.runtime_s,
                )
                .unwrap();
                let seconds = started.elapsed().as_secs_f64();
                let entropies = evaluate(
                    post,
                    &prepared,
                    &config,
                    seed,
                    only(false),
                    outcome.runtime_s,
                )
                .unwrap();
                report.entropy_param = entropies.entropy_param;
                report.entropy_pred = entropies.entropy_pred;
                runs.push(WaveRun {
                    method,
                    report,
                    seconds,
                });
            }
        }
        runs
    })
}

fn runs_of(method: Method) -> impl Iterator<Item = &'static WaveRun> {
    wave_runs().iter().filter(move |r| r.method == method)
}

/// exp(median OOD − median train): entropies are log-scale, so the ratio of
/// the underlying uncertainties is the exponential of their difference.
fn epistemic_ratio(r: &MetricReport) -> f64 {
    let e = r.epistemic.as_ref().unwrap();
    (median(&e.ood) - median(&e.train)).exp()
}

#[test]
fn criterion_5_wave_epistemic_ratio() {
    let ratio_of = |m: Method| {
        median(
            &runs_of(m)
                .map(|r| epistemic_ratio(&r.report))
                .collect::<Vec<_>>(),
        )
    };
    let funn = ratio_of(Method::FunnHyvi);
    let mfvi = ratio_of(Method::Mfvi);
    let secs: f64 = runs_of(Method::FunnHyvi)
        .chain(runs_of(Method::Mfvi))
        .map(|r| r.seconds)
        .sum();
    let pass = funn >= 2.0 && mfvi < 2.0 && secs < 900.0;
    report(
        5,
        pass,
        &format!("median OOD/train epistemic ratio FuNN-HyVI {funn:.2} (≥ 2), MFVI {mfvi:.2} (< 2) over 5 seeds; {secs:.0}s"),
    );
    assert!(pass);
}

#[test]
fn criterion_6_wave_entropy_ordering() {
    let funn: Vec<&WaveRun> = runs_of(Method::FunnHyvi).collect();
    let nn: Vec<&WaveRun> = runs_of(Method::NnHyvi).collect();
    let value = |v: &Option<hyvi_core::evaluation::MetricValue>| v.unwrap().value;
    let pred_wins = funn
        .iter()
        .zip(&nn)
        .filter(|(f, n)| value(&f.report.entropy_pred) > value(&n.report.entropy_pred))
        .count();
    let param_wins = funn
        .iter()
        .zip(&nn)
        .filter(|(f, n)| value(&n.report.entropy_param) > value(&f.report.entropy_param))
        .count();
    let pass = pred_wins >= 4 && param_wins >= 4;
    report(
        6,
        pass,
        &format!(
            "H_pred(FuNN-HyVI) > H_pred(NN-HyVI) in {pred_wins}/5 seeds, H_param(NN-HyVI) > H_param(FuNN-HyVI) in {param_wins}/5 seeds (≥ 4 each)"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_concrete_ood_separation() {
    let Ok(path) = locate_uci("concrete", None) else {
        report(
            7,
            false,
            "blocked: concrete.csv not found (set HYVI_DATA_DIR, see scripts/fetch_uci.py); criterion not evaluated",
        );
        return;
    };
    let started = Instant::now();
    let mut details = Vec::new();
    let mut separated = Vec::new();
    for method in [Method::FunnHyvi, Method::Mfvi] {
        let mut config = ExperimentConfig {
            method,
            dataset: DatasetSpec::Uci {
                name: "concrete".into(),
            },
            ..ExperimentConfig::default()
        };
        hyvi_cli::commands::apply_small_budget(&mut config);
        config.train.noise.mode = NoiseMode::Learned;
        let prepared = prepare(&config, 0, path.parent()).unwrap();
        let (outcome, _) = fit(&config, &prepared, 0).unwrap_or_else(|_| panic!("{method} failed"));
        let metrics = MetricSet {
            entropy_param: false,
            entropy_pred: false,
            epistemic: true,
            band: false,
        };
        let r = evaluate(
            &outcome.posterior,
            &prepared,
            &config,
            0,
            metrics,
            outcome.runtime_s,
        )
        .unwrap();
        let e = r.epistemic.unwrap();
        let [t25, _, t75] = quartiles(&e.train);
        let [o25, _, o75] = quartiles(&e.ood);
        separated.push(t75 < o25 || o75 < t25);
        details.push(format!(
            "{method} train IQR [{t25:.2}, {t75:.2}] OOD IQR [{o25:.2}, {o75:.2}]"
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    let pass = separated[0] && !separated[1] && secs < 1200.0;
    report(7, pass, &format!("{}; {secs:.0}s", details.join("; ")));
    assert!(pass);
}

#[test]
fn criterion_8_wave_rmse() {
    let mut worst = Vec::new();
    for method in [Method::FunnHyvi, Method::NnHyvi, Method::Ensemble] {
        let max = runs_of(method).map(|r| r.report.rmse).fold(0.0, f64::max);
        worst.push((method, max));
    }
    let pass = worst.iter().all(|&(_, r)| r < 0.2);
    let detail: Vec<String> = worst.iter().map(|(m, r)| format!("{m} {r:.3}")).collect();
    report(
        8,
        pass,
        &format!(
            "worst test RMSE over 5 seeds: {} (< 0.2)",
            detail.join(", ")
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_9_runs_are_bit_exact() {
    let mut mismatched = Vec::new();
    for method in Method::ALL {
        let mut config = ExperimentConfig {
            method,
            ..ExperimentConfig::default()
        };
        config.train.max_epochs = 3;
        config.train.n_kl_samples = 50;
        config.hmc = HmcConfig {
            n_iterations: 60,
            n_burnin: 20,
            n_leapfrog: 5,
            ..HmcConfig::default()
        };
        config.ensemble.n_models = 3;
        config.ensemble.epochs = 5;
        config.dropout.epochs = 5;
        let prepared = prepare(&config, 11, None).unwrap();
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        let files: Vec<_> = dirs
            .iter()
            .map(|d| train_and_save(&config, &prepared, 11, d.path()).unwrap().1)
            .collect();
        let same = |a: &std::path::Path, b: &std::path::Path| {
            std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
        };
        if !same(&files[0].posterior, &files[1].posterior)
            || !same(&files[0].sidecar, &files[1].sidecar)
        {
            mismatched.push(method.name());
        }
    }
    let pass = mismatched.is_empty();
    report(
        9,
        pass,
        &if pass {
            format!(
                "posterior and sidecar bytes identical across two runs for all {} methods",
                Method::ALL.len()
            )
        } else {
            format!("files differ for {}", mismatched.join(", "))
        },
    );
    assert!(pass);
}
