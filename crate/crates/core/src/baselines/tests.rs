use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::datasets::{make_wave, Dataset};
use crate::inference::PosteriorKind;
use crate::nets::{mlp_forward, predict_batch, Activation, GaussianPrior, PredictorArch};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn linear_arch() -> PredictorArch {
    PredictorArch::new(1, vec![], Activation::Tanh)
}

/// `y = 0.7 x − 0.3 + N(0, 0.5²)` on 25 points.
fn linear_data() -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x: Vec<f64> = (0..25).map(|_| rng.random_range(-1.5..1.5)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|v| 0.7 * v - 0.3 + 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Dataset::new(Array2::from_shape_vec((25, 1), x).unwrap(), Array1::from(y)).unwrap()
}

/// Closed-form posterior of `(w, b)` under `N(0, v I)` and known noise.
fn conjugate_posterior(data: &Dataset, v: f64, sigma: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let s2 = sigma * sigma;
    let (mut sxx, mut sx, mut sxy, mut sy) = (0.0, 0.0, 0.0, 0.0);
    for (x, y) in data.x.column(0).iter().zip(&data.y) {
        sxx += x * x;
        sx += x;
        sxy += x * y;
        sy += y;
    }
    let n = data.len() as f64;
    let a = [[sxx / s2 + 1.0 / v, sx / s2], [sx / s2, n / s2 + 1.0 / v]];
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
    (mean, cov)
}

fn std_normal_target(theta: &[f64]) -> (f64, Vec<f64>) {
    let lp = -0.5 * theta.iter().map(|t| t * t).sum::<f64>();
    (lp, theta.iter().map(|t| -t).collect())
}

#[test]
fn empty_dataset_gives_the_prior_density() {
    let arch = PredictorArch::new(2, vec![3], Activation::Tanh);
    let d = arch.num_params();
    let x = Array2::zeros((0, 2));
    let y = Array1::zeros(0);
    let (lp, grad) = log_posterior_and_grad(
        &vec![0.0; d],
        x.view(),
        y.view(),
        &arch,
        &GaussianPrior::default(),
        0.3,
    )
    .unwrap();
    assert!((lp + 0.5 * d as f64 * (LN_2PI + 0.5f64.ln())).abs() < 1e-12);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn log_posterior_matches_direct_sum() {
    let arch = PredictorArch::new(1, vec![4], Activation::Tanh);
    let data = make_wave(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let theta: Vec<f64> = (0..arch.num_params())
        .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let prior = GaussianPrior::default();
    let sigma = 0.4;
    let (lp, _) =
        log_posterior_and_grad(&theta, data.x.view(), data.y.view(), &arch, &prior, sigma).unwrap();
    let preds = mlp_forward(&arch, &theta, data.x.view()).unwrap();
    let ll: f64 = preds
        .iter()
        .zip(&data.y)
        .map(|(p, y)| -0.5 * ((p - y) / sigma).powi(2) - sigma.ln() - 0.5 * LN_2PI)
        .sum();
    let expected = ll + prior.log_density(&theta);
    assert!(
        (lp - expected).abs() < 1e-9 * expected.abs(),
        "{lp} vs {expected}"
    );
}

#[test]
fn log_posterior_gradient_matches_finite_differences() {
    let arch = PredictorArch::new(1, vec![4], Activation::Tanh);
    let data = make_wave(2);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let theta: Vec<f64> = (0..arch.num_params())
        .map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let prior = GaussianPrior::default();
    let f = |t: &[f64]| {
        log_posterior_and_grad(t, data.x.view(), data.y.view(), &arch, &prior, 0.3).unwrap()
    };
    let (_, grad) = f(&theta);
    let h = 1e-6;
    for i in 0..theta.len() {
        let mut up = theta.clone();
        up[i] += h;
        let mut down = theta.clone();
        down[i] -= h;
        let fd = (f(&up).0 - f(&down).0) / (2.0 * h);
        let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
        assert!(rel < 1e-4, "coordinate {i}: {} vs {fd}", grad[i]);
    }
}

#[test]
fn duplicated_point_adds_its_log_likelihood_twice() {
    let arch = linear_arch();
    let prior = GaussianPrior::default();
    let theta = [0.4, -0.2];
    let base = linear_data();
    let lp = |x: Array2<f64>, y: Array1<f64>| {
        log_posterior_and_grad(&theta, x.view(), y.view(), &arch, &prior, 0.5)
            .unwrap()
            .0
    };
    let l0 = lp(base.x.clone(), base.y.clone());
    let extra = |times: usize| {
        let mut x = base.x.clone().into_raw_vec_and_offset().0;
        let mut y = base.y.to_vec();
        for _ in 0..times {
            x.push(0.8);
            y.push(1.1);
        }
        lp(
            Array2::from_shape_vec((y.len(), 1), x).unwrap(),
            Array1::from(y),
        )
    };
    let once = extra(1) - l0;
    let twice = extra(2) - l0;
    assert!((twice - 2.0 * once).abs() < 1e-10);
    let direct = -0.5 * ((0.4 * 0.8 - 0.2 - 1.1) / 0.5f64).powi(2) - 0.5f64.ln() - 0.5 * LN_2PI;
    assert!((once - direct).abs() < 1e-10);
}

#[test]
fn hmc_recovers_a_standard_normal() {
    let config = HmcConfig {
        n_iterations: 12_000,
        n_burnin: 2_000,
        n_leapfrog: 5,
        seed: 1,
        ..HmcConfig::default()
    };
    let chain = hmc_sample(std_normal_target, &[2.0], &config).unwrap();
    assert_eq!(chain.samples.nrows(), 10_000);
    let s = chain.samples.column(0);
    let m = s.mean().unwrap();
    let v = s.var(1.0);
    assert!(m.abs() < 0.05, "mean {m}");
    assert!((v - 1.0).abs() < 0.1, "variance {v}");
}

#[test]
fn hmc_matches_conjugate_linear_regression() {
    let data = linear_data();
    let arch = linear_arch();
    let prior = GaussianPrior::default();
    let target = PosteriorTarget::new(&data, &arch, prior, 0.5).unwrap();
    let config = HmcConfig {
        n_iterations: 12_000,
        n_burnin: 2_000,
        n_leapfrog: 10,
        seed: 7,
        ..HmcConfig::default()
    };
    let chain = hmc_sample(|t: &[f64]| target.eval(t), &[0.0, 0.0], &config).unwrap();
    let (mean, cov) = conjugate_posterior(&data, prior.variance, 0.5);
    let s = &chain.samples;
    assert_eq!(s.nrows(), 10_000);
    let m = s.mean_axis(ndarray::Axis(0)).unwrap();
    for j in 0..2 {
        assert!(
            (m[j] - mean[j]).abs() < 0.05,
            "mean {j}: {} vs {}",
            m[j],
            mean[j]
        );
    }
    let c = s.t().dot(&(s - &m)) / (s.nrows() as f64 - 1.0);
    for i in 0..2 {
        for j in 0..2 {
            let (ci, ce) = (c[[i, j]], cov[i][j]);
            let tol = 0.1 * (cov[i][i] * cov[j][j]).sqrt();
            assert!((ci - ce).abs() < tol, "cov[{i}][{j}]: {ci} vs {ce}");
        }
    }
    assert!(
        (0.6..=0.95).contains(&chain.accept_rate),
        "accept {}",
        chain.accept_rate
    );
    assert_eq!(chain.divergences, 0);
}

#[test]
fn leapfrog_is_time_reversible() {
    let data = make_wave(0);
    let arch = PredictorArch::new(1, vec![5], Activation::Tanh);
    let target = PosteriorTarget::new(&data, &arch, GaussianPrior::default(), 0.1).unwrap();
    let f = |t: &[f64]| target.eval(t);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let q0: Vec<f64> = (0..arch.num_params())
        .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let p0: Vec<f64> = (0..arch.num_params())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let (_, g0) = f(&q0);
    let (q1, p1, _, g1) = leapfrog(&f, &q0, &p0, &g0, 1e-3, 50);
    let back: Vec<f64> = p1.iter().map(|v| -v).collect();
    let (q2, p2, _, _) = leapfrog(&f, &q1, &back, &g1, 1e-3, 50);
    for i in 0..q0.len() {
        assert!((q2[i] - q0[i]).abs() < 1e-8);
        assert!((p2[i] + p0[i]).abs() < 1e-8);
    }
}

#[test]
fn hamiltonian_drift_is_small_at_small_steps() {
    let q0 = [0.5, -1.2, 0.3];
    let p0 = [1.0, 0.2, -0.7];
    let (lp0, g0) = std_normal_target(&q0);
    let (q1, p1, lp1, _) = leapfrog(&std_normal_target, &q0, &p0, &g0, 1e-3, 1000);
    let h = |lp: f64, p: &[f64]| -lp + 0.5 * p.iter().map(|v| v * v).sum::<f64>();
    assert!((h(lp1, &p1) - h(lp0, &p0)).abs() < 1e-4);
    // one unit of time along the exact flow q(t) = q cos t + p sin t
    for i in 0..3 {
        let exact = q0[i] * 1f64.cos() + p0[i] * 1f64.sin();
        assert!((q1[i] - exact).abs() < 1e-5);
    }
}

#[test]
fn hmc_config_preconditions() {
    let zero = HmcConfig {
        n_leapfrog: 0,
        ..HmcConfig::default()
    };
    assert!(matches!(
        hmc_sample(std_normal_target, &[0.0], &zero),
        Err(BaselineError::Config(_))
    ));
    let burn = HmcConfig {
        n_iterations: 100,
        n_burnin: 100,
        ..HmcConfig::default()
    };
    assert!(burn.validate().is_err());
    let bad = |t: &[f64]| (f64::NAN, t.to_vec());
    assert!(matches!(
        hmc_sample(bad, &[0.0], &HmcConfig::default()),
        Err(BaselineError::NonFiniteInit)
    ));
}

#[test]
fn thinning_caps_retained_samples() {
    let config = HmcConfig {
        n_iterations: 2_600,
        n_burnin: 100,
        n_leapfrog: 2,
        max_retained: 1_000,
        seed: 2,
        ..HmcConfig::default()
    };
    assert_eq!(config.thinning(), 3);
    let chain = hmc_sample(std_normal_target, &[0.0, 0.0], &config).unwrap();
    assert_eq!(chain.samples.nrows(), 833);
    assert!(chain.samples.nrows() <= config.max_retained);
    assert_eq!(chain.step_size_trace.len(), 2_600);
    assert!((0.0..=1.0).contains(&chain.accept_rate));
}

#[test]
fn hmc_is_seed_deterministic() {
    let config = HmcConfig {
        n_iterations: 300,
        n_burnin: 100,
        n_leapfrog: 3,
        seed: 5,
        ..HmcConfig::default()
    };
    let a = hmc_sample(std_normal_target, &[1.0, 1.0], &config).unwrap();
    let b = hmc_sample(std_normal_target, &[1.0, 1.0], &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn divergent_trajectories_are_rejected_and_counted() {
    // log density falls off a cliff outside |θ| < 3
    let cliff = |t: &[f64]| {
        if t[0].abs() < 3.0 {
            std_normal_target(t)
        } else {
            (f64::NEG_INFINITY, vec![0.0])
        }
    };
    let config = HmcConfig {
        n_iterations: 400,
        n_burnin: 200,
        n_leapfrog: 20,
        initial_step_size: Some(2.5),
        seed: 3,
        ..HmcConfig::default()
    };
    let chain = hmc_sample(cliff, &[0.0], &config).unwrap();
    assert!(chain.divergences > 0);
    assert!(chain.samples.iter().all(|v| v.abs() < 3.0));
}

fn iid_chains(n_chains: usize, len: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_chains)
        .map(|_| Array2::from_shape_simple_fn((len, 2), || rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

#[test]
fn r_hat_near_one_for_iid_chains() {
    let chains = iid_chains(4, 1000, 11);
    let views: Vec<_> = chains.iter().map(|c| c.view()).collect();
    let diag = diagnostics(&views).unwrap();
    for (r, e) in diag.split_r_hat.iter().zip(&diag.ess_bulk) {
        assert!(*r < 1.01, "{r}");
        assert!(*e > 2500.0, "{e}");
    }
    assert!(diag.degenerate.iter().all(|d| !d));
}

#[test]
fn r_hat_flags_disagreeing_chains() {
    let mut chains = iid_chains(4, 1000, 12);
    chains[0].mapv_inplace(|v| v + 3.0);
    let views: Vec<_> = chains.iter().map(|c| c.view()).collect();
    assert!(diagnostics(&views).unwrap().max_r_hat() > 1.1);
}

#[test]
fn constant_chains_are_degenerate() {
    let chains = vec![Array2::from_elem((50, 1), 2.0); 2];
    let views: Vec<_> = chains.iter().map(|c| c.view()).collect();
    let diag = diagnostics(&views).unwrap();
    assert!(diag.split_r_hat[0].is_nan());
    assert!(diag.degenerate[0]);
}

#[test]
fn ess_of_ar1_tracks_the_closed_form() {
    let phi: f64 = 0.95;
    let (n_chains, len) = (4, 5000);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let chains: Vec<Array2<f64>> = (0..n_chains)
        .map(|_| {
            let mut x = rng.sample::<f64, _>(StandardNormal) / (1.0 - phi * phi).sqrt();
            Array2::from_shape_simple_fn((len, 1), || {
                x = phi * x + rng.sample::<f64, _>(StandardNormal);
                x
            })
        })
        .collect();
    let views: Vec<_> = chains.iter().map(|c| c.view()).collect();
    let ess = diagnostics(&views).unwrap().ess_bulk[0];
    let total = (n_chains * len) as f64;
    let expected = total * (1.0 - phi) / (1.0 + phi);
    assert!(ess < 0.2 * total);
    assert!((ess / expected - 1.0).abs() < 0.35, "{ess} vs {expected}");
}

#[test]
fn diagnostics_need_four_half_chains() {
    let chains = iid_chains(1, 100, 1);
    let views: Vec<_> = chains.iter().map(|c| c.view()).collect();
    assert!(matches!(
        diagnostics(&views),
        Err(BaselineError::TooFewChains(2))
    ));
}

#[test]
fn diagnostics_csv_has_one_row_per_coordinate() {
    let chains = iid_chains(2, 100, 2);
    let views: Vec<_> = chains.iter().map(|c| c.view()).collect();
    let diag = diagnostics(&views).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("diag.csv");
    write_diagnostics_csv(&diag, &path, "seed=2").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# seed=2");
    assert_eq!(lines[1], "coordinate,split_r_hat,ess_bulk,degenerate");
    assert_eq!(lines.len(), 4);
}

fn quick_ensemble(seed: u64) -> EnsembleConfig {
    EnsembleConfig {
        epochs: 150,
        seed,
        ..EnsembleConfig::default()
    }
}

#[test]
fn ensemble_members_are_distinct_and_fit() {
    let data = make_wave(0);
    let arch = PredictorArch::wave();
    let out = train_ensemble(&data, &arch, &quick_ensemble(0)).unwrap();
    let PosteriorKind::Ensemble(members) = &out.posterior.kind else {
        panic!("not an ensemble");
    };
    assert_eq!(members.nrows(), 5);
    for i in 0..5 {
        for j in i + 1..5 {
            assert_ne!(members.row(i), members.row(j));
        }
    }
    let y_std = data.y.std(0.0);
    let preds = predict_batch(&arch, members.view(), data.x.view()).unwrap();
    for row in preds.rows() {
        let rmse = (row
            .iter()
            .zip(&data.y)
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>()
            / data.len() as f64)
            .sqrt();
        assert!(rmse < y_std, "{rmse} vs {y_std}");
    }
    assert_eq!(out.trace.rows.len(), 150);
    assert!(out.posterior.sigma_l > 0.0);
    assert_eq!(out.posterior.finite_support(), Some(5));
}

#[test]
fn ensemble_is_seed_deterministic() {
    let data = make_wave(0);
    let arch = PredictorArch::new(1, vec![8], Activation::Tanh);
    let cfg = EnsembleConfig {
        epochs: 20,
        ..quick_ensemble(4)
    };
    let a = train_ensemble(&data, &arch, &cfg).unwrap();
    let b = train_ensemble(&data, &arch, &cfg).unwrap();
    assert_eq!(a.posterior, b.posterior);
    let c = train_ensemble(&data, &arch, &EnsembleConfig { seed: 5, ..cfg }).unwrap();
    assert_ne!(a.posterior, c.posterior);
}

#[test]
fn init_scales_follow_fan_in_and_out() {
    let arch = PredictorArch::new(40, vec![200], Activation::Relu);
    let theta = init_predictor(&arch, &mut ChaCha8Rng::seed_from_u64(0));
    let l = arch.layouts();
    let first = &theta[l[0].weight_offset..l[0].bias_offset];
    let v = first.iter().map(|w| w * w).sum::<f64>() / first.len() as f64;
    assert!((v / (2.0 / 40.0) - 1.0).abs() < 0.05, "{v}");
    assert!(theta[l[0].bias_offset..l[0].bias_offset + 200]
        .iter()
        .all(|b| *b == 0.0));
}

#[test]
fn dropout_weight_decay_is_as_quoted() {
    let cfg = DropoutConfig::default();
    assert_eq!(cfg.p_drop, 0.05);
    assert!((cfg.weight_decay_for(100) - 10f64.powf(-0.1)).abs() < 1e-15);
    assert_eq!(
        DropoutConfig {
            weight_decay: Some(0.0),
            ..cfg
        }
        .weight_decay_for(100),
        0.0
    );
}

#[test]
fn dropout_trains_and_samples_masks() {
    let data = make_wave(1);
    let arch = PredictorArch::wave();
    let cfg = DropoutConfig {
        epochs: 30,
        seed: 1,
        ..DropoutConfig::default()
    };
    let out = train_mc_dropout(&data, &arch, &cfg).unwrap();
    assert!(out
        .trace
        .rows
        .iter()
        .all(|r| r.objective.is_finite() && r.sigma_l > 0.0));
    assert_ne!(out.trace.rows[0].sigma_l, out.trace.rows[29].sigma_l);
    let draws = out.posterior.sample(2000, 3);
    let preds = predict_batch(&arch, draws.view(), array![[0.25]].view()).unwrap();
    let col = preds.column(0);
    assert!(col.std(0.0) > 0.0);

    // fraction of hidden units whose outgoing weight was zeroed
    let PosteriorKind::Dropout { weights, .. } = &out.posterior.kind else {
        panic!("not dropout");
    };
    let out_offset = arch.layouts()[1].weight_offset;
    let many = out.posterior.sample(10_000, 4);
    let zeroed = many
        .rows()
        .into_iter()
        .flat_map(|r| (0..50).map(move |u| (r[out_offset + u] == 0.0) as usize))
        .sum::<usize>() as f64;
    let live = weights[out_offset..out_offset + 50]
        .iter()
        .filter(|w| **w != 0.0)
        .count() as f64;
    let frac = zeroed / (10_000.0 * live);
    assert!((frac - 0.05).abs() < 0.003, "{frac}");
}

#[test]
fn zero_dropout_is_deterministic() {
    let data = make_wave(1);
    let arch = PredictorArch::new(1, vec![6], Activation::Tanh);
    let cfg = DropoutConfig {
        p_drop: 0.0,
        epochs: 5,
        ..DropoutConfig::default()
    };
    let out = train_mc_dropout(&data, &arch, &cfg).unwrap();
    let draws = out.posterior.sample(20, 0);
    let preds = predict_batch(&arch, draws.view(), data.x.view()).unwrap();
    for row in preds.rows() {
        assert_eq!(row, preds.row(0));
    }
    assert!(matches!(
        train_mc_dropout(&data, &arch, &DropoutConfig { p_drop: 1.0, ..cfg }),
        Err(BaselineError::Config(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn leapfrog_reversible_on_gaussian(q in proptest::collection::vec(-3f64..3.0, 3), p in proptest::collection::vec(-3f64..3.0, 3), eps in 0.01f64..0.5, n in 1usize..40) {
        let (_, g) = std_normal_target(&q);
        let (q1, p1, _, g1) = leapfrog(&std_normal_target, &q, &p, &g, eps, n);
        let back: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (q2, p2, _, _) = leapfrog(&std_normal_target, &q1, &back, &g1, eps, n);
        for i in 0..3 {
            prop_assert!((q2[i] - q[i]).abs() < 1e-8);
            prop_assert!((p2[i] + p[i]).abs() < 1e-8);
        }
    }
}
