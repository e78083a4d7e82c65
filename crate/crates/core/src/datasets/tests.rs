use ndarray::array;
use proptest::prelude::*;

use super::*;

#[test]
fn wave_has_120_rows_on_the_two_patches() {
    let ds = make_wave(0);
    assert_eq!(ds.len(), 120);
    assert_eq!(ds.dim(), 1);
    for &x in ds.x.column(0) {
        assert!(
            (-1.0..=-0.5).contains(&x) || (0.5..=1.0).contains(&x),
            "{x}"
        );
    }
    let left = ds.x.column(0).iter().filter(|x| **x < 0.0).count();
    assert!((35..=85).contains(&left));
}

#[test]
fn wave_clean_spot_check() {
    assert_eq!(wave_clean(-0.2), 1.0);
}

#[test]
fn wave_residual_noise_level() {
    for seed in 0..5 {
        let ds = make_wave(seed);
        let r: Vec<f64> =
            ds.x.column(0)
                .iter()
                .zip(&ds.y)
                .map(|(x, y)| y - wave_clean(*x))
                .collect();
        let m = r.iter().sum::<f64>() / r.len() as f64;
        let sd = (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (r.len() - 1) as f64).sqrt();
        assert!((0.07..=0.13).contains(&sd), "seed {seed}: {sd}");
    }
}

#[test]
fn wave_targets_track_the_clean_function() {
    let ds = make_wave(3);
    let clean: Vec<f64> = ds.x.column(0).iter().map(|x| wave_clean(*x)).collect();
    let y = ds.y.to_vec();
    let n = y.len() as f64;
    let (my, mc) = (y.iter().sum::<f64>() / n, clean.iter().sum::<f64>() / n);
    let cov: f64 = y.iter().zip(&clean).map(|(a, b)| (a - my) * (b - mc)).sum();
    let vy: f64 = y.iter().map(|a| (a - my).powi(2)).sum();
    let vc: f64 = clean.iter().map(|b| (b - mc).powi(2)).sum();
    assert!(cov / (vy * vc).sqrt() > 0.95);
}

#[test]
fn wave_is_seed_deterministic() {
    assert_eq!(make_wave(7), make_wave(7));
    assert_ne!(make_wave(7).y, make_wave(8).y);
}

#[test]
fn wave_ood_bounds_and_mean() {
    let nu = wave_ood();
    assert_eq!(
        (nu.lower.clone(), nu.upper.clone()),
        (vec![-4.0], vec![2.0])
    );
    let s = sample_inputs(&nu, 100_000, 1);
    assert!(s.iter().all(|v| (-4.0..=2.0).contains(v)));
    let m = s.mean().unwrap();
    assert!((m + 1.0).abs() < 0.05, "{m}");
}

#[test]
fn load_small_csv_exactly() {
    let text = "a,b,y\n1,2,3\n4.5,-5,6\n7,8e-1,9\n";
    let ds = read_csv(text.as_bytes(), "y").unwrap();
    assert_eq!(ds.x, array![[1.0, 2.0], [4.5, -5.0], [7.0, 0.8]]);
    assert_eq!(ds.y.to_vec(), vec![3.0, 6.0, 9.0]);
    assert_eq!(ds.feature_names.unwrap(), vec!["a", "b"]);

    let ds = read_csv(text.as_bytes(), "a").unwrap();
    assert_eq!(ds.x.row(0).to_vec(), vec![2.0, 3.0]);
}

#[test]
fn csv_errors_carry_positions() {
    let err = read_csv("a,y\n1,2\n3,oops\n".as_bytes(), "y").unwrap_err();
    assert!(
        matches!(err, DataError::NonNumeric { row: 2, col: 1, .. }),
        "{err}"
    );
    let err = read_csv("a,y\n1,2\n3\n".as_bytes(), "y").unwrap_err();
    assert!(
        matches!(
            err,
            DataError::Ragged {
                row: 2,
                expected: 2,
                found: 1
            }
        ),
        "{err}"
    );
    let err = read_csv("a,y\n1,2\n".as_bytes(), "target").unwrap_err();
    assert!(matches!(err, DataError::MissingTarget(_)));
    let err = read_csv("a,y\n1,NaN\n".as_bytes(), "y").unwrap_err();
    assert!(matches!(err, DataError::NonNumeric { row: 1, col: 1, .. }));
}

#[test]
fn boston_fixture_shape() {
    let ds = load_uci("boston", Some(&bundled_data_dir())).unwrap();
    assert_eq!((ds.len(), ds.dim()), (506, 13));
    assert_eq!(ds.y[0], 24.0);
}

#[test]
fn concrete_shape_when_available() {
    // The concrete file is not bundled; it is checked when a data directory provides it.
    match load_uci("concrete", None) {
        Ok(ds) => assert_eq!((ds.len(), ds.dim()), (1030, 8)),
        Err(DataError::NotFound { .. }) => {}
        Err(e) => panic!("{e}"),
    }
}

#[test]
fn split_sizes_and_determinism() {
    let ds = load_uci("boston", Some(&bundled_data_dir())).unwrap();
    let (train, test) = split_standardize(&ds, 0.9, 4).unwrap();
    assert_eq!((train.len(), test.len()), (455, 51));
    let (train2, test2) = split_standardize(&ds, 0.9, 4).unwrap();
    assert_eq!(train, train2);
    assert_eq!(test, test2);

    for col in train.x.columns() {
        let m = col.mean().unwrap();
        let s = col.std(0.0);
        assert!(m.abs() < 1e-9 && (s - 1.0).abs() < 1e-9);
    }
    assert!(train.y.mean().unwrap().abs() < 1e-9);
    let off_center = test
        .x
        .columns()
        .into_iter()
        .filter(|c| c.mean().unwrap().abs() > 1e-6)
        .count();
    assert!(off_center > 0);
    assert_eq!(train.norm_stats, test.norm_stats);
}

#[test]
fn split_rejects_tiny_training_sets() {
    let ds = Dataset::new(array![[1.0], [2.0]], array![1.0, 2.0]).unwrap();
    assert!(matches!(
        split_standardize(&ds, 0.9, 0),
        Err(DataError::TooFewRows(1))
    ));
}

#[test]
fn constant_feature_rejected() {
    let ds = Dataset::new(
        array![[1.0, 0.0], [1.0, 1.0], [1.0, 2.0]],
        array![1.0, 2.0, 4.0],
    )
    .unwrap();
    assert!(matches!(
        fit_norm_stats(&ds),
        Err(DataError::ConstantFeature { index: 0, .. })
    ));
}

#[test]
fn hyperrectangle_from_feature_range() {
    let ds = Dataset::new(array![[0.0], [2.0], [1.0]], array![0.0, 1.0, 2.0]).unwrap();
    let nu = hyperrectangle_from(&ds);
    assert_eq!((nu.lower.clone(), nu.upper.clone()), (vec![0.0], vec![2.0]));
    let s = sample_inputs(&nu, 1000, 3);
    assert!(s
        .rows()
        .into_iter()
        .all(|r| nu.contains(r.as_slice().unwrap())));

    let wave = hyperrectangle_from(&make_wave(0));
    assert!(wave.lower[0] >= -1.0 && wave.lower[0] < -0.95);
    assert!(wave.upper[0] <= 1.0 && wave.upper[0] > 0.95);
}

#[test]
fn sample_inputs_mean_and_reproducibility() {
    let nu = InputDistribution::new(vec![-1.0, 2.0, 0.0], vec![1.0, 6.0, 0.0]).unwrap();
    let n = 20_000;
    let s = sample_inputs(&nu, n, 11);
    assert_eq!(s, sample_inputs(&nu, n, 11));
    for j in 0..3 {
        let (l, u) = (nu.lower[j], nu.upper[j]);
        let se = (u - l) / 12f64.sqrt() / (n as f64).sqrt();
        let m = s.column(j).mean().unwrap();
        assert!(
            (m - (l + u) / 2.0).abs() <= 3.0 * se + 1e-15,
            "feature {j}: {m}"
        );
    }
    assert!(InputDistribution::new(vec![1.0], vec![0.0]).is_err());
}

proptest! {
    #[test]
    fn standardize_round_trip(vals in proptest::collection::vec(-1e3f64..1e3, 12), ys in proptest::collection::vec(-50f64..50.0, 4)) {
        let x = Array2::from_shape_vec((4, 3), vals).unwrap();
        let ds = Dataset::new(x.clone(), Array1::from(ys.clone())).unwrap();
        if let Ok(stats) = fit_norm_stats(&ds) {
            let back = stats.destandardize_x(&stats.standardize_x(&x));
            for (a, b) in back.iter().zip(x.iter()) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
            for y in ys {
                prop_assert!((stats.destandardize_y(stats.standardize_y(y)) - y).abs() <= 1e-12 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn training_box_contains_training_inputs(seed in 0u64..200) {
        let ds = make_wave(seed);
        let nu = hyperrectangle_from(&ds);
        for row in ds.x.rows() {
            prop_assert!(nu.contains(row.as_slice().unwrap()));
        }
    }
}
