//! Regression datasets: the synthetic wave problem, CSV ingestion, splitting
//! with train-only standardization, and the uniform input distribution `ν`
//! used to probe predictors off the data.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[cfg(test)]
mod tests;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv parse error at row {row}: {detail}")]
    Csv { row: usize, detail: String },
    #[error("non-numeric cell {value:?} at row {row}, column {col}")]
    NonNumeric {
        row: usize,
        col: usize,
        value: String,
    },
    #[error("ragged row {row}: expected {expected} cells, found {found}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("target column {0:?} not found in header")]
    MissingTarget(String),
    #[error("feature {index} ({name}) is constant on the training split")]
    ConstantFeature { index: usize, name: String },
    #[error("target is constant on the training split")]
    ConstantTarget,
    #[error("NaN in {0}")]
    NaN(&'static str),
    #[error("split leaves {0} training rows; at least 2 are required")]
    TooFewRows(usize),
    #[error("invalid bounds for feature {index}: lower {lower} > upper {upper}")]
    InvalidBounds {
        index: usize,
        lower: f64,
        upper: f64,
    },
    #[error("unknown dataset {0:?}")]
    UnknownDataset(String),
    #[error("dataset {name} not found; looked in {searched}")]
    NotFound { name: String, searched: String },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Per-feature and target statistics from a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: f64,
    pub y_std: f64,
}

impl NormStats {
    /// Stats that leave data unchanged.
    pub fn identity(d: usize) -> Self {
        Self {
            x_mean: vec![0.0; d],
            x_std: vec![1.0; d],
            y_mean: 0.0,
            y_std: 1.0,
        }
    }

    pub fn standardize_x(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| (v - self.x_mean[j]) / self.x_std[j]);
        }
        out
    }

    pub fn destandardize_x(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = x.clone();
        for (j, mut col) in out.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|v| v * self.x_std[j] + self.x_mean[j]);
        }
        out
    }

    pub fn standardize_y(&self, y: f64) -> f64 {
        (y - self.y_mean) / self.y_std
    }

    pub fn destandardize_y(&self, y: f64) -> f64 {
        y * self.y_std + self.y_mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub feature_names: Option<Vec<String>>,
    /// Present once the data has been standardized.
    pub norm_stats: Option<NormStats>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        assert_eq!(x.nrows(), y.len(), "row count of X and y");
        if x.iter().any(|v| v.is_nan()) {
            return Err(DataError::NaN("features"));
        }
        if y.iter().any(|v| v.is_nan()) {
            return Err(DataError::NaN("targets"));
        }
        Ok(Self {
            x,
            y,
            feature_names: None,
            norm_stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            feature_names: self.feature_names.clone(),
            norm_stats: self.norm_stats.clone(),
        }
    }

    /// Stats used to map predictions back to original target units.
    pub fn stats(&self) -> NormStats {
        self.norm_stats
            .clone()
            .unwrap_or_else(|| NormStats::identity(self.dim()))
    }
}

/// Noise-free wave function `cos(4(x + 0.2))`.
pub fn wave_clean(x: f64) -> f64 {
    (4.0 * (x + 0.2)).cos()
}

pub const WAVE_SIZE: usize = 120;
pub const WAVE_NOISE_STD: f64 = 0.1;

/// `n` wave pairs with `x` uniform on `[−1, −0.5] ∪ [0.5, 1]`.
pub fn make_wave_n(n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patch = Uniform::new_inclusive(0.5, 1.0).expect("valid range");
    let noise = Normal::new(0.0, WAVE_NOISE_STD).expect("valid std");
    let mut x = Array2::zeros((n, 1));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let magnitude = patch.sample(&mut rng);
        let xi = if rng.random_bool(0.5) {
            -magnitude
        } else {
            magnitude
        };
        x[[i, 0]] = xi;
        y[i] = wave_clean(xi) + noise.sample(&mut rng);
    }
    let mut ds = Dataset::new(x, y).expect("finite by construction");
    ds.feature_names = Some(vec!["x".into()]);
    ds
}

pub fn make_wave(seed: u64) -> Dataset {
    make_wave_n(WAVE_SIZE, seed)
}

/// Uniform distribution on a closed hyperrectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDistribution {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl InputDistribution {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        assert_eq!(lower.len(), upper.len(), "bound lengths");
        for (index, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) {
                return Err(DataError::InvalidBounds {
                    index,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((n, d));
        for i in 0..n {
            for j in 0..d {
                let (l, u) = (self.lower[j], self.upper[j]);
                out[[i, j]] = if l == u { l } else { rng.random_range(l..=u) };
            }
        }
        out
    }
}

/// `ν = U[−4, 2]` for the wave problem.
pub fn wave_ood() -> InputDistribution {
    InputDistribution::new(vec![-4.0], vec![2.0]).expect("valid bounds")
}

pub fn sample_inputs(nu: &InputDistribution, n: usize, seed: u64) -> Array2<f64> {
    nu.sample(n, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Per-feature min/max box of the dataset's inputs, in whatever units the
/// dataset is currently expressed in.
pub fn hyperrectangle_from(ds: &Dataset) -> InputDistribution {
    let lower =
        ds.x.columns()
            .into_iter()
            .map(|c| c.fold(f64::INFINITY, |a, &b| a.min(b)))
            .collect();
    let upper =
        ds.x.columns()
            .into_iter()
            .map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b)))
            .collect();
    InputDistribution::new(lower, upper).expect("min <= max")
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let trimmed = cell.trim();
    match trimmed.parse::<f64>() {
        Ok(v) if !v.is_nan() => Ok(v),
        _ => Err(DataError::NonNumeric {
            row,
            col,
            value: cell.to_string(),
        }),
    }
}

/// Reads a numeric CSV with a header row; an empty `target_column` selects
/// the last column. Rows and columns in errors are
/// 1-based data-row and 0-based column indices.
pub fn load_csv(path: &Path, target_column: &str) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, target_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, target_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Csv {
            row: 0,
            detail: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let target = if target_column.is_empty() && !header.is_empty() {
        header.len() - 1
    } else {
        header
            .iter()
            .position(|h| h == target_column)
            .ok_or_else(|| DataError::MissingTarget(target_column.to_string()))?
    };
    let width = header.len();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| DataError::Csv {
            row,
            detail: e.to_string(),
        })?;
        if record.len() != width {
            return Err(DataError::Ragged {
                row,
                expected: width,
                found: record.len(),
            });
        }
        for (col, cell) in record.iter().enumerate() {
            let v = parse_cell(cell, row, col)?;
            if col == target {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let n = targets.len();
    let x = Array2::from_shape_vec((n, width - 1), features).expect("rectangular by construction");
    let mut ds = Dataset::new(x, Array1::from(targets))?;
    ds.feature_names = Some(
        header
            .into_iter()
            .enumerate()
            .filter(|(j, _)| *j != target)
            .map(|(_, h)| h)
            .collect(),
    );
    Ok(ds)
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Train-split statistics; constant columns are rejected.
pub fn fit_norm_stats(ds: &Dataset) -> Result<NormStats> {
    let mut x_mean = Vec::with_capacity(ds.dim());
    let mut x_std = Vec::with_capacity(ds.dim());
    for (j, col) in ds.x.columns().into_iter().enumerate() {
        let (m, s) = mean_std(col.iter().copied());
        if !(s > 0.0) {
            let name = ds
                .feature_names
                .as_ref()
                .and_then(|n| n.get(j).cloned())
                .unwrap_or_else(|| format!("x{j}"));
            return Err(DataError::ConstantFeature { index: j, name });
        }
        x_mean.push(m);
        x_std.push(s);
    }
    let (y_mean, y_std) = mean_std(ds.y.iter().copied());
    if !(y_std > 0.0) {
        return Err(DataError::ConstantTarget);
    }
    Ok(NormStats {
        x_mean,
        x_std,
        y_mean,
        y_std,
    })
}

pub fn apply_norm_stats(ds: &Dataset, stats: &NormStats) -> Dataset {
    Dataset {
        x: stats.standardize_x(&ds.x),
        y: ds.y.mapv(|v| stats.standardize_y(v)),
        feature_names: ds.feature_names.clone(),
        norm_stats: Some(stats.clone()),
    }
}

/// Seeded random split with `floor(train_fraction · N)` training rows.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_train = (train_fraction * n as f64).floor() as usize;
    if n_train < 2 {
        return Err(DataError::TooFewRows(n_train));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = idx.split_off(n_train);
    Ok((idx, test))
}

/// Random split followed by standardization with train-only statistics.
pub fn split_standardize(
    ds: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(ds.len(), train_fraction, seed)?;
    let train_raw = ds.select(&train_idx);
    let stats = fit_norm_stats(&train_raw)?;
    Ok((
        apply_norm_stats(&train_raw, &stats),
        apply_norm_stats(&ds.select(&test_idx), &stats),
    ))
}

/// Tabular benchmark known to the loader.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UciSpec {
    pub name: &'static str,
    pub target: &'static str,
    pub dim: usize,
    pub rows: usize,
    /// Fixed observation noise in standardized target units.
    pub fixed_sigma: f64,
    pub source_url: &'static str,
}

pub const UCI: [UciSpec; 5] = [
    UciSpec {
        name: "boston",
        target: "MEDV",
        dim: 13,
        rows: 506,
        fixed_sigma: 2.5,
        source_url: "http://lib.stat.cmu.edu/datasets/boston",
    },
    UciSpec {
        name: "concrete",
        target: "strength",
        dim: 8,
        rows: 1030,
        fixed_sigma: 4.5,
        source_url: "https://archive.ics.uci.edu/ml/machine-learning-databases/concrete/compressive/Concrete_Data.xls",
    },
    UciSpec {
        name: "energy",
        target: "Y1",
        dim: 8,
        rows: 768,
        fixed_sigma: 1.4,
        source_url: "https://archive.ics.uci.edu/ml/machine-learning-databases/00242/ENB2012_data.xlsx",
    },
    UciSpec {
        name: "wine",
        target: "quality",
        dim: 11,
        rows: 1599,
        fixed_sigma: 0.5,
        source_url: "https://archive.ics.uci.edu/ml/machine-learning-databases/wine-quality/winequality-red.csv",
    },
    UciSpec {
        name: "yacht",
        target: "resistance",
        dim: 6,
        rows: 308,
        fixed_sigma: 1.4,
        source_url: "https://archive.ics.uci.edu/ml/machine-learning-databases/00243/yacht_hydrodynamics.data",
    },
];

pub fn uci_spec(name: &str) -> Result<UciSpec> {
    UCI.iter()
        .find(|s| s.name == name)
        .copied()
        .ok_or_else(|| DataError::UnknownDataset(name.to_string()))
}

pub const DATA_DIR_ENV: &str = "HYVI_DATA_DIR";

/// Directory holding the data files shipped with the crate.
pub fn bundled_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Finds `<name>.csv` in `data_dir` (or `$HYVI_DATA_DIR`), falling back to
/// the bundled data directory.
pub fn locate_uci(name: &str, data_dir: Option<&Path>) -> Result<PathBuf> {
    uci_spec(name)?;
    let file = format!("{name}.csv");
    let mut dirs: Vec<PathBuf> = Vec::new();
    if let Some(d) = data_dir {
        dirs.push(d.to_path_buf());
    } else if let Some(d) = std::env::var_os(DATA_DIR_ENV) {
        dirs.push(PathBuf::from(d));
    }
    dirs.push(bundled_data_dir());
    for d in &dirs {
        let p = d.join(&file);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(DataError::NotFound {
        name: name.to_string(),
        searched: dirs
            .iter()
            .map(|d| d.display().to_string())
            .collect::<Vec<_>>()
            .join(", "),
    })
}

pub fn load_uci(name: &str, data_dir: Option<&Path>) -> Result<Dataset> {
    let spec = uci_spec(name)?;
    load_csv(&locate_uci(name, data_dir)?, spec.target)
}
