use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{median, EvalError, MetricValue, Result};

pub const METRICS_HEADER: [&str; 11] = [
    "method",
    "dataset",
    "seed",
    "rmse",
    "lpp",
    "entropy_param",
    "entropy_pred",
    "epi_train_med",
    "epi_test_med",
    "epi_ood_med",
    "runtime_s",
];

/// Per-input epistemic uncertainties of one run, by input group.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpistemicGroups {
    pub train: Vec<f64>,
    pub test: Vec<f64>,
    pub ood: Vec<f64>,
}

impl EpistemicGroups {
    pub fn medians(&self) -> [f64; 3] {
        [median(&self.train), median(&self.test), median(&self.ood)]
    }

    fn groups(&self) -> [(&'static str, &[f64]); 3] {
        [
            ("train", &self.train),
            ("test", &self.test),
            ("ood", &self.ood),
        ]
    }
}

/// Predictive mean and standard deviation on a 1-D input grid, plus the
/// training points to overlay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandData {
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub train_x: Vec<f64>,
    pub train_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub dataset: String,
    pub seed: u64,
    pub rmse: f64,
    pub lpp: f64,
    pub entropy_param: Option<MetricValue>,
    pub entropy_pred: Option<MetricValue>,
    pub epistemic: Option<EpistemicGroups>,
    pub runtime_s: f64,
    pub band: Option<BandData>,
}

impl MetricReport {
    pub fn new(method: &str, dataset: &str, seed: u64) -> Self {
        Self {
            method: method.to_string(),
            dataset: dataset.to_string(),
            seed,
            rmse: f64::NAN,
            lpp: f64::NAN,
            entropy_param: None,
            entropy_pred: None,
            epistemic: None,
            runtime_s: f64::NAN,
            band: None,
        }
    }

    fn csv_row(&self) -> Vec<String> {
        let num = |v: f64| {
            if v.is_nan() {
                String::new()
            } else {
                format!("{v}")
            }
        };
        let metric = |m: &Option<MetricValue>| match m {
            None => String::new(),
            Some(m) => m.flag.token().map_or_else(|| num(m.value), str::to_string),
        };
        let med = self
            .epistemic
            .as_ref()
            .map(|e| e.medians())
            .unwrap_or([f64::NAN; 3]);
        vec![
            self.method.clone(),
            self.dataset.clone(),
            self.seed.to_string(),
            num(self.rmse),
            num(self.lpp),
            metric(&self.entropy_param),
            metric(&self.entropy_pred),
            num(med[0]),
            num(med[1]),
            num(med[2]),
            num(self.runtime_s),
        ]
    }
}

fn csv_err(e: csv::Error) -> EvalError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => EvalError::Io(io),
        other => EvalError::Usage(format!("{other:?}")),
    }
}

fn writer_with_provenance(path: &Path, provenance: &str) -> Result<csv::Writer<std::fs::File>> {
    use std::io::Write;
    let mut file = std::fs::File::create(path)?;
    writeln!(file, "# {provenance}")?;
    Ok(csv::Writer::from_writer(file))
}

/// Equal-width bin edges spanning every finite value of every group.
fn shared_edges<'a>(values: impl Iterator<Item = &'a f64>, bins: usize) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() {
        return Vec::new();
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect()
}

/// `bin_lo,bin_hi,train,test,ood` counts over the given edges.
pub fn write_histograms(
    path: &Path,
    groups: &EpistemicGroups,
    edges: &[f64],
    provenance: &str,
) -> Result<()> {
    let mut w = writer_with_provenance(path, provenance)?;
    w.write_record(["bin_lo", "bin_hi", "train", "test", "ood"])
        .map_err(csv_err)?;
    let bins = edges.len().saturating_sub(1);
    let mut counts = vec![[0usize; 3]; bins];
    for (g, (_, values)) in groups.groups().iter().enumerate() {
        for v in values.iter().filter(|v| v.is_finite()) {
            let pos = edges.partition_point(|e| e <= v);
            let bin = pos.saturating_sub(1).min(bins.saturating_sub(1));
            if bins > 0 {
                counts[bin][g] += 1;
            }
        }
    }
    for (b, c) in counts.iter().enumerate() {
        w.write_record([
            edges[b].to_string(),
            edges[b + 1].to_string(),
            c[0].to_string(),
            c[1].to_string(),
            c[2].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Standalone SVG: shaded mean ± 1, 2, 3 std bands, the mean curve and the
/// training points.
pub fn write_band_svg(path: &Path, band: &BandData, title: &str, provenance: &str) -> Result<()> {
    let (w, h, m) = (640.0, 400.0, 40.0);
    let n = band.x.len();
    if n < 2 || band.mean.len() != n || band.std.len() != n {
        return Err(EvalError::Usage(
            "band needs at least two grid points of matching length".into(),
        ));
    }
    let xs = band.x.iter().chain(&band.train_x);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(*v), b.max(*v))
    });
    let lows = band.mean.iter().zip(&band.std).map(|(mu, s)| mu - 3.0 * s);
    let highs = band.mean.iter().zip(&band.std).map(|(mu, s)| mu + 3.0 * s);
    let y0 = lows
        .chain(band.train_y.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let y1 = highs
        .chain(band.train_y.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = if y1 > y0 {
        (y0, y1)
    } else {
        (y0 - 1.0, y0 + 1.0)
    };
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8" standalone="no"?>"#
    )
    .unwrap();
    writeln!(svg, "<!-- {} -->", provenance.replace("--", "- -")).unwrap();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#
    )
    .unwrap();
    for (k, opacity) in [(3.0, 0.15), (2.0, 0.25), (1.0, 0.4)] {
        let mut pts = String::new();
        for i in 0..n {
            write!(
                pts,
                "{:.2},{:.2} ",
                px(band.x[i]),
                py(band.mean[i] + k * band.std[i])
            )
            .unwrap();
        }
        for i in (0..n).rev() {
            write!(
                pts,
                "{:.2},{:.2} ",
                px(band.x[i]),
                py(band.mean[i] - k * band.std[i])
            )
            .unwrap();
        }
        writeln!(
            svg,
            r#"<polygon points="{}" fill="steelblue" fill-opacity="{opacity}" stroke="none"/>"#,
            pts.trim_end()
        )
        .unwrap();
    }
    let line: Vec<String> = (0..n)
        .map(|i| format!("{:.2},{:.2}", px(band.x[i]), py(band.mean[i])))
        .collect();
    writeln!(
        svg,
        r#"<polyline points="{}" fill="none" stroke="navy" stroke-width="1.5"/>"#,
        line.join(" ")
    )
    .unwrap();
    for (x, y) in band.train_x.iter().zip(&band.train_y) {
        writeln!(
            svg,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="black"/>"#,
            px(*x),
            py(*y)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>"#,
        b = h - m,
        r = w - m
    )
    .unwrap();
    for (x, anchor) in [(x0, "start"), (x1, "end")] {
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" font-size="11" text-anchor="{anchor}">{x:.2}</text>"#,
            px(x),
            h - m + 15.0
        )
        .unwrap();
    }
    for y in [y0, y1] {
        writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" font-size="11" text-anchor="end">{y:.2}</text>"#,
            m - 4.0,
            py(y)
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{}</text>"#,
        w / 2.0,
        xml_escape(title)
    )
    .unwrap();
    writeln!(svg, "</svg>").unwrap();
    std::fs::write(path, svg)?;
    Ok(())
}

fn safe_name(s: &str) -> String {
    s.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `metrics.csv`, one `epistemic_<method>_<dataset>_seed<k>.csv`
/// histogram per report with epistemic values (bin edges shared by all), and
/// one `band_<method>_<dataset>_seed<k>.svg` per report with band data.
/// Every file starts with the provenance string.
pub fn emit_report(
    reports: &[MetricReport],
    out_dir: &Path,
    provenance: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let metrics = out_dir.join("metrics.csv");
    let mut w = writer_with_provenance(&metrics, provenance)?;
    w.write_record(METRICS_HEADER).map_err(csv_err)?;
    for r in reports {
        w.write_record(r.csv_row()).map_err(csv_err)?;
    }
    w.flush()?;
    written.push(metrics);

    let all = reports
        .iter()
        .filter_map(|r| r.epistemic.as_ref())
        .flat_map(|e| e.train.iter().chain(&e.test).chain(&e.ood));
    let edges = shared_edges(all, 30);
    for r in reports {
        let stem = format!(
            "{}_{}_seed{}",
            safe_name(&r.method),
            safe_name(&r.dataset),
            r.seed
        );
        if let Some(e) = &r.epistemic {
            if !edges.is_empty() {
                let path = out_dir.join(format!("epistemic_{stem}.csv"));
                write_histograms(&path, e, &edges, provenance)?;
                written.push(path);
            }
        }
        if let Some(b) = &r.band {
            let path = out_dir.join(format!("band_{stem}.svg"));
            write_band_svg(
                &path,
                b,
                &format!("{} on {} (seed {})", r.method, r.dataset, r.seed),
                provenance,
            )?;
            written.push(path);
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableMetric {
    Rmse,
    Lpp,
}

fn order_of_appearance<'a>(items: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in items {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let s = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        f64::NAN
    };
    (m, s)
}

fn cell(values: &[f64]) -> String {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return String::new();
    }
    match mean_std(&finite) {
        (m, s) if s.is_nan() => format!("{m:.3}"),
        (m, s) => format!("{m:.3} ± {s:.3}"),
    }
}

/// Datasets as rows, methods as columns, cells `mean ± std` over seeds.
pub fn write_metric_table(
    path: &Path,
    reports: &[MetricReport],
    metric: TableMetric,
    provenance: &str,
) -> Result<()> {
    let methods = order_of_appearance(reports.iter().map(|r| r.method.as_str()));
    let datasets = order_of_appearance(reports.iter().map(|r| r.dataset.as_str()));
    let mut w = writer_with_provenance(path, provenance)?;
    let label = match metric {
        TableMetric::Rmse => "RMSE",
        TableMetric::Lpp => "LPP",
    };
    let mut header = vec![label.to_string()];
    header.extend(methods.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for d in &datasets {
        let mut row = vec![d.clone()];
        for m in &methods {
            let vals: Vec<f64> = reports
                .iter()
                .filter(|r| &r.dataset == d && &r.method == m)
                .map(|r| match metric {
                    TableMetric::Rmse => r.rmse,
                    TableMetric::Lpp => r.lpp,
                })
                .collect();
            row.push(cell(&vals));
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Entropy table with a parameter-space block followed by a predictor-space
/// block; rows are datasets, columns methods. A cell whose runs were flagged
/// shows the flag instead of a number.
pub fn write_entropy_table(path: &Path, reports: &[MetricReport], provenance: &str) -> Result<()> {
    let methods = order_of_appearance(reports.iter().map(|r| r.method.as_str()));
    let datasets = order_of_appearance(reports.iter().map(|r| r.dataset.as_str()));
    let mut w = writer_with_provenance(path, provenance)?;
    let mut header = vec!["space".to_string(), "dataset".to_string()];
    header.extend(methods.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (space, pick) in [
        (
            "parameter",
            (|r: &MetricReport| r.entropy_param) as fn(&MetricReport) -> Option<MetricValue>,
        ),
        ("predictor", |r: &MetricReport| r.entropy_pred),
    ] {
        for d in &datasets {
            let mut row = vec![space.to_string(), d.clone()];
            for m in &methods {
                let vals: Vec<MetricValue> = reports
                    .iter()
                    .filter(|r| &r.dataset == d && &r.method == m)
                    .filter_map(pick)
                    .collect();
                row.push(match vals.iter().find_map(|v| v.flag.token()) {
                    Some(token) => token.to_string(),
                    None => cell(&vals.iter().map(|v| v.value).collect::<Vec<_>>()),
                });
            }
            w.write_record(&row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}
