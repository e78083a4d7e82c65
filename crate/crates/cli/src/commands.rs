use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hyvi_core::datasets::{uci_spec, InputDistribution, UCI};
use hyvi_core::evaluation::{
    cross_model_kl, emit_report, median, write_entropy_table, write_histograms, write_metric_table,
    MetricReport, TableMetric,
};
use hyvi_core::inference::{Method, Posterior, PosteriorMeta, Space};
use hyvi_core::nets::NoiseMode;

use crate::config::{DatasetSpec, ExperimentConfig};
use crate::pipeline::{
    evaluate, prepare, provenance_line, read_runtime, run_stem, runtime_path, train_and_save,
    MetricSet, Prepared,
};
use crate::{CliError, Result};

#[derive(Debug, Parser)]
#[command(
    name = "hyvi",
    version,
    about = "Hypernetwork variational inference for Bayesian neural regression"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate or validate a dataset and print its shape and ν bounds.
    Data(DataArgs),
    /// Train one method and write the posterior, its sidecar and the trace.
    Train(TrainArgs),
    /// Compute metrics for saved posteriors.
    Eval(EvalArgs),
    /// Run a scaled-down experiment pipeline end to end.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SigmaMode {
    Fixed,
    Learned,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON experiment configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// `wave`, a UCI name, or `path.csv[:target]`.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory of UCI csv files (defaults to $HYVI_DATA_DIR).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long, value_enum)]
    pub sigma_mode: Option<SigmaMode>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    /// Saved posterior (either file of the pair, or the shared stem).
    #[arg(long = "posterior", required = true)]
    pub posteriors: Vec<PathBuf>,
    /// Comma-separated: rmse, lpp, entropy-param, entropy-pred, epistemic.
    #[arg(long, default_value = "rmse,lpp,entropy-param,epistemic")]
    pub metrics: String,
    /// Estimate KL(first ‖ second) in the given space.
    #[arg(long, value_enum)]
    pub kl: Option<KlSpace>,
    /// Input distribution for predictor-space metrics: `data` for the
    /// dataset's own, or `lo:hi[,lo:hi...]` per feature in model units.
    #[arg(long)]
    pub nu: Option<String>,
    #[arg(long)]
    pub ood_samples: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KlSpace {
    Param,
    Pred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Pipeline {
    Wave,
    #[value(name = "exp1-small")]
    Exp1Small,
    #[value(name = "exp2-small")]
    Exp2Small,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub pipeline: Pipeline,
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub ood_samples: Option<usize>,
    /// Number of seeds, counting up from --seed.
    #[arg(long)]
    pub n_seeds: Option<usize>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Data(a) => cmd_data(&a),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Reproduce(a) => cmd_reproduce(&a).map(|_| ()),
    }
}

fn data_dir(common: &Common) -> Option<PathBuf> {
    common.data_dir.clone()
}

fn base_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &common.dataset {
        config.dataset = DatasetSpec::parse(d)?;
    }
    if let Some(s) = common.seed {
        config.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        config.out = o.clone();
    }
    Ok(config)
}

pub fn cmd_data(args: &DataArgs) -> Result<()> {
    let config = base_config(&args.common)?;
    let seed = config.seeds[0];
    let p = prepare(&config, seed, data_dir(&args.common).as_deref())?;
    let n = p.train.len() + p.test.len();
    println!(
        "dataset {}: D = {}, N = {} ({} train / {} test)",
        p.name,
        p.train.dim(),
        n,
        p.train.len(),
        p.test.len()
    );
    for (j, (lo, hi)) in p.nu.lower.iter().zip(&p.nu.upper).enumerate() {
        println!("nu[{j}] = [{lo:.4}, {hi:.4}]");
    }
    if let Some(out) = &args.common.out {
        std::fs::create_dir_all(out)?;
        let prov = provenance_line(&config.hash(), seed);
        for (part, ds) in [("train", &p.train), ("test", &p.test)] {
            let path = out.join(format!("{}_{part}.csv", p.name));
            let mut f = std::fs::File::create(&path)?;
            writeln!(f, "# {prov}")?;
            let names: Vec<String> = (0..ds.dim()).map(|j| format!("x{j}")).collect();
            writeln!(f, "{},y", names.join(","))?;
            for (row, y) in ds.x.rows().into_iter().zip(&ds.y) {
                let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(f, "{},{y}", cells.join(","))?;
            }
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse().map_err(|_| {
        CliError::Usage(format!(
            "unknown method {s:?}; expected one of {}",
            method_list()
        ))
    })
}

fn method_list() -> String {
    Method::ALL
        .iter()
        .map(|m| m.name())
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn train_config(args: &TrainArgs) -> Result<ExperimentConfig> {
    let mut config = base_config(&args.common)?;
    if let Some(m) = &args.method {
        config.method = parse_method(m)?;
    }
    if let Some(mode) = args.sigma_mode {
        config.train.noise.mode = match mode {
            SigmaMode::Fixed => NoiseMode::Fixed,
            SigmaMode::Learned => NoiseMode::Learned,
        };
    }
    if let Some(s) = args.sigma {
        config.train.noise.sigma = s;
    }
    config.validate()?;
    Ok(config)
}

pub fn cmd_train(args: &TrainArgs) -> Result<Vec<PathBuf>> {
    let config = train_config(args)?;
    let mut written = Vec::new();
    for &seed in &config.seeds {
        let p = prepare(&config, seed, data_dir(&args.common).as_deref())?;
        let (outcome, files) = train_and_save(&config, &p, seed, &config.out)?;
        println!(
            "{} on {} seed {seed}: {:.1}s, sigma_l = {:.4}",
            config.method, p.name, outcome.runtime_s, outcome.posterior.sigma_l
        );
        for f in [&files.posterior, &files.sidecar, &files.trace] {
            println!("wrote {}", f.display());
        }
        written.push(files.posterior);
    }
    Ok(written)
}

fn parse_metrics(s: &str) -> Result<MetricSet> {
    let mut set = MetricSet {
        entropy_param: false,
        entropy_pred: false,
        epistemic: false,
        band: true,
    };
    for token in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match token {
            "rmse" | "lpp" => {}
            "entropy-param" => set.entropy_param = true,
            "entropy-pred" => set.entropy_pred = true,
            "epistemic" => set.epistemic = true,
            other => return Err(CliError::Usage(format!("unknown metric {other:?}"))),
        }
    }
    Ok(set)
}

fn parse_nu(s: &str, prepared: &Prepared) -> Result<InputDistribution> {
    if s == "data" {
        return Ok(prepared.nu.clone());
    }
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    for part in s.split(',') {
        let (lo, hi) = part
            .split_once(':')
            .ok_or_else(|| CliError::Usage(format!("bad ν bounds {part:?}; expected lo:hi")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad ν bound {v:?}")))
        };
        lower.push(parse(lo)?);
        upper.push(parse(hi)?);
    }
    if lower.len() != prepared.train.dim() {
        return Err(CliError::Usage(format!(
            "ν has {} features, dataset has {}",
            lower.len(),
            prepared.train.dim()
        )));
    }
    InputDistribution::new(lower, upper).map_err(|e| CliError::Usage(e.to_string()))
}

fn load_posterior(path: &Path) -> Result<(Posterior, PosteriorMeta)> {
    Posterior::load(path)
        .map_err(|e| CliError::Usage(format!("cannot load posterior {}: {e}", path.display())))
}

/// Evaluates every posterior against the dataset it was trained on (or the
/// `--dataset` override) and writes the report files. Returns the metrics
/// CSV path.
pub fn cmd_eval(args: &EvalArgs) -> Result<PathBuf> {
    let metrics = parse_metrics(&args.metrics)?;
    if args.kl.is_some() && args.posteriors.len() != 2 {
        return Err(CliError::Usage(format!(
            "cross-model KL needs exactly two posteriors, got {}",
            args.posteriors.len()
        )));
    }
    let needs_nu = metrics.entropy_pred || args.kl == Some(KlSpace::Pred);
    if needs_nu && args.nu.is_none() {
        return Err(CliError::Usage(
            "predictor-space metrics need --nu (`data` or lo:hi bounds)".into(),
        ));
    }
    let loaded: Vec<(Posterior, PosteriorMeta)> = args
        .posteriors
        .iter()
        .map(|p| load_posterior(p))
        .collect::<Result<_>>()?;
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("eval"));
    let mut reports = Vec::new();
    let mut first: Option<(Prepared, ExperimentConfig)> = None;
    for (post, meta) in &loaded {
        let mut config: ExperimentConfig =
            serde_json::from_value(meta.config.clone()).unwrap_or_default();
        if let Some(c) = &args.common.config {
            config = ExperimentConfig::load(c)?;
        }
        if let Some(d) = &args.common.dataset {
            config.dataset = DatasetSpec::parse(d)?;
        }
        if let Some(n) = args.ood_samples {
            config.ood_samples = n;
        }
        let seed = args.common.seed.unwrap_or(meta.seed);
        let mut prepared = prepare(&config, seed, data_dir(&args.common).as_deref())?;
        if let Some(spec) = &args.nu {
            prepared.nu = parse_nu(spec, &prepared)?;
        }
        let path = &args.posteriors[reports.len()];
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let runtime = read_runtime(path.parent().unwrap_or(Path::new(".")), &stem);
        reports.push(evaluate(post, &prepared, &config, seed, metrics, runtime)?);
        if first.is_none() {
            first = Some((prepared, config));
        }
    }
    let (prepared, config) = first.expect("at least one posterior");
    let prov = provenance_line(&config.hash(), args.common.seed.unwrap_or(loaded[0].1.seed));
    let files = emit_report(&reports, &out, &prov)?;
    for f in &files {
        println!("wrote {}", f.display());
    }
    if let Some(space) = args.kl {
        let (a, b) = (&loaded[0].0, &loaded[1].0);
        let space = match space {
            KlSpace::Param => Space::Parameter,
            KlSpace::Pred => Space::Predictor,
        };
        let kl = cross_model_kl(a, b, space, Some(&prepared.nu), &config.eval)?;
        let path = out.join("kl.csv");
        let mut f = std::fs::File::create(&path)?;
        writeln!(f, "# {prov}")?;
        writeln!(f, "first,second,space,kl,flag")?;
        writeln!(
            f,
            "{},{},{},{},{}",
            args.posteriors[0].display(),
            args.posteriors[1].display(),
            if space == Space::Parameter {
                "parameter"
            } else {
                "predictor"
            },
            kl.value,
            kl.flag.token().unwrap_or("")
        )?;
        println!("KL = {:.4}; wrote {}", kl.value, path.display());
    }
    Ok(out.join("metrics.csv"))
}

/// Budget of one reproduction pipeline: methods, datasets, seeds and the
/// reduced training settings.
fn pipeline_configs(args: &ReproduceArgs) -> Result<(Vec<ExperimentConfig>, Vec<u64>)> {
    let base = base_config(&args.common)?;
    let start = args.common.seed.unwrap_or(0);
    let seeds = |default: usize| -> Vec<u64> {
        (0..args.n_seeds.unwrap_or(default) as u64)
            .map(|i| start + i)
            .collect()
    };
    let with = |method: Method, dataset: DatasetSpec| {
        let mut c = base.clone();
        c.method = method;
        c.dataset = dataset;
        if let Some(n) = args.ood_samples {
            c.ood_samples = n;
        }
        c
    };
    let data_dir = data_dir(&args.common);
    match args.pipeline {
        Pipeline::Wave => {
            let configs = Method::ALL
                .iter()
                .map(|&m| {
                    let mut c = with(m, DatasetSpec::Wave);
                    if args.common.config.is_none() {
                        apply_wave_budget(&mut c);
                    }
                    c
                })
                .collect();
            Ok((configs, seeds(1)))
        }
        Pipeline::Exp1Small | Pipeline::Exp2Small => {
            let exp1 = args.pipeline == Pipeline::Exp1Small;
            let names: Vec<&str> = match &args.common.dataset {
                Some(d) => vec![UCI
                    .iter()
                    .find(|s| s.name == d)
                    .map(|s| s.name)
                    .ok_or_else(|| CliError::Usage(format!("{d:?} is not a UCI dataset")))?],
                None => UCI
                    .iter()
                    .map(|s| s.name)
                    .filter(|n| hyvi_core::datasets::locate_uci(n, data_dir.as_deref()).is_ok())
                    .collect(),
            };
            if names.is_empty() {
                return Err(CliError::Usage(
                    "no UCI dataset files found; run scripts/fetch_uci.py".into(),
                ));
            }
            let methods: &[Method] = if exp1 {
                &[Method::Hmc, Method::NnHyvi, Method::FunnHyvi]
            } else {
                &[
                    Method::Dropout,
                    Method::Ensemble,
                    Method::Mfvi,
                    Method::FunnMfvi,
                    Method::NnHyvi,
                    Method::FunnHyvi,
                ]
            };
            let mut configs = Vec::new();
            for name in names {
                let spec = uci_spec(name)?;
                for &m in methods {
                    let mut c = with(m, DatasetSpec::Uci { name: name.into() });
                    if args.common.config.is_none() {
                        apply_small_budget(&mut c);
                    }
                    if exp1 {
                        c.train.noise.mode = NoiseMode::Fixed;
                        c.train.noise.sigma = spec.fixed_sigma;
                    } else {
                        c.train.noise.mode = NoiseMode::Learned;
                    }
                    configs.push(c);
                }
            }
            Ok((configs, seeds(3)))
        }
    }
}

/// Desk-scale budgets for the wave pipeline.
pub fn apply_wave_budget(c: &mut ExperimentConfig) {
    c.train.max_epochs = 1000;
    c.hmc.n_iterations = 4000;
    c.hmc.n_burnin = 1000;
    c.hmc.n_leapfrog = 50;
    c.hmc.max_retained = 1000;
    c.ensemble.n_models = 10;
    c.ensemble.epochs = 1000;
    c.dropout.epochs = 1000;
    c.eval.n_samples = 1000;
    c.eval.n_draws = 20;
}

/// Desk-scale budgets for the tabular pipelines: 200-row subsamples and
/// shortened training.
pub fn apply_small_budget(c: &mut ExperimentConfig) {
    c.subsample = Some(200);
    c.train = hyvi_core::inference::TrainConfig {
        max_epochs: 300,
        n_ll_samples: 50,
        ..hyvi_core::inference::TrainConfig::uci(false)
    };
    c.hmc.n_iterations = 3000;
    c.hmc.n_burnin = 1000;
    c.hmc.n_leapfrog = 30;
    c.hmc.max_retained = 1000;
    c.ensemble.epochs = 300;
    c.dropout.epochs = 300;
    c.eval.n_samples = 500;
    c.eval.n_draws = 10;
}

/// Trains (or reuses, when a posterior with the same config hash and seed
/// already exists) and evaluates every configured run, then writes the
/// report directory. Failed runs are listed in `failures.txt` and the
/// remaining runs still report.
pub fn cmd_reproduce(args: &ReproduceArgs) -> Result<PathBuf> {
    let (configs, seeds) = pipeline_configs(args)?;
    for c in &configs {
        c.validate()?;
    }
    let pipeline_name = match args.pipeline {
        Pipeline::Wave => "wave",
        Pipeline::Exp1Small => "exp1-small",
        Pipeline::Exp2Small => "exp2-small",
    };
    let out = args
        .common
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("reports").join(pipeline_name));
    let runs_dir = out.join("runs");
    std::fs::create_dir_all(&runs_dir)?;
    let data_dir = data_dir(&args.common);
    let mut reports = Vec::new();
    let mut posteriors: BTreeMap<(String, u64, Method), Posterior> = BTreeMap::new();
    let mut failures = Vec::new();
    for &seed in &seeds {
        for config in &configs {
            let prepared = prepare(config, seed, data_dir.as_deref())?;
            let stem = run_stem(config.method, &prepared.name, seed);
            let run: Result<(Posterior, f64)> =
                load_existing(&runs_dir, &stem, &config.hash(), seed)
                    .map(Ok)
                    .unwrap_or_else(|| {
                        let (o, _) = train_and_save(config, &prepared, seed, &runs_dir)?;
                        std::fs::write(
                            runtime_path(&runs_dir, &stem),
                            format!("{}\n", o.runtime_s),
                        )?;
                        Ok((o.posterior, o.runtime_s))
                    });
            let (post, runtime) = match run {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("{stem}: {e}");
                    failures.push(format!("{stem}: {e}"));
                    continue;
                }
            };
            let report = evaluate(&post, &prepared, config, seed, MetricSet::all(), runtime)?;
            println!(
                "{stem}: rmse {:.4} lpp {:.4} ({runtime:.1}s)",
                report.rmse, report.lpp
            );
            reports.push(report);
            posteriors.insert((prepared.name.clone(), seed, config.method), post);
        }
    }
    let hash = pipeline_hash(&configs);
    let prov = provenance_line(&hash, seeds[0]);
    emit_report(&reports, &out, &prov)?;
    write_entropy_table(&out.join("entropy_table.csv"), &reports, &prov)?;
    write_metric_table(
        &out.join("rmse_table.csv"),
        &reports,
        TableMetric::Rmse,
        &prov,
    )?;
    write_metric_table(
        &out.join("lpp_table.csv"),
        &reports,
        TableMetric::Lpp,
        &prov,
    )?;
    write_pooled_histograms(&out, &reports, &prov)?;
    if args.pipeline == Pipeline::Exp1Small {
        let nus = configs
            .iter()
            .filter(|c| c.method == Method::Hmc)
            .map(|c| prepare(c, seeds[0], data_dir.as_deref()).map(|p| (p.name.clone(), p)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        write_kl_table(
            &out.join("kl_table.csv"),
            &posteriors,
            &nus,
            &configs[0],
            &prov,
        )?;
    }
    if !failures.is_empty() {
        std::fs::write(out.join("failures.txt"), failures.join("\n") + "\n")?;
    }
    println!("report in {}", out.display());
    Ok(out)
}

fn pipeline_hash(configs: &[ExperimentConfig]) -> String {
    use sha2::{Digest, Sha256};
    let joined: String = configs
        .iter()
        .map(|c| c.hash())
        .collect::<Vec<_>>()
        .join(",");
    Sha256::digest(joined.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn load_existing(dir: &Path, stem: &str, hash: &str, seed: u64) -> Option<(Posterior, f64)> {
    let path = dir.join(format!("{stem}.json"));
    let (post, meta) = Posterior::load(&path).ok()?;
    if meta.config_hash != hash || meta.seed != seed {
        return None;
    }
    Some((post, read_runtime(dir, stem)))
}

/// One histogram file per (method, dataset), pooling the epistemic values of
/// all seeds, on bin edges shared by every file.
fn write_pooled_histograms(out: &Path, reports: &[MetricReport], prov: &str) -> Result<()> {
    let mut pooled: BTreeMap<(String, String), hyvi_core::evaluation::EpistemicGroups> =
        BTreeMap::new();
    for r in reports {
        if let Some(g) = &r.epistemic {
            let e = pooled
                .entry((r.method.clone(), r.dataset.clone()))
                .or_default();
            e.train.extend(&g.train);
            e.test.extend(&g.test);
            e.ood.extend(&g.ood);
        }
    }
    let all: Vec<f64> = pooled
        .values()
        .flat_map(|g| g.train.iter().chain(&g.test).chain(&g.ood))
        .copied()
        .filter(|v| v.is_finite())
        .collect();
    if all.is_empty() {
        return Ok(());
    }
    let lo = all.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = all
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(lo + 1e-9);
    let edges: Vec<f64> = (0..=30).map(|i| lo + (hi - lo) * i as f64 / 30.0).collect();
    for ((method, dataset), g) in &pooled {
        write_histograms(
            &out.join(format!("hist_{method}_{dataset}.csv")),
            g,
            &edges,
            prov,
        )?;
    }
    let mut f = std::fs::File::create(out.join("epistemic_medians.csv"))?;
    writeln!(f, "# {prov}")?;
    writeln!(f, "method,dataset,train,test,ood")?;
    for ((method, dataset), g) in &pooled {
        writeln!(
            f,
            "{method},{dataset},{},{},{}",
            median(&g.train),
            median(&g.test),
            median(&g.ood)
        )?;
    }
    Ok(())
}

fn mean_se(v: &[f64]) -> String {
    if v.is_empty() {
        return String::new();
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return format!("{m:.3}");
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    format!("{m:.3} ± {:.3}", (var / n).sqrt())
}

/// KL of each variational run to and from the HMC posterior of the same
/// split, and between ordered pairs of runs of one method, in both spaces.
fn write_kl_table(
    path: &Path,
    posteriors: &BTreeMap<(String, u64, Method), Posterior>,
    prepared: &BTreeMap<String, Prepared>,
    config: &ExperimentConfig,
    prov: &str,
) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "# {prov}")?;
    writeln!(f, "space,dataset,method,kl_to_hmc,kl_from_hmc,kl_pairwise")?;
    for (space, label) in [
        (Space::Parameter, "parameter"),
        (Space::Predictor, "predictor"),
    ] {
        for (name, p) in prepared {
            for method in [Method::NnHyvi, Method::FunnHyvi] {
                let runs: Vec<(&u64, &Posterior)> = posteriors
                    .iter()
                    .filter(|((d, _, m), _)| d == name && *m == method)
                    .map(|((_, s, _), post)| (s, post))
                    .collect();
                let (mut to, mut from, mut pair) = (Vec::new(), Vec::new(), Vec::new());
                for (seed, post) in &runs {
                    if let Some(hmc) = posteriors.get(&(name.clone(), **seed, Method::Hmc)) {
                        to.push(cross_model_kl(post, hmc, space, Some(&p.nu), &config.eval)?.value);
                        from.push(
                            cross_model_kl(hmc, post, space, Some(&p.nu), &config.eval)?.value,
                        );
                    }
                }
                for (i, (_, a)) in runs.iter().enumerate() {
                    for (j, (_, b)) in runs.iter().enumerate() {
                        if i != j {
                            pair.push(
                                cross_model_kl(a, b, space, Some(&p.nu), &config.eval)?.value,
                            );
                        }
                    }
                }
                writeln!(
                    f,
                    "{label},{name},{method},{},{},{}",
                    mean_se(&to),
                    mean_se(&from),
                    mean_se(&pair)
                )?;
            }
        }
    }
    Ok(())
}
