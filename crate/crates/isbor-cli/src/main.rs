//! `isbor` command-line interface: train, predict, evaluate, generate the
//! synthetic benchmark, cross-validate the kernel width, and run the full
//! multi-size experiment protocol.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use isbor::data::{
    apply_scaler, generate_synthetic, load_csv, load_features_csv, standardize, Dataset,
    Scaler,
};
use isbor::eval::{
    accuracy, cross_validate, mae, run_experiment, summarize, write_report, ExperimentSpec,
    THETA_GRID_NARROW, THETA_GRID_WIDE,
};
use isbor::kernel::{ColumnCache, KernelConfig};
use isbor::trainer::{
    fit_with_cache, load_model_from, predict, predict_proba, save_model_to, ModelState,
    TrainConfig,
};
use isbor::Result;

#[derive(Parser)]
#[command(name = "isbor", version, about = "Incremental sparse Bayesian ordinal regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a CSV dataset (features..., integer label).
    Train(TrainArgs),
    /// Predict categories (and optionally probabilities) for a dataset.
    Predict(PredictArgs),
    /// Evaluate a saved model against a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Generate the two-dimensional five-category synthetic benchmark.
    Synth(SynthArgs),
    /// Cross-validate the kernel width on a training set.
    Cv(CvArgs),
    /// Run the multi-size, multi-partition experiment protocol.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Training data CSV.
    #[arg(long)]
    data: PathBuf,
    /// Kernel width; mutually exclusive with --cv.
    #[arg(long, conflicts_with = "cv")]
    theta: Option<f64>,
    /// Select the kernel width by k-fold cross-validation.
    #[arg(long)]
    cv: bool,
    /// Grid for --cv: "narrow", "wide", or comma-separated values.
    #[arg(long, default_value = "narrow")]
    grid: String,
    /// Folds for --cv.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 500)]
    max_its: usize,
    #[arg(long, default_value_t = 1e-3)]
    min_delta: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Skip feature standardization.
    #[arg(long)]
    no_standardize: bool,
    /// Disable in-place re-estimation of active precisions.
    #[arg(long)]
    no_reestimate: bool,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    /// Input CSV: either features+label (prints MAE) or features only.
    #[arg(long)]
    data: PathBuf,
    /// Output CSV of predictions (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit per-category probability columns.
    #[arg(long)]
    proba: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Number of points.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    data: PathBuf,
    /// "narrow", "wide", or comma-separated values.
    #[arg(long, default_value = "narrow")]
    grid: String,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    max_its: usize,
    #[arg(long, default_value_t = 1e-3)]
    min_delta: f64,
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    /// TOML config file (flat key = value).
    #[arg(long)]
    config: PathBuf,
    /// Override the report output path from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Size of the worker thread pool (defaults to the number of cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    match spec {
        "narrow" => Ok(THETA_GRID_NARROW.to_vec()),
        "wide" => Ok(THETA_GRID_WIDE.to_vec()),
        other => other
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    isbor::IsborError::Input(format!("bad grid value {tok:?}"))
                })
            })
            .collect(),
    }
}

fn load_labeled(path: &PathBuf) -> Result<Dataset> {
    let loaded = load_csv(path)?;
    if loaded.label_map.iter().enumerate().any(|(k, &raw)| raw != (k + 1) as i64) {
        log::info!(
            "labels {:?} remapped to 1..={}",
            loaded.label_map,
            loaded.dataset.r
        );
    }
    Ok(loaded.dataset)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let raw = load_labeled(&args.data)?;
    let (train, scaler): (Dataset, Option<Scaler>) = if args.no_standardize {
        (raw, None)
    } else {
        let (scaled, scaler) = standardize(&raw);
        (scaled, Some(scaler))
    };
    let cfg = TrainConfig {
        max_its: args.max_its,
        min_delta: args.min_delta,
        seed: args.seed,
        enable_reestimate: !args.no_reestimate,
        ..TrainConfig::default()
    };
    let theta = match args.theta {
        Some(t) => t,
        None => {
            if !args.cv {
                return Err(isbor::IsborError::Input(
                    "provide --theta or select --cv".into(),
                ));
            }
            let grid = parse_grid(&args.grid)?;
            let outcome = cross_validate(&train, &grid, args.folds, args.seed, &cfg)?;
            for row in &outcome.table {
                eprintln!("cv: theta {:>10.4}  mean MAE {:.4}", row.theta, row.mean_mae);
            }
            eprintln!("cv: selected theta = {}", outcome.best_theta);
            outcome.best_theta
        }
    };
    let kernel = KernelConfig::new(theta)?;
    let start = Instant::now();
    let cache = ColumnCache::new(&train.x, kernel);
    let model = fit_with_cache(&train, &cfg, kernel, &cache)?;
    let elapsed = start.elapsed().as_secs_f64();
    save_model_to(&model, scaler.as_ref(), &args.out)?;
    let ml = model.log_marginal_history.last().copied().unwrap_or(f64::NAN);
    println!(
        "trained: N={} M={} theta={} log_marginal={:.4} sigma={:.6} b={:?} elapsed={:.2}s model={}",
        train.n(),
        model.m(),
        theta,
        ml,
        model.noise.sigma,
        model
            .thresholds
            .cuts()
            .iter()
            .map(|c| (c * 1e4).round() / 1e4)
            .collect::<Vec<_>>(),
        elapsed,
        args.out.display()
    );
    if !model.converged {
        eprintln!("warning: training stopped at max_its without converging");
    }
    Ok(())
}

/// Load prediction inputs: labeled when the column count is d+1, bare
/// features when it is d.
fn load_for_predict(path: &PathBuf, model: &ModelState) -> Result<(Dataset, bool)> {
    let x = load_features_csv(path)?;
    if x.ncols() == model.dim() {
        let n = x.nrows();
        return Ok((Dataset { x, y: vec![1; n], r: model.r, names: None }, false));
    }
    if x.ncols() == model.dim() + 1 {
        let labeled = load_csv(path)?;
        if labeled.dataset.dim() != model.dim() {
            return Err(isbor::IsborError::Input(format!(
                "model expects {} features, file has {}",
                model.dim(),
                labeled.dataset.dim()
            )));
        }
        return Ok((labeled.dataset, true));
    }
    Err(isbor::IsborError::Input(format!(
        "model expects {} features (optionally plus a label column), file has {} columns",
        model.dim(),
        x.ncols()
    )))
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (model, scaler) = load_model_from(&args.model)?;
    let (raw, labeled) = load_for_predict(&args.data, &model)?;
    let data = match &scaler {
        Some(s) => apply_scaler(s, &raw)?,
        None => raw.clone(),
    };
    let mut rows: Vec<String> = Vec::with_capacity(data.n());
    let mut predicted = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        let x = data.x.row(i);
        let (cat, score) = predict(&model, x)?;
        predicted.push(cat);
        if args.proba {
            let p = predict_proba(&model, x)?;
            let cols: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            rows.push(format!("{cat},{score},{}", cols.join(",")));
        } else {
            rows.push(format!("{cat},{score}"));
        }
    }
    let mut header = String::from("pred,score");
    if args.proba {
        for k in 1..=model.r {
            header.push_str(&format!(",p{k}"));
        }
    }
    let body = format!("{header}\n{}\n", rows.join("\n"));
    match &args.out {
        Some(path) => std::fs::write(path, body)?,
        None => print!("{body}"),
    }
    if labeled {
        eprintln!(
            "mae={:.6} accuracy={:.6} n={}",
            mae(&raw.y, &predicted)?,
            accuracy(&raw.y, &predicted)?,
            data.n()
        );
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let (model, scaler) = load_model_from(&args.model)?;
    let raw = load_labeled(&args.data)?;
    let data = match &scaler {
        Some(s) => apply_scaler(s, &raw)?,
        None => raw,
    };
    let mut predicted = Vec::with_capacity(data.n());
    for i in 0..data.n() {
        predicted.push(predict(&model, data.x.row(i))?.0);
    }
    println!(
        "mae={:.6} accuracy={:.6} n={} n_active={}",
        mae(&data.y, &predicted)?,
        accuracy(&data.y, &predicted)?,
        data.n(),
        model.m()
    );
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let data = generate_synthetic(args.n, args.seed);
    let mut out = String::from("x1,x2,label\n");
    for i in 0..data.n() {
        out.push_str(&format!("{},{},{}\n", data.x[(i, 0)], data.x[(i, 1)], data.y[i]));
    }
    std::fs::write(&args.out, out)?;
    eprintln!("wrote {} samples to {}", data.n(), args.out.display());
    Ok(())
}

fn cmd_cv(args: CvArgs) -> Result<()> {
    let raw = load_labeled(&args.data)?;
    let train = if args.no_standardize { raw } else { standardize(&raw).0 };
    let cfg = TrainConfig {
        max_its: args.max_its,
        min_delta: args.min_delta,
        seed: args.seed,
        ..TrainConfig::default()
    };
    let grid = parse_grid(&args.grid)?;
    let outcome = cross_validate(&train, &grid, args.folds, args.seed, &cfg)?;
    println!("theta,mean_mae");
    for row in &outcome.table {
        println!("{},{:.6}", row.theta, row.mean_mae);
    }
    eprintln!("best theta = {}", outcome.best_theta);
    Ok(())
}

/// Flat key = value experiment description.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    /// Dataset: "synth" or a CSV path.
    data: String,
    /// Points to generate when data = "synth".
    #[serde(default = "default_n_total")]
    n_total: usize,
    sizes: Vec<usize>,
    #[serde(default = "default_partitions")]
    n_partitions: usize,
    #[serde(default = "default_grid")]
    theta_grid: Vec<f64>,
    #[serde(default = "default_folds")]
    folds: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_true")]
    standardize: bool,
    #[serde(default = "default_max_its")]
    max_its: usize,
    #[serde(default = "default_min_delta")]
    min_delta: f64,
    #[serde(default = "default_true")]
    enable_reestimate: bool,
    /// Report path (JSON lines).
    out: Option<String>,
}

fn default_n_total() -> usize {
    21_000
}
fn default_partitions() -> usize {
    30
}
fn default_grid() -> Vec<f64> {
    THETA_GRID_NARROW.to_vec()
}
fn default_folds() -> usize {
    5
}
fn default_true() -> bool {
    true
}
fn default_max_its() -> usize {
    500
}
fn default_min_delta() -> f64 {
    1e-3
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    if let Some(workers) = args.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .map_err(|e| isbor::IsborError::Input(format!("worker pool: {e}")))?;
    }
    let text = std::fs::read_to_string(&args.config)?;
    let mut config: ExperimentConfig = toml::from_str(&text)
        .map_err(|e| isbor::IsborError::Parse(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let data = if config.data == "synth" {
        generate_synthetic(config.n_total, config.seed)
    } else {
        let path = PathBuf::from(&config.data);
        if !path.exists() {
            return Err(isbor::IsborError::Input(format!(
                "dataset not found: {}",
                path.display()
            )));
        }
        load_labeled(&path)?
    };
    let spec = ExperimentSpec {
        sizes: config.sizes.clone(),
        n_partitions: config.n_partitions,
        theta_grid: config.theta_grid.clone(),
        folds: config.folds,
        seed: config.seed,
        standardize: config.standardize,
        train: TrainConfig {
            max_its: config.max_its,
            min_delta: config.min_delta,
            seed: config.seed,
            enable_reestimate: config.enable_reestimate,
            ..TrainConfig::default()
        },
    };
    let rows = run_experiment(&data, &spec)?;
    let out_path = args
        .out
        .or_else(|| config.out.as_ref().map(PathBuf::from).map(Some).unwrap_or(None))
        .unwrap_or_else(|| PathBuf::from("report.jsonl"));
    let file = std::fs::File::create(&out_path)?;
    write_report(&rows, std::io::BufWriter::new(file))?;
    eprintln!("wrote {} rows to {}", rows.len(), out_path.display());
    println!("size,mean_mae,std_mae,mean_active");
    for (size, mean, std, active) in summarize(&rows) {
        println!("{size},{mean:.4},{std:.4},{active:.1}");
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Cv(args) => cmd_cv(args),
        Command::Experiment(args) => cmd_experiment(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
    let _ = std::io::stdout().flush();
}
