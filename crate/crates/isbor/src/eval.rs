//! Metrics, k-fold cross-validation over the kernel width, and the
//! multi-size / multi-partition experiment protocol.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{
    apply_scaler, partition, standardize, stream_rng, Dataset, STREAM_CV,
};
use crate::error::{IsborError, Result};
use crate::kernel::{ColumnCache, KernelConfig};
use crate::trainer::{fit_with_cache, predict_batch, ModelState, TrainConfig};

/// Default cross-validation grid for the kernel width.
pub const THETA_GRID_NARROW: [f64; 4] = [1e-2, 1e-1, 1.0, 10.0];
/// Wider grid variant.
pub const THETA_GRID_WIDE: [f64; 7] = [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0];

/// Mean absolute error between ordinal labels.
pub fn mae(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(IsborError::input(format!(
            "mae needs equal non-empty label vectors, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let total: f64 = y_true
        .iter()
        .zip(y_pred.iter())
        .map(|(&a, &b)| (a as f64 - b as f64).abs())
        .sum();
    Ok(total / y_true.len() as f64)
}

/// Fraction of exactly correct predictions.
pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    if y_true.is_empty() || y_true.len() != y_pred.len() {
        return Err(IsborError::input(format!(
            "accuracy needs equal non-empty label vectors, got {} and {}",
            y_true.len(),
            y_pred.len()
        )));
    }
    let hits = y_true.iter().zip(y_pred.iter()).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Evaluation summary of one fitted model on one test set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    pub accuracy: f64,
    pub n_active: usize,
    /// Wall-clock fit time including kernel-cache population.
    pub fit_seconds: f64,
    /// Wall-clock fit time with the cache already warm.
    pub fit_seconds_warm: f64,
    pub theta: f64,
    pub config: TrainConfig,
}

/// Fit on `train`, evaluate on `test`, timing the cache build and the fit
/// separately.
pub fn fit_and_evaluate(
    train: &Dataset,
    test: &Dataset,
    theta: f64,
    cfg: &TrainConfig,
) -> Result<(ModelState, EvalReport)> {
    let kernel = KernelConfig::new(theta)?;
    let cache_start = Instant::now();
    let cache = ColumnCache::new(&train.x, kernel);
    cache.warm_all()?;
    let cache_seconds = cache_start.elapsed().as_secs_f64();
    let fit_start = Instant::now();
    let model = fit_with_cache(train, cfg, kernel, &cache)?;
    let fit_seconds_warm = fit_start.elapsed().as_secs_f64();
    let preds = predict_batch(&model, test)?;
    let predicted: Vec<usize> = preds.iter().map(|(c, _)| *c).collect();
    let report = EvalReport {
        mae: mae(&test.y, &predicted)?,
        accuracy: accuracy(&test.y, &predicted)?,
        n_active: model.m(),
        fit_seconds: cache_seconds + fit_seconds_warm,
        fit_seconds_warm,
        theta,
        config: cfg.clone(),
    };
    Ok((model, report))
}

/// Mean fold MAE for one grid value.
#[derive(Debug, Clone, Serialize)]
pub struct CvRow {
    pub theta: f64,
    pub mean_mae: f64,
    pub fold_maes: Vec<f64>,
}

/// Cross-validation outcome: the winning width and the full table.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best_theta: f64,
    pub table: Vec<CvRow>,
}

/// k-fold cross-validation of the kernel width on a training set.
///
/// Folds whose training side lacks a category are skipped with a warning;
/// ties in mean MAE resolve toward the larger width.
pub fn cross_validate(
    train: &Dataset,
    theta_grid: &[f64],
    k: usize,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<CvOutcome> {
    if k < 2 {
        return Err(IsborError::input(format!("cross-validation needs k >= 2, got {k}")));
    }
    if theta_grid.is_empty() {
        return Err(IsborError::input("theta grid must be non-empty"));
    }
    let n = train.n();
    if n < k {
        return Err(IsborError::input(format!("cannot split {n} samples into {k} folds")));
    }

    // Seeded fold assignment, independent of the grid.
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, STREAM_CV);
    for i in (1..n).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        idx.swap(i, j);
    }
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (pos, &i) in idx.iter().enumerate() {
        folds[pos % k].push(i);
    }

    // A fold is usable when the remaining training rows still cover every
    // category.
    let mut usable: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for f in 0..k {
        let hold: &[usize] = &folds[f];
        let rest: Vec<usize> =
            (0..k).filter(|&g| g != f).flat_map(|g| folds[g].iter().copied()).collect();
        let mut seen = vec![false; train.r + 1];
        for &i in &rest {
            seen[train.y[i]] = true;
        }
        if (1..=train.r).all(|c| seen[c]) {
            usable.push((rest, hold.to_vec()));
        } else {
            log::warn!("cross-validation: fold {f} skipped (missing category in its training part)");
        }
    }
    if usable.is_empty() {
        return Err(IsborError::input(
            "cross-validation: every fold left a category unrepresented",
        ));
    }

    let mut grid: Vec<f64> = theta_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut table = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None; // (mean_mae, theta)
    for &theta in &grid {
        let kernel = KernelConfig::new(theta)?;
        let mut fold_maes = Vec::with_capacity(usable.len());
        for (train_idx, hold_idx) in &usable {
            let fold_train = train.subset(train_idx);
            let fold_hold = train.subset(hold_idx);
            let model = crate::trainer::fit(&fold_train, cfg, kernel)?;
            let preds = predict_batch(&model, &fold_hold)?;
            let predicted: Vec<usize> = preds.iter().map(|(c, _)| *c).collect();
            fold_maes.push(mae(&fold_hold.y, &predicted)?);
        }
        let mean = fold_maes.iter().sum::<f64>() / fold_maes.len() as f64;
        table.push(CvRow { theta, mean_mae: mean, fold_maes });
        // Grid is ascending, so <= biases ties toward the larger theta.
        let replace = match best {
            None => true,
            Some((best_mae, _)) => mean <= best_mae,
        };
        if replace {
            best = Some((mean, theta));
        }
    }
    let (_, best_theta) = best.expect("grid non-empty");
    Ok(CvOutcome { best_theta, table })
}

/// Full protocol description for `run_experiment`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sizes: Vec<usize>,
    pub n_partitions: usize,
    pub theta_grid: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
    pub standardize: bool,
    pub train: TrainConfig,
}

/// One machine-readable output row of an experiment run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentRow {
    pub size: usize,
    pub partition: usize,
    pub theta: f64,
    pub mae: f64,
    pub accuracy: f64,
    pub n_active: usize,
    pub fit_seconds: f64,
    pub fit_seconds_warm: f64,
    pub seed: u64,
}

/// Scaling protocol: for every training size and partition, select the
/// width by cross-validation, fit, and evaluate on the held-out remainder.
/// Failing cells are logged and skipped; the grid keeps going.
pub fn run_experiment(data: &Dataset, spec: &ExperimentSpec) -> Result<Vec<ExperimentRow>> {
    let mut rows = Vec::new();
    for &size in &spec.sizes {
        let splits = partition(data, size, spec.n_partitions, spec.seed)?;
        for (p, (train_idx, test_idx)) in splits.iter().enumerate() {
            match run_cell(data, spec, size, p, train_idx, test_idx) {
                Ok(row) => rows.push(row),
                Err(e) => {
                    log::error!("experiment cell (size {size}, partition {p}) failed: {e}");
                }
            }
        }
    }
    Ok(rows)
}

fn run_cell(
    data: &Dataset,
    spec: &ExperimentSpec,
    size: usize,
    p: usize,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<ExperimentRow> {
    let raw_train = data.subset(train_idx);
    let raw_test = data.subset(test_idx);
    let (train, test) = if spec.standardize {
        let (train, scaler) = standardize(&raw_train);
        (train, apply_scaler(&scaler, &raw_test)?)
    } else {
        (raw_train, raw_test)
    };
    let cv = cross_validate(&train, &spec.theta_grid, spec.folds, spec.seed, &spec.train)?;
    let (_, report) = fit_and_evaluate(&train, &test, cv.best_theta, &spec.train)?;
    Ok(ExperimentRow {
        size,
        partition: p,
        theta: cv.best_theta,
        mae: report.mae,
        accuracy: report.accuracy,
        n_active: report.n_active,
        fit_seconds: report.fit_seconds,
        fit_seconds_warm: report.fit_seconds_warm,
        seed: spec.seed,
    })
}

/// Serialize experiment rows as JSON lines.
pub fn write_report<W: std::io::Write>(rows: &[ExperimentRow], mut out: W) -> Result<()> {
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| IsborError::numeric(format!("report serialization: {e}")))?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Mean and (population) standard deviation of MAE per size.
pub fn summarize(rows: &[ExperimentRow]) -> Vec<(usize, f64, f64, f64)> {
    let mut sizes: Vec<usize> = rows.iter().map(|r| r.size).collect();
    sizes.sort_unstable();
    sizes.dedup();
    sizes
        .into_iter()
        .map(|size| {
            let cell: Vec<&ExperimentRow> = rows.iter().filter(|r| r.size == size).collect();
            let n = cell.len() as f64;
            let mean = cell.iter().map(|r| r.mae).sum::<f64>() / n;
            let var = cell.iter().map(|r| (r.mae - mean) * (r.mae - mean)).sum::<f64>() / n;
            let mean_active = cell.iter().map(|r| r.n_active as f64).sum::<f64>() / n;
            (size, mean, var.sqrt(), mean_active)
        })
        .collect()
}
