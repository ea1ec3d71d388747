//! End-to-end incremental training loop, prediction, and model persistence.
//!
//! One outer iteration: scan every candidate basis for its
//! marginal-likelihood gain, apply the best add/delete/re-estimate, then
//! re-estimate the model (MAP weights, the acted basis' precision, the
//! thresholds, the noise level) and prune any basis whose precision blew up
//! or whose weight collapsed. Training stops when the best gain is
//! non-positive or the log marginal stops moving.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{stream_rng, Dataset, Scaler, STREAM_INIT};
use crate::error::{IsborError, Result};
use crate::hyper::{update_noise, update_thresholds, NoiseState};
use crate::kernel::{active_design, rbf, ColumnCache, DesignMatrix, KernelConfig};
use crate::likelihood::{normal_cdf, Thresholds};
use crate::posterior::{map_estimate, PosteriorState};
use crate::selection::{candidate_stats, scan_all, select_action, Action, ScanContext};

/// Knobs of the training loop. Everything is seeded and explicit so runs
/// are exactly reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Outer iteration cap.
    pub max_its: usize,
    /// Stop once |ml - ml_old| drops below this.
    pub min_delta: f64,
    pub seed: u64,
    /// Initial precision for every newly added basis at initialization.
    pub alpha_init: f64,
    /// Initial noise standard deviation.
    pub sigma_init: f64,
    /// Precisions above this get the basis pruned.
    pub alpha_prune: f64,
    /// Weights below this magnitude get the basis pruned.
    pub w_zero_tol: f64,
    /// Allow in-place re-estimation of active precisions.
    pub enable_reestimate: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_its: 500,
            min_delta: 1e-3,
            seed: 0,
            alpha_init: 1e-3,
            sigma_init: 1.0,
            alpha_prune: 1e12,
            w_zero_tol: 1e-3,
            enable_reestimate: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_its < 1 {
            return Err(IsborError::input("max_its must be >= 1"));
        }
        if !(self.min_delta > 0.0) {
            return Err(IsborError::input("min_delta must be > 0"));
        }
        if !(self.alpha_init > 0.0) || !(self.sigma_init > 0.0) {
            return Err(IsborError::input("alpha_init and sigma_init must be > 0"));
        }
        Ok(())
    }
}

/// A trained model: everything needed to score new points.
#[derive(Debug, Clone)]
pub struct ModelState {
    /// Training-set indices of the active basis functions.
    pub active: Vec<usize>,
    /// MAP weights, aligned with `active`.
    pub w: Array1<f64>,
    /// Precisions, aligned with `active`.
    pub alpha: Array1<f64>,
    /// Posterior covariance of the weights.
    pub sigma_post: Array2<f64>,
    pub thresholds: Thresholds,
    pub noise: NoiseState,
    pub kernel: KernelConfig,
    /// Feature vectors of the active samples (M x d), kept for prediction.
    pub active_points: Array2<f64>,
    /// Log marginal likelihood after every outer iteration.
    pub log_marginal_history: Vec<f64>,
    pub r: usize,
    /// False when training hit `max_its` without the marginal settling.
    pub converged: bool,
}

impl ModelState {
    pub fn m(&self) -> usize {
        self.active.len()
    }

    pub fn dim(&self) -> usize {
        self.active_points.ncols()
    }
}

/// Mutable bookkeeping shared by the fit loop.
struct FitState<'a> {
    data: &'a Dataset,
    cache: &'a ColumnCache,
    active: Vec<usize>,
    alpha: Vec<f64>,
    w_warm: Vec<f64>,
    pruned: Vec<bool>,
    phi: DesignMatrix,
    b: Thresholds,
    noise: NoiseState,
}

impl<'a> FitState<'a> {
    fn position(&self, j: usize) -> Option<usize> {
        self.active.iter().position(|&a| a == j)
    }

    fn rebuild_design(&mut self) -> Result<()> {
        self.phi = active_design(self.cache, &self.active)?;
        Ok(())
    }

    /// MAP fit with warm start; accepts the best iterate when Newton runs
    /// out of iterations instead of aborting the whole training run.
    fn map_fit(&self, iteration: usize) -> Result<PosteriorState> {
        let alpha = Array1::from_vec(self.alpha.clone());
        let w0 = Array1::from_vec(self.w_warm.clone());
        match map_estimate(
            &self.phi,
            &self.data.y,
            alpha.view(),
            &self.b,
            self.noise.sigma,
            w0.view(),
        ) {
            Ok(state) => Ok(state),
            Err(IsborError::MapNotConverged { iterations, grad_norm, best }) => {
                log::warn!(
                    "iteration {iteration}: MAP stopped after {iterations} Newton steps \
                     (grad norm {grad_norm:.2e}); continuing with best iterate"
                );
                Ok(*best)
            }
            Err(e) => Err(IsborError::numeric(format!("iteration {iteration}: {e}"))),
        }
    }

    fn alpha_of(&self) -> Vec<Option<f64>> {
        let mut out = vec![None; self.data.n()];
        for (pos, &j) in self.active.iter().enumerate() {
            out[j] = Some(self.alpha[pos]);
        }
        out
    }
}

/// Pick one uniformly random sample from each category.
fn initial_active(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<usize>> {
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); data.r + 1];
    for (i, &y) in data.y.iter().enumerate() {
        if y < 1 || y > data.r {
            return Err(IsborError::input(format!(
                "label {y} at row {i} outside 1..={}",
                data.r
            )));
        }
        per_class[y].push(i);
    }
    let missing: Vec<usize> = (1..=data.r).filter(|&c| per_class[c].is_empty()).collect();
    if !missing.is_empty() {
        return Err(IsborError::input(format!(
            "cannot initialize: categories {missing:?} have no samples"
        )));
    }
    let mut rng = stream_rng(cfg.seed, STREAM_INIT);
    let mut active = Vec::with_capacity(data.r);
    for c in 1..=data.r {
        let bucket = &per_class[c];
        active.push(bucket[rng.gen_range(0..bucket.len())]);
    }
    Ok(active)
}

fn init_fit_state<'a>(
    data: &'a Dataset,
    cfg: &'a TrainConfig,
    cache: &'a ColumnCache,
) -> Result<(FitState<'a>, PosteriorState)> {
    cfg.validate()?;
    let active = initial_active(data, cfg)?;
    let m = active.len();
    let mut fit = FitState {
        data,
        cache,
        active,
        alpha: vec![cfg.alpha_init; m],
        w_warm: vec![0.0; m],
        pruned: vec![false; data.n()],
        phi: active_design(cache, &[])?,
        b: Thresholds::centered(data.r)?,
        noise: NoiseState::new(cfg.sigma_init),
    };
    fit.rebuild_design()?;
    let post = fit.map_fit(0)?;
    fit.w_warm = post.w_star.to_vec();
    Ok((fit, post))
}

/// Build the initial model: one random sample per category, uniform
/// `alpha_init`, `sigma_init`, centered thresholds, and a first MAP fit.
pub fn initialize(
    data: &Dataset,
    cfg: &TrainConfig,
    kernel: KernelConfig,
) -> Result<ModelState> {
    let cache = ColumnCache::new(&data.x, kernel);
    let (fit, post) = init_fit_state(data, cfg, &cache)?;
    Ok(assemble_model(&fit, &post, kernel, vec![post.log_marginal], true))
}

fn assemble_model(
    fit: &FitState<'_>,
    post: &PosteriorState,
    kernel: KernelConfig,
    history: Vec<f64>,
    converged: bool,
) -> ModelState {
    let m = fit.active.len();
    let d = fit.data.dim();
    let mut points = Array2::zeros((m, d));
    for (row, &j) in fit.active.iter().enumerate() {
        points.row_mut(row).assign(&fit.data.x.row(j));
    }
    ModelState {
        active: fit.active.clone(),
        w: post.w_star.clone(),
        alpha: Array1::from_vec(fit.alpha.clone()),
        sigma_post: post.sigma_post.clone(),
        thresholds: fit.b.clone(),
        noise: fit.noise,
        kernel,
        active_points: points,
        log_marginal_history: history,
        r: fit.data.r,
        converged,
    }
}

/// Train on `data`, building the kernel cache internally.
pub fn fit(data: &Dataset, cfg: &TrainConfig, kernel: KernelConfig) -> Result<ModelState> {
    let cache = ColumnCache::new(&data.x, kernel);
    fit_with_cache(data, cfg, kernel, &cache)
}

/// Train using an existing (possibly pre-warmed) column cache.
pub fn fit_with_cache(
    data: &Dataset,
    cfg: &TrainConfig,
    kernel: KernelConfig,
    cache: &ColumnCache,
) -> Result<ModelState> {
    if cache.n() != data.n() || cache.dim() != data.dim() {
        return Err(IsborError::input("column cache does not match dataset shape"));
    }
    if cache.theta() != kernel.theta {
        return Err(IsborError::input("column cache theta does not match kernel config"));
    }

    let (mut fit, mut post) = init_fit_state(data, cfg, cache)?;
    let mut history = vec![post.log_marginal];
    let mut ml_old = post.log_marginal;
    let mut converged = false;

    for iteration in 1..=cfg.max_its {
        // Candidate scan against the current, self-consistent posterior.
        let alpha_of = fit.alpha_of();
        let stats = {
            let ctx = ScanContext::new(&fit.phi, &post);
            scan_all(&ctx, cache, &alpha_of, &fit.pruned)?
        };
        let action = select_action(&stats, fit.active.len(), cfg.enable_reestimate);

        let acted = match action {
            Action::Stop => {
                converged = true;
                break;
            }
            Action::Add(j) => {
                let st = stats
                    .iter()
                    .find(|s| s.index == j)
                    .expect("selected candidate present in scan");
                let alpha_new = st.alpha_new.expect("eligible add carries alpha");
                fit.active.push(j);
                fit.alpha.push(alpha_new);
                fit.w_warm.push(0.0);
                Some(j)
            }
            Action::Delete(j) => {
                let pos = fit.position(j).expect("delete targets an active basis");
                fit.active.remove(pos);
                fit.alpha.remove(pos);
                fit.w_warm.remove(pos);
                None
            }
            Action::Reestimate(j) => {
                let pos = fit.position(j).expect("re-estimate targets an active basis");
                let st = stats
                    .iter()
                    .find(|s| s.index == j)
                    .expect("selected candidate present in scan");
                fit.alpha[pos] = st.alpha_new.expect("eligible re-estimate carries alpha");
                Some(j)
            }
        };

        // Estimate: MAP weights.
        fit.rebuild_design()?;
        post = fit.map_fit(iteration)?;
        fit.w_warm = post.w_star.to_vec();

        // Estimate: refresh the acted basis' precision against the new
        // posterior (closed form).
        if let Some(j) = acted {
            if let Some(pos) = fit.position(j) {
                let col = cache.column(j)?;
                let ctx = ScanContext::new(&fit.phi, &post);
                let st = candidate_stats(&ctx, j, &col, Some(fit.alpha[pos]));
                if st.eligible && st.f > 0.0 {
                    if let Some(a) = st.alpha_new {
                        fit.alpha[pos] = a;
                    }
                }
            }
        }

        // Estimate: threshold ascent on the likelihood at the MAP scores.
        let scores = fit.phi.columns.dot(&post.w_star);
        let (b_new, _) = update_thresholds(&fit.b, scores.view(), &data.y, fit.noise.sigma)?;
        fit.b = b_new;

        // Noise update from the effective targets.
        fit.noise = update_noise(
            post.t_hat.view(),
            scores.view(),
            Array1::from_vec(fit.alpha.clone()).view(),
            post.sigma_post.diag(),
            fit.noise,
        );

        // Re-fit so the next scan (and the recorded marginal) sees a
        // posterior consistent with the updated alpha, thresholds and noise.
        post = fit.map_fit(iteration)?;
        fit.w_warm = post.w_star.to_vec();

        // Prune exploded precisions and collapsed weights (permanently).
        let mut keep: Vec<bool> = (0..fit.active.len())
            .map(|m| fit.alpha[m] <= cfg.alpha_prune && post.w_star[m].abs() >= cfg.w_zero_tol)
            .collect();
        if keep.iter().all(|k| !k) {
            // Never drop below one basis: keep the largest weight.
            let best = (0..fit.active.len())
                .max_by(|&a, &b| {
                    post.w_star[a]
                        .abs()
                        .partial_cmp(&post.w_star[b].abs())
                        .unwrap()
                })
                .expect("active set non-empty");
            keep[best] = true;
        }
        if keep.iter().any(|k| !k) {
            let mut active = Vec::new();
            let mut alpha = Vec::new();
            let mut w_warm = Vec::new();
            for (m, &k) in keep.iter().enumerate() {
                if k {
                    active.push(fit.active[m]);
                    alpha.push(fit.alpha[m]);
                    w_warm.push(post.w_star[m]);
                } else {
                    fit.pruned[fit.active[m]] = true;
                }
            }
            fit.active = active;
            fit.alpha = alpha;
            fit.w_warm = w_warm;
            fit.rebuild_design()?;
            post = fit.map_fit(iteration)?;
            fit.w_warm = post.w_star.to_vec();
        }

        let ml = post.log_marginal;
        history.push(ml);
        if (ml - ml_old).abs() < cfg.min_delta {
            converged = true;
            break;
        }
        ml_old = ml;
    }

    if !converged {
        log::warn!(
            "training hit max_its = {} with the marginal still moving; returning best state",
            cfg.max_its
        );
    }
    Ok(assemble_model(&fit, &post, kernel, history, converged))
}

/// Basis response of a query point against the active set.
fn basis_row(model: &ModelState, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    if x.len() != model.dim() {
        return Err(IsborError::input(format!(
            "query dimension {} does not match model dimension {}",
            x.len(),
            model.dim()
        )));
    }
    let mut phi = Array1::zeros(model.m());
    for m in 0..model.m() {
        phi[m] = rbf(x, model.active_points.row(m), model.kernel.theta)?;
    }
    Ok(phi)
}

/// Latent score of a query point.
pub fn score(model: &ModelState, x: ArrayView1<'_, f64>) -> Result<f64> {
    Ok(basis_row(model, x)?.dot(&model.w))
}

/// Predict the category of `x`: the unique `y` with `b_{y-1} < f <= b_y`.
/// Also returns the latent score.
pub fn predict(model: &ModelState, x: ArrayView1<'_, f64>) -> Result<(usize, f64)> {
    let f = score(model, x)?;
    let category = 1 + model
        .thresholds
        .cuts()
        .iter()
        .filter(|&&c| f > c)
        .count();
    Ok((category, f))
}

/// Category probabilities of `x`.
///
/// With `widen` set, the noise is inflated by the posterior predictive
/// variance: `sigma*^2 = sigma^2 + phi(x)^T Sigma phi(x)`. With it unset the
/// plain likelihood intervals at `sigma* = sigma` are returned. Probabilities
/// telescope to exactly 1.
pub fn predict_proba_with(
    model: &ModelState,
    x: ArrayView1<'_, f64>,
    widen: bool,
) -> Result<Vec<f64>> {
    let phi = basis_row(model, x)?;
    let f = phi.dot(&model.w);
    let var = if widen {
        let sp = model.sigma_post.dot(&phi);
        model.noise.sigma * model.noise.sigma + phi.dot(&sp)
    } else {
        model.noise.sigma * model.noise.sigma
    };
    let sigma_star = var.sqrt();
    let cuts = model.thresholds.cuts();
    let mut cdf = Vec::with_capacity(model.r + 1);
    cdf.push(0.0);
    for c in &cuts {
        cdf.push(normal_cdf((c - f) / sigma_star));
    }
    cdf.push(1.0);
    Ok((0..model.r).map(|k| cdf[k + 1] - cdf[k]).collect())
}

/// Category probabilities with posterior-variance widening (the default).
pub fn predict_proba(model: &ModelState, x: ArrayView1<'_, f64>) -> Result<Vec<f64>> {
    predict_proba_with(model, x, true)
}

/// Predict every row of a dataset.
pub fn predict_batch(model: &ModelState, data: &Dataset) -> Result<Vec<(usize, f64)>> {
    (0..data.n()).map(|i| predict(model, data.x.row(i))).collect()
}

// --- Persistence -----------------------------------------------------------
//
// Versioned self-describing JSON. Field list: format, version, theta, r, d,
// b1, deltas, sigma, active (training indices), active_points, w, alpha,
// sigma_post, optional scaler, log_marginal_history, converged.

const MODEL_FORMAT: &str = "isbor-model";
const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SavedModel {
    format: String,
    version: u32,
    theta: f64,
    r: usize,
    d: usize,
    b1: f64,
    deltas: Vec<f64>,
    sigma: f64,
    active: Vec<usize>,
    active_points: Vec<Vec<f64>>,
    w: Vec<f64>,
    alpha: Vec<f64>,
    sigma_post: Vec<Vec<f64>>,
    scaler: Option<Scaler>,
    log_marginal_history: Vec<f64>,
    converged: bool,
}

/// Serialize a model (plus the feature scaler that should be applied to raw
/// inputs, if any) to JSON.
pub fn save_model(model: &ModelState, scaler: Option<&Scaler>) -> String {
    let m = model.m();
    let saved = SavedModel {
        format: MODEL_FORMAT.to_string(),
        version: MODEL_VERSION,
        theta: model.kernel.theta,
        r: model.r,
        d: model.dim(),
        b1: model.thresholds.b1(),
        deltas: model.thresholds.deltas().to_vec(),
        sigma: model.noise.sigma,
        active: model.active.clone(),
        active_points: (0..m).map(|i| model.active_points.row(i).to_vec()).collect(),
        w: model.w.to_vec(),
        alpha: model.alpha.to_vec(),
        sigma_post: (0..m).map(|i| model.sigma_post.row(i).to_vec()).collect(),
        scaler: scaler.cloned(),
        log_marginal_history: model.log_marginal_history.clone(),
        converged: model.converged,
    };
    serde_json::to_string_pretty(&saved).expect("model serialization cannot fail")
}

pub fn save_model_to(
    model: &ModelState,
    scaler: Option<&Scaler>,
    path: impl AsRef<Path>,
) -> Result<()> {
    std::fs::write(path.as_ref(), save_model(model, scaler))?;
    Ok(())
}

/// Parse a model from its JSON form.
pub fn load_model(text: &str) -> Result<(ModelState, Option<Scaler>)> {
    if text.trim().is_empty() {
        return Err(IsborError::parse("model file is empty"));
    }
    let saved: SavedModel = serde_json::from_str(text)
        .map_err(|e| IsborError::parse(format!("model file: {e}")))?;
    if saved.format != MODEL_FORMAT {
        return Err(IsborError::parse(format!(
            "unrecognized model format {:?}",
            saved.format
        )));
    }
    if saved.version != MODEL_VERSION {
        return Err(IsborError::parse(format!(
            "unsupported model version {} (expected {MODEL_VERSION})",
            saved.version
        )));
    }
    let m = saved.active.len();
    if saved.w.len() != m
        || saved.alpha.len() != m
        || saved.active_points.len() != m
        || saved.sigma_post.len() != m
    {
        return Err(IsborError::parse("model file: inconsistent active-set lengths"));
    }
    let thresholds = Thresholds::new(saved.b1, saved.deltas, saved.r)
        .map_err(|e| IsborError::parse(format!("model file: {e}")))?;
    if !(saved.sigma > 0.0) {
        return Err(IsborError::parse("model file: sigma must be positive"));
    }
    let mut points = Array2::zeros((m, saved.d));
    for (i, row) in saved.active_points.iter().enumerate() {
        if row.len() != saved.d {
            return Err(IsborError::parse("model file: inconsistent point dimension"));
        }
        for (j, v) in row.iter().enumerate() {
            points[(i, j)] = *v;
        }
    }
    let mut sigma_post = Array2::zeros((m, m));
    for (i, row) in saved.sigma_post.iter().enumerate() {
        if row.len() != m {
            return Err(IsborError::parse("model file: covariance is not M x M"));
        }
        for (j, v) in row.iter().enumerate() {
            sigma_post[(i, j)] = *v;
        }
    }
    let model = ModelState {
        active: saved.active,
        w: Array1::from_vec(saved.w),
        alpha: Array1::from_vec(saved.alpha),
        sigma_post,
        thresholds,
        noise: NoiseState { sigma: saved.sigma },
        kernel: KernelConfig::new(saved.theta)
            .map_err(|e| IsborError::parse(format!("model file: {e}")))?,
        active_points: points,
        log_marginal_history: saved.log_marginal_history,
        r: saved.r,
        converged: saved.converged,
    };
    Ok((model, saved.scaler))
}

pub fn load_model_from(path: impl AsRef<Path>) -> Result<(ModelState, Option<Scaler>)> {
    let text = std::fs::read_to_string(path.as_ref())?;
    load_model(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;
    use ndarray::array;

    fn tiny_config() -> TrainConfig {
        TrainConfig { max_its: 60, min_delta: 1e-3, seed: 7, ..TrainConfig::default() }
    }

    fn toy_model() -> ModelState {
        let data = generate_synthetic(120, 3);
        fit(&data, &tiny_config(), KernelConfig::new(0.1).unwrap()).unwrap()
    }

    #[test]
    fn initialize_picks_one_sample_per_category() {
        let data = generate_synthetic(400, 1);
        let cfg = TrainConfig::default();
        let model = initialize(&data, &cfg, KernelConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(model.m(), 5);
        let classes: Vec<usize> = model.active.iter().map(|&j| data.y[j]).collect();
        let mut sorted = classes.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![1, 2, 3, 4, 5]);
        // Same seed, same picks.
        let again = initialize(&data, &cfg, KernelConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(model.active, again.active);
    }

    #[test]
    fn initialize_reports_missing_categories() {
        let mut data = generate_synthetic(100, 2);
        for y in data.y.iter_mut() {
            if *y == 3 {
                *y = 2;
            }
        }
        let err = initialize(&data, &TrainConfig::default(), KernelConfig::new(1.0).unwrap())
            .unwrap_err();
        assert!(err.to_string().contains('3'), "got: {err}");
    }

    #[test]
    fn fit_with_infinite_min_delta_stops_after_one_iteration() {
        let data = generate_synthetic(150, 5);
        let cfg = TrainConfig { min_delta: f64::INFINITY, ..tiny_config() };
        let model = fit(&data, &cfg, KernelConfig::new(0.1).unwrap()).unwrap();
        // history = initial ml + exactly one iteration.
        assert_eq!(model.log_marginal_history.len(), 2);
        assert!(model.converged);
    }

    #[test]
    fn fit_is_reproducible_for_fixed_seed() {
        let data = generate_synthetic(200, 11);
        let cfg = tiny_config();
        let kernel = KernelConfig::new(0.1).unwrap();
        let a = fit(&data, &cfg, kernel).unwrap();
        let b = fit(&data, &cfg, kernel).unwrap();
        assert_eq!(a.active, b.active);
        assert_eq!(a.w, b.w);
        assert_eq!(a.alpha, b.alpha);
        assert_eq!(a.thresholds, b.thresholds);
        assert_eq!(a.noise.sigma, b.noise.sigma);
        assert_eq!(a.log_marginal_history, b.log_marginal_history);
    }

    #[test]
    fn predictions_partition_the_real_line() {
        let model = toy_model();
        // As f sweeps upward the predicted class is non-decreasing and hits
        // exactly one interval each time.
        let cuts = model.thresholds.cuts();
        let mut prev_class = 1;
        let mut f = cuts[0] - 5.0;
        while f <= cuts[cuts.len() - 1] + 5.0 {
            let class = 1 + cuts.iter().filter(|&&c| f > c).count();
            assert!(class >= prev_class);
            assert!(class >= 1 && class <= model.r);
            prev_class = class;
            f += 0.05;
        }
    }

    #[test]
    fn predict_respects_paper_style_thresholds() {
        // Thresholds (-inf,-60,-9,15,60,+inf): f = 0 lands in class 3,
        // f = 100 in class 5.
        let mut model = toy_model();
        model.thresholds = Thresholds::new(-60.0, vec![51.0, 24.0, 45.0], 5).unwrap();
        assert_eq!(model.thresholds.cuts(), vec![-60.0, -9.0, 15.0, 60.0]);
        let cuts = model.thresholds.cuts();
        let class_of = |f: f64| 1 + cuts.iter().filter(|&&c| f > c).count();
        assert_eq!(class_of(0.0), 3);
        assert_eq!(class_of(100.0), 5);
    }

    #[test]
    fn predict_dimension_mismatch_is_an_error() {
        let model = toy_model();
        assert!(predict(&model, array![1.0, 2.0, 3.0].view()).is_err());
    }

    #[test]
    fn probabilities_sum_to_one_and_argmax_matches_predict() {
        let model = toy_model();
        for i in 0..20 {
            let x = array![0.5 * i as f64, 10.0 - 0.5 * i as f64];
            let p = predict_proba(&model, x.view()).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-10);
            assert!(p.iter().all(|v| *v >= 0.0));
            // With sigma* = sigma the argmax must equal the interval rule.
            let p_fixed = predict_proba_with(&model, x.view(), false).unwrap();
            let argmax = p_fixed
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
                + 1;
            let (class, _) = predict(&model, x.view()).unwrap();
            assert_eq!(argmax, class);
        }
    }

    #[test]
    fn widening_reduces_to_plain_noise_when_covariance_vanishes() {
        let mut model = toy_model();
        model.sigma_post.fill(0.0);
        let x = array![2.0, 5.0];
        let widened = predict_proba_with(&model, x.view(), true).unwrap();
        let plain = predict_proba_with(&model, x.view(), false).unwrap();
        for (a, b) in widened.iter().zip(plain.iter()) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn model_roundtrip_preserves_predictions_exactly() {
        let model = toy_model();
        let data = generate_synthetic(60, 77);
        let json = save_model(&model, None);
        let (loaded, scaler) = load_model(&json).unwrap();
        assert!(scaler.is_none());
        for i in 0..data.n() {
            let a = predict(&model, data.x.row(i)).unwrap();
            let b = predict(&loaded, data.x.row(i)).unwrap();
            assert_eq!(a.0, b.0);
            assert_eq!(a.1.to_bits(), b.1.to_bits());
        }
    }

    #[test]
    fn model_loader_rejects_bad_files() {
        assert!(load_model("").is_err());
        assert!(load_model("{}").is_err());
        let model = toy_model();
        let json = save_model(&model, None);
        let wrong_version = json.replace("\"version\": 1", "\"version\": 9");
        assert!(load_model(&wrong_version).is_err());
        let wrong_format = json.replace("isbor-model", "other-model");
        assert!(load_model(&wrong_format).is_err());
    }

    #[test]
    fn fit_produces_sparse_model_on_synthetic_data() {
        let data = generate_synthetic(300, 21);
        let cfg = TrainConfig { max_its: 200, ..tiny_config() };
        let model = fit(&data, &cfg, KernelConfig::new(0.1).unwrap()).unwrap();
        assert!(model.m() >= 1);
        assert!(model.m() < 150, "model kept {} basis functions", model.m());
        for a in model.alpha.iter() {
            assert!(*a > 0.0 && *a <= cfg.alpha_prune);
        }
        // Training MAE should easily beat the constant-class baseline.
        let preds = predict_batch(&model, &data).unwrap();
        let mae: f64 = preds
            .iter()
            .zip(data.y.iter())
            .map(|((p, _), &t)| (*p as f64 - t as f64).abs())
            .sum::<f64>()
            / data.n() as f64;
        assert!(mae < 1.0, "training MAE {mae}");
    }
}
