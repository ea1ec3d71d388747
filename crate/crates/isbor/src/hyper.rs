//! Type-II updates for the threshold and noise hyper-parameters.
//!
//! Thresholds move by backtracking gradient ascent on the ordinal
//! log-likelihood (the marginal's other terms are held fixed, following the
//! published update); the noise standard deviation has a closed-form
//! stationary point.

use ndarray::ArrayView1;

use crate::error::Result;
use crate::likelihood::{
    ln_normal_pdf, log_likelihood, log_prob, z_pair, Thresholds, DELTA_MIN,
};

/// Lower clamp for the noise standard deviation.
pub const SIGMA_MIN: f64 = 1e-3;
/// Upper clamp for the noise standard deviation.
pub const SIGMA_MAX: f64 = 1e3;
/// Accepted ascent steps per outer training iteration.
pub const MAX_THRESH_STEPS: usize = 10;
/// Cap on likelihood evaluations spent inside one threshold update.
const THRESH_EVAL_BUDGET: usize = 40;

/// Noise level, kept inside `[SIGMA_MIN, SIGMA_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseState {
    pub sigma: f64,
}

impl NoiseState {
    pub fn new(sigma: f64) -> Self {
        NoiseState { sigma: sigma.clamp(SIGMA_MIN, SIGMA_MAX) }
    }
}

/// Gradient of the log-likelihood w.r.t. `(b1, Delta_2 .. Delta_{r-1})`.
///
/// `d/db1 = -sum_n delta_n`; for the spacings,
/// `d/dDelta_i = sum_n [ -delta_n if y_n > i; N(z1)/(sigma (psi(z1)-psi(z2))) if y_n = i; 0 otherwise ]`.
pub fn threshold_gradients(
    scores: ArrayView1<'_, f64>,
    labels: &[usize],
    b: &Thresholds,
    sigma: f64,
) -> Result<(f64, Vec<f64>)> {
    let r = b.r();
    let mut db1 = 0.0;
    let mut ddeltas = vec![0.0; r.saturating_sub(2)];
    let inv_sigma = 1.0 / sigma;
    for (i, (&f, &y)) in scores.iter().zip(labels.iter()).enumerate() {
        let _ = i;
        let (z1, z2) = z_pair(f, y, b, sigma)?;
        let logp = log_prob(z1, z2)?;
        let r1 = if z1.is_finite() { (ln_normal_pdf(z1) - logp).exp() } else { 0.0 };
        let r2 = if z2.is_finite() { (ln_normal_pdf(z2) - logp).exp() } else { 0.0 };
        // -delta_n, i.e. the derivative of ln p_n w.r.t. a shift of both
        // bounds.
        let neg_delta = inv_sigma * (r1 - r2);
        db1 += neg_delta;
        for (k, d) in ddeltas.iter_mut().enumerate() {
            let cut = k + 2; // Delta index i runs 2..=r-1
            if y > cut {
                *d += neg_delta;
            } else if y == cut {
                *d += inv_sigma * r1;
            }
        }
    }
    Ok((db1, ddeltas))
}

fn stepped(b: &Thresholds, t: f64, db1: f64, ddeltas: &[f64]) -> Result<Thresholds> {
    let b1 = b.b1() + t * db1;
    let deltas: Vec<f64> = b
        .deltas()
        .iter()
        .zip(ddeltas.iter())
        .map(|(d, g)| (d + t * g).max(DELTA_MIN))
        .collect();
    Thresholds::new(b1, deltas, b.r())
}

/// Backtracking gradient ascent on the thresholds.
///
/// Steps start at `0.1/N` and halve until the log-likelihood does not
/// decrease; at most [`MAX_THRESH_STEPS`] steps are accepted per call.
/// Returns the updated thresholds together with the log-likelihood there
/// (never below the starting value; worst case the input is returned
/// unchanged).
pub fn update_thresholds(
    b: &Thresholds,
    scores: ArrayView1<'_, f64>,
    labels: &[usize],
    sigma: f64,
) -> Result<(Thresholds, f64)> {
    let n = scores.len().max(1);
    let mut current = b.clone();
    let mut l_current = log_likelihood(scores, labels, &current, sigma)?;
    let mut step = 0.1 / n as f64;
    let mut evals = 0usize;

    for _ in 0..MAX_THRESH_STEPS {
        let (db1, ddeltas) = threshold_gradients(scores, labels, &current, sigma)?;
        let gmax = ddeltas
            .iter()
            .fold(db1.abs(), |acc, d| acc.max(d.abs()));
        if gmax < 1e-10 {
            break;
        }
        let mut t = step;
        let mut accepted = false;
        for _ in 0..20 {
            if evals >= THRESH_EVAL_BUDGET {
                break;
            }
            let candidate = stepped(&current, t, db1, &ddeltas)?;
            let l_new = log_likelihood(scores, labels, &candidate, sigma)?;
            evals += 1;
            if l_new >= l_current {
                current = candidate;
                l_current = l_new;
                // Grow the base step a little when it worked first try.
                step = t * 1.5;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || evals >= THRESH_EVAL_BUDGET {
            break;
        }
    }
    Ok((current, l_current))
}

/// Closed-form noise update
/// `sigma^2 = ||t_hat - Phi w||^2 / (N - sum_m (1 - alpha_m Sigma_mm))`.
///
/// A non-positive denominator keeps the previous sigma (with a warning);
/// the result is clamped to `[SIGMA_MIN, SIGMA_MAX]`.
pub fn update_noise(
    t_hat: ArrayView1<'_, f64>,
    fitted: ArrayView1<'_, f64>,
    alpha: ArrayView1<'_, f64>,
    sigma_diag: ArrayView1<'_, f64>,
    previous: NoiseState,
) -> NoiseState {
    let n = t_hat.len() as f64;
    let residual: f64 = t_hat
        .iter()
        .zip(fitted.iter())
        .map(|(t, f)| (t - f) * (t - f))
        .sum();
    let effective: f64 = alpha
        .iter()
        .zip(sigma_diag.iter())
        .map(|(a, s)| 1.0 - a * s)
        .sum();
    let denom = n - effective;
    if denom <= 0.0 {
        log::warn!(
            "noise update skipped: non-positive denominator {denom:.3e}; keeping sigma = {}",
            previous.sigma
        );
        return previous;
    }
    NoiseState::new((residual / denom).sqrt())
}
