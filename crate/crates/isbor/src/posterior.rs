//! Laplace-approximated posterior over the active weights.
//!
//! The MAP point of `L(w) - w^T A w / 2` is found by damped Newton-Raphson;
//! the posterior is then the Gaussian with covariance
//! `Sigma = (A + Phi^T H Phi)^{-1}` centered at `w*`, and the log marginal
//! likelihood is the Laplace approximation
//! `L - w*^T A w*/2 + ln|A|/2 + ln|Sigma|/2`.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{IsborError, Result};
use crate::kernel::DesignMatrix;
use crate::likelihood::{likelihood_terms, log_likelihood, LikelihoodTerms, Thresholds};
use crate::linalg::Cholesky;

/// Inner Newton iteration cap.
pub const MAX_NEWTON: usize = 50;
/// Step-halving cap per Newton iteration.
pub const MAX_HALVINGS: usize = 20;
/// Convergence threshold on the gradient infinity norm.
pub const GRAD_TOL: f64 = 1e-6;
/// Convergence threshold on the accepted step infinity norm.
pub const STEP_TOL: f64 = 1e-6;

/// Converged Laplace posterior at the MAP point.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    /// MAP weights w*.
    pub w_star: Array1<f64>,
    /// Posterior covariance Sigma (M x M, symmetric positive definite).
    pub sigma_post: Array2<f64>,
    /// Effective regression targets `t_hat = H^{-1} delta + Phi w*`.
    pub t_hat: Array1<f64>,
    /// Laplace log marginal likelihood at this state.
    pub log_marginal: f64,
    /// Likelihood pieces evaluated at w*.
    pub terms: LikelihoodTerms,
    /// log |A + Phi^T H Phi| (so ln|Sigma| = -precision_log_det).
    pub precision_log_det: f64,
    /// Whether Newton-Raphson met its tolerance.
    pub converged: bool,
    /// Newton iterations actually taken.
    pub newton_iterations: usize,
    /// Log-posterior trace, one entry per accepted iterate (non-decreasing).
    pub objective_history: Vec<f64>,
}

fn validate_inputs(
    phi: &DesignMatrix,
    labels: &[usize],
    alpha: ArrayView1<'_, f64>,
    w_init: ArrayView1<'_, f64>,
) -> Result<()> {
    let m = phi.m();
    if m == 0 {
        return Err(IsborError::input("map_estimate needs at least one active basis"));
    }
    if labels.len() != phi.n {
        return Err(IsborError::input(format!(
            "label count {} does not match design rows {}",
            labels.len(),
            phi.n
        )));
    }
    if alpha.len() != m || w_init.len() != m {
        return Err(IsborError::input(format!(
            "alpha/w_init length ({}, {}) must equal column count {m}",
            alpha.len(),
            w_init.len()
        )));
    }
    for (i, a) in alpha.iter().enumerate() {
        if !(*a > 0.0) || !a.is_finite() {
            return Err(IsborError::input(format!("alpha[{i}] must be positive finite, got {a}")));
        }
    }
    Ok(())
}

/// Log-posterior `L(w) - w^T A w / 2` (additive constant dropped).
pub fn log_posterior(
    w: ArrayView1<'_, f64>,
    phi: &DesignMatrix,
    labels: &[usize],
    alpha: ArrayView1<'_, f64>,
    b: &Thresholds,
    sigma: f64,
) -> Result<f64> {
    let scores = phi.columns.dot(&w);
    let l = log_likelihood(scores.view(), labels, b, sigma)?;
    let penalty: f64 = alpha.iter().zip(w.iter()).map(|(a, wi)| a * wi * wi).sum();
    Ok(l - 0.5 * penalty)
}

/// `A + Phi^T H Phi` for diagonal `h` and `alpha`.
fn precision_matrix(
    phi: &DesignMatrix,
    h: ArrayView1<'_, f64>,
    alpha: ArrayView1<'_, f64>,
) -> Array2<f64> {
    let mut scaled = phi.columns.clone();
    for (mut row, hi) in scaled.rows_mut().into_iter().zip(h.iter()) {
        row.mapv_inplace(|v| v * hi);
    }
    let mut prec = phi.columns.t().dot(&scaled);
    for (i, a) in alpha.iter().enumerate() {
        prec[(i, i)] += a;
    }
    prec
}

/// Newton-Raphson MAP estimation with monotone step-halving line search.
///
/// The log-posterior is concave (H is positive diagonal, A positive), so the
/// Newton direction is an ascent direction and halving terminates. Returns
/// `IsborError::MapNotConverged` carrying the best iterate if the iteration
/// cap is reached with the gradient still above tolerance.
pub fn map_estimate(
    phi: &DesignMatrix,
    labels: &[usize],
    alpha: ArrayView1<'_, f64>,
    b: &Thresholds,
    sigma: f64,
    w_init: ArrayView1<'_, f64>,
) -> Result<PosteriorState> {
    validate_inputs(phi, labels, alpha, w_init)?;
    let m = phi.m();

    let mut w = w_init.to_owned();
    let mut scores = phi.columns.dot(&w);
    let mut terms = likelihood_terms(scores.view(), labels, b, sigma)?;
    let penalty = |wv: &Array1<f64>| -> f64 {
        0.5 * alpha.iter().zip(wv.iter()).map(|(a, wi)| a * wi * wi).sum::<f64>()
    };
    let mut objective = terms.log_lik - penalty(&w);
    let mut history = vec![objective];

    let mut converged = false;
    let mut iterations = 0;
    for it in 0..MAX_NEWTON {
        iterations = it + 1;
        // Gradient of the log-posterior: Phi^T delta - A w.
        let mut grad = phi.columns.t().dot(&terms.delta);
        for i in 0..m {
            grad[i] -= alpha[i] * w[i];
        }
        let grad_norm = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        if grad_norm < GRAD_TOL {
            converged = true;
            break;
        }

        let prec = precision_matrix(phi, terms.hess_diag.view(), alpha.view());
        let chol = Cholesky::new_with_jitter(prec.view())?;
        let direction = chol.solve_vec(grad.view());

        // Step halving: only accept iterates that do not decrease the
        // log-posterior.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let w_trial = &w + &(step * &direction);
            let scores_trial = phi.columns.dot(&w_trial);
            let l_trial = log_likelihood(scores_trial.view(), labels, b, sigma)?;
            let obj_trial = l_trial - penalty(&w_trial);
            if obj_trial >= objective {
                let step_norm =
                    direction.iter().fold(0.0f64, |acc, d| acc.max((step * d).abs()));
                w = w_trial;
                scores = scores_trial;
                terms = likelihood_terms(scores.view(), labels, b, sigma)?;
                objective = terms.log_lik - penalty(&w);
                history.push(objective);
                accepted = true;
                if step_norm < STEP_TOL {
                    converged = true;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // No improving step exists at this scale. If the quadratic
            // model predicts less improvement than the objective can even
            // resolve in floating point, this is the maximum; otherwise
            // flag non-convergence. (The absolute gradient tolerance is
            // unreachable once the likelihood saturates at small sigma.)
            let predicted_gain = 0.5 * grad.dot(&direction);
            converged = grad_norm <= GRAD_TOL
                || predicted_gain <= 1e-9 * (1.0 + objective.abs());
            break;
        }
        if converged {
            break;
        }
    }

    // Assemble the Laplace posterior at the final iterate.
    let prec = precision_matrix(phi, terms.hess_diag.view(), alpha.view());
    let chol = Cholesky::new_with_jitter(prec.view())?;
    let precision_log_det = chol.log_det();
    let sigma_post = chol.inverse();
    let mut t_hat = phi.columns.dot(&w);
    for i in 0..phi.n {
        t_hat[i] += terms.delta[i] / terms.hess_diag[i];
    }

    let mut state = PosteriorState {
        w_star: w,
        sigma_post,
        t_hat,
        log_marginal: 0.0,
        terms,
        precision_log_det,
        converged,
        newton_iterations: iterations,
        objective_history: history,
    };
    state.log_marginal = log_marginal_laplace(&state, alpha);

    if !converged {
        let mut grad = phi.columns.t().dot(&state.terms.delta);
        for i in 0..m {
            grad[i] -= alpha[i] * state.w_star[i];
        }
        let grad_norm = grad.iter().fold(0.0f64, |acc, g| acc.max(g.abs()));
        return Err(IsborError::MapNotConverged {
            iterations,
            grad_norm,
            best: Box::new(state),
        });
    }
    Ok(state)
}

/// Laplace log marginal likelihood
/// `L - w*^T A w* / 2 + ln|A| / 2 + ln|Sigma| / 2`.
pub fn log_marginal_laplace(state: &PosteriorState, alpha: ArrayView1<'_, f64>) -> f64 {
    let penalty: f64 = alpha
        .iter()
        .zip(state.w_star.iter())
        .map(|(a, w)| a * w * w)
        .sum();
    let ln_det_a: f64 = alpha.iter().map(|a| a.ln()).sum();
    state.terms.log_lik - 0.5 * penalty + 0.5 * ln_det_a - 0.5 * state.precision_log_det
}
