//! Logistic propensity model fitted by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::scaling::Standardizer;
use crate::error::{Error, Result};

/// L2 penalty (per-observation scale) used when the unpenalized fit separates.
pub const SEPARATION_PENALTY: f64 = 1e-4;
/// Standardized-scale coefficient magnitude treated as separation.
pub const SEPARATION_BOUND: f64 = 30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensityConfig {
    pub max_iter: usize,
    /// Convergence threshold on the largest per-observation score component.
    pub tol: f64,
    /// Clip floor; 0 disables clipping.
    pub clip_eps: f64,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
            clip_eps: 0.0,
        }
    }
}

impl PropensityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Config("propensity.max_iter must be positive".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::Config("propensity.tol must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.clip_eps) {
            return Err(Error::Config("propensity.clip_eps must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Fitted logistic regression `P(A=1|x) = expit(b0 + b·x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    /// Intercept followed by one coefficient per covariate, on the raw scale.
    pub coefficients: Vec<f64>,
    pub clip_eps: f64,
    /// Penalty that was in force for the final fit (0 unless the separation
    /// fallback triggered).
    pub penalty: f64,
    pub iterations: usize,
    /// Penalized log-likelihood after each accepted iteration of the final
    /// fit, starting from the initial point.
    pub objective_trace: Vec<f64>,
}

pub(crate) fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^eta) without overflow.
fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// Keeps a probability strictly inside (0, 1).
fn open_unit(p: f64) -> f64 {
    const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;
    p.clamp(f64::MIN_POSITIVE, ONE_BELOW)
}

impl PropensityModel {
    pub fn linear_predictor(&self, row: &[f64]) -> f64 {
        self.coefficients[0] + self.coefficients[1..].iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut eta = DVector::from_element(x.nrows(), self.coefficients[0]);
        for (j, col) in x.column_iter().enumerate() {
            eta.axpy(self.coefficients[j + 1], &col, 1.0);
        }
        eta.iter().map(|&e| self.finish(e)).collect()
    }

    fn finish(&self, eta: f64) -> f64 {
        let p = open_unit(expit(eta));
        if self.clip_eps > 0.0 {
            p.clamp(self.clip_eps, 1.0 - self.clip_eps)
        } else {
            p
        }
    }
}

enum IrlsFailure {
    Singular(usize),
    Separation(usize),
    NotConverged(f64),
}

struct IrlsFit {
    beta: DVector<f64>,
    iterations: usize,
    trace: Vec<f64>,
}

/// Penalized mean log-likelihood of `beta` on design `z` (first column is the
/// intercept, which is not penalized).
fn objective(z: &DMatrix<f64>, a: &DVector<f64>, beta: &DVector<f64>, penalty: f64) -> f64 {
    let eta = z * beta;
    let ll: f64 = eta.iter().zip(a.iter()).map(|(&e, &ai)| ai * e - log1p_exp(e)).sum();
    let ridge: f64 = beta.iter().skip(1).map(|b| b * b).sum();
    ll / z.nrows() as f64 - 0.5 * penalty * ridge
}

fn irls(
    z: &DMatrix<f64>,
    a: &DVector<f64>,
    penalty: f64,
    cfg: &PropensityConfig,
) -> std::result::Result<IrlsFit, IrlsFailure> {
    let n = z.nrows() as f64;
    let k = z.ncols();
    let mut beta = DVector::zeros(k);
    let abar = a.mean();
    beta[0] = (abar / (1.0 - abar)).ln();
    let mut obj = objective(z, a, &beta, penalty);
    let mut trace = vec![obj];
    let mut last_grad = f64::INFINITY;

    for iter in 0..cfg.max_iter {
        let eta = z * &beta;
        let p = eta.map(expit);
        let w = p.map(|pi| pi * (1.0 - pi));
        let mut grad = z.tr_mul(&(a - &p)) / n;
        for j in 1..k {
            grad[j] -= penalty * beta[j];
        }
        last_grad = grad.amax();
        if last_grad < cfg.tol {
            return Ok(IrlsFit {
                beta,
                iterations: iter,
                trace,
            });
        }

        let mut zw = z.clone();
        for (i, mut row) in zw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut hess = z.tr_mul(&zw) / n;
        for j in 1..k {
            hess[(j, j)] += penalty;
        }
        let chol = hess.cholesky().ok_or(IrlsFailure::Singular(iter))?;
        let diag = chol.l_dirty().diagonal();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0_f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if lo * lo < 1e-13 * hi * hi {
            return Err(IrlsFailure::Singular(iter));
        }
        let step = chol.solve(&grad);

        // Step halving keeps the objective monotone.
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &beta + &step * t;
            let cand_obj = objective(z, a, &cand, penalty);
            if cand_obj.is_finite() && cand_obj >= obj {
                accepted = Some((cand, cand_obj));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, cand_obj)) = accepted else {
            // No ascent direction left at floating-point resolution.
            return Ok(IrlsFit {
                beta,
                iterations: iter,
                trace,
            });
        };
        beta = cand;
        obj = cand_obj;
        trace.push(obj);
        if beta.amax() > SEPARATION_BOUND {
            return Err(IrlsFailure::Separation(iter));
        }
    }
    Err(IrlsFailure::NotConverged(last_grad))
}

fn describe(f: &IrlsFailure) -> String {
    match f {
        IrlsFailure::Singular(it) => format!("singular Hessian at iteration {it}"),
        IrlsFailure::Separation(it) => {
            format!("coefficients exceeded {SEPARATION_BOUND} at iteration {it}")
        }
        IrlsFailure::NotConverged(g) => format!("no convergence, max |score| = {g:.3e}"),
    }
}

/// Maximum-likelihood logistic fit of `a` on `(1, x)`. Covariates are
/// standardized internally; coefficients are reported on the raw scale.
///
/// If the unpenalized iterations separate, become singular or fail to
/// converge, the fit restarts with a small ridge penalty on the slopes.
pub fn fit_propensity(x: &DMatrix<f64>, a: &[bool], cfg: &PropensityConfig) -> Result<PropensityModel> {
    cfg.validate()?;
    let n = x.nrows();
    if a.len() != n {
        return Err(Error::Argument(format!(
            "treatment has {} entries for {n} rows",
            a.len()
        )));
    }
    let treated = a.iter().filter(|&&t| t).count();
    if treated == 0 || treated == n {
        return Err(Error::Fit("propensity fit needs both treatment arms present".into()));
    }
    let std = Standardizer::fit(x);
    let zx = std.transform(x);
    let z = DMatrix::from_fn(n, x.ncols() + 1, |i, j| if j == 0 { 1.0 } else { zx[(i, j - 1)] });
    let av = DVector::from_iterator(n, a.iter().map(|&t| if t { 1.0 } else { 0.0 }));

    let (fit, penalty) = match irls(&z, &av, 0.0, cfg) {
        Ok(fit) => (fit, 0.0),
        Err(first) => {
            log::debug!("propensity: {}; refitting with ridge penalty", describe(&first));
            match irls(&z, &av, SEPARATION_PENALTY, cfg) {
                Ok(fit) => (fit, SEPARATION_PENALTY),
                Err(second) => {
                    return Err(Error::Fit(format!(
                        "logistic regression failed: {}; penalized refit: {}",
                        describe(&first),
                        describe(&second)
                    )))
                }
            }
        }
    };

    let mut coefficients = vec![0.0; x.ncols() + 1];
    coefficients[0] = fit.beta[0];
    for j in 0..x.ncols() {
        let b = fit.beta[j + 1] / std.scale[j];
        coefficients[j + 1] = b;
        coefficients[0] -= b * std.mean[j];
    }
    Ok(PropensityModel {
        coefficients,
        clip_eps: cfg.clip_eps,
        penalty,
        iterations: fit.iterations,
        objective_trace: fit.trace,
    })
}
