//! Univariate regression of the clever covariate on the outcome (or
//! pseudo-outcome): the weight functions ŵ(·) and ŵ*(·).
//!
//! Targets are centered before fitting by default, so a constant target is
//! reproduced exactly and heavy shrinkage collapses to the target mean. With
//! `center = false` the kernel fit shrinks toward zero instead, the population
//! mean of the clever covariate.
//!
//! Gaussian-kernel ridge regression is solved through a pivoted Cholesky
//! factorization `K ≈ G Gᵀ` of the training Gram matrix, stopped once every
//! residual diagonal falls below [`PIVOT_TOLERANCE`]. The ridge system is then
//! `r × r` with `r` the numerical rank, which for a one-dimensional Gaussian
//! kernel stays small. Predictions at new points use the Nyström feature map
//! of the pivot set, which agrees with the exact solve to the truncation
//! tolerance.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::dataset::make_folds;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Residual-diagonal threshold of the pivoted Cholesky factorization.
pub const PIVOT_TOLERANCE: f64 = 1e-14;
/// Pairwise-difference median is exact up to this many points.
pub const MEDIAN_EXACT_LIMIT: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightMethod {
    KernelRidge,
    NadarayaWatson,
    /// Exact empirical conditional mean for discrete regressands; unseen
    /// values map to the overall mean.
    GroupMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossValidationPlan {
    pub method: WeightMethod,
    pub lambda_grid: Vec<f64>,
    /// Multipliers applied to the median-heuristic bandwidth.
    pub gamma_multipliers: Vec<f64>,
    pub cv_folds: usize,
    pub seed: u64,
    /// Kernel ridge only: subtract the target mean before the solve.
    pub center: bool,
}

impl Default for CrossValidationPlan {
    fn default() -> Self {
        Self {
            method: WeightMethod::KernelRidge,
            lambda_grid: vec![1e-4, 1e-3, 1e-2, 1e-1, 1.0],
            gamma_multipliers: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            cv_folds: 5,
            seed: 0,
            center: true,
        }
    }
}

impl CrossValidationPlan {
    /// Single-cell plan; no cross-validation takes place.
    pub fn fixed(lambda: f64, gamma_multiplier: f64) -> Self {
        Self {
            lambda_grid: vec![lambda],
            gamma_multipliers: vec![gamma_multiplier],
            ..Default::default()
        }
    }

    pub fn group_mean() -> Self {
        Self {
            method: WeightMethod::GroupMean,
            ..Default::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() || self.gamma_multipliers.is_empty() {
            return Err(Error::Argument("weight grids must be non-empty".into()));
        }
        if self.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Argument("lambda grid values must be finite and >= 0".into()));
        }
        if self.gamma_multipliers.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::Argument("bandwidth multipliers must be positive".into()));
        }
        if self.cv_folds < 2 {
            return Err(Error::Argument("weights.cv_folds must be >= 2".into()));
        }
        Ok(())
    }
}

fn gaussian(d: f64, gamma: f64) -> f64 {
    (-(d * d) / (2.0 * gamma * gamma)).exp()
}

fn median_sorted(v: &mut [f64]) -> f64 {
    let m = v.len();
    let mid = m / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if m % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

fn pairwise_gaps(u: &[f64]) -> Vec<f64> {
    let mut gaps = Vec::with_capacity(u.len() * (u.len().saturating_sub(1)) / 2);
    for i in 0..u.len() {
        for j in i + 1..u.len() {
            gaps.push((u[i] - u[j]).abs());
        }
    }
    gaps
}

fn subsample(u: &[f64], seed: u64) -> Vec<f64> {
    if u.len() <= MEDIAN_EXACT_LIMIT {
        return u.to_vec();
    }
    let mut idx = sample(&mut rng_from_seed(seed), u.len(), MEDIAN_EXACT_LIMIT).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| u[i]).collect()
}

/// Median of pairwise absolute differences `|uᵢ − uⱼ|`, `i < j`.
pub fn median_heuristic_bandwidth(u: &[f64]) -> Result<f64> {
    median_heuristic_bandwidth_seeded(u, 0)
}

/// As [`median_heuristic_bandwidth`]; above [`MEDIAN_EXACT_LIMIT`] points the
/// median is taken over a subsample drawn with `seed`.
pub fn median_heuristic_bandwidth_seeded(u: &[f64], seed: u64) -> Result<f64> {
    if u.len() < 2 {
        return Err(Error::Degenerate("bandwidth needs at least two points".into()));
    }
    if u.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite regressand".into()));
    }
    if u.iter().all(|&v| v == u[0]) {
        return Err(Error::Degenerate("all regressand values are identical".into()));
    }
    let pts = subsample(u, seed);
    Ok(median_sorted(&mut pairwise_gaps(&pts)))
}

/// Bandwidth used for fitting: the median heuristic, or the median of the
/// strictly positive gaps when ties make the plain median zero.
fn base_bandwidth(u: &[f64], seed: u64) -> Result<f64> {
    let h = median_heuristic_bandwidth_seeded(u, seed)?;
    if h > 0.0 {
        return Ok(h);
    }
    let mut gaps: Vec<f64> = pairwise_gaps(&subsample(u, seed))
        .into_iter()
        .filter(|&g| g > 0.0)
        .collect();
    if gaps.is_empty() {
        return Err(Error::Degenerate("all regressand values are identical".into()));
    }
    Ok(median_sorted(&mut gaps))
}

/// Low-rank factor `G` (m × r, column-major) of the Gaussian Gram matrix
/// together with the pivot order.
struct KernelFactor {
    g: DMatrix<f64>,
    pivots: Vec<usize>,
}

fn pivoted_cholesky(u: &[f64], gamma: f64) -> KernelFactor {
    let m = u.len();
    let mut diag = vec![1.0f64; m];
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut is_pivot = vec![false; m];
    while let Some((best, &d)) = diag
        .iter()
        .enumerate()
        .filter(|(i, _)| !is_pivot[*i])
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
    {
        if d < PIVOT_TOLERANCE {
            break;
        }
        let s = d.sqrt();
        let mut col = vec![0.0; m];
        for i in 0..m {
            if is_pivot[i] {
                continue;
            }
            let mut v = gaussian(u[i] - u[best], gamma);
            for c in &cols {
                v -= c[i] * c[best];
            }
            col[i] = v / s;
        }
        col[best] = s;
        for i in 0..m {
            if !is_pivot[i] {
                diag[i] = (diag[i] - col[i] * col[i]).max(0.0);
            }
        }
        is_pivot[best] = true;
        diag[best] = 0.0;
        pivots.push(best);
        cols.push(col);
    }
    let r = cols.len();
    let g = DMatrix::from_fn(m, r, |i, j| cols[j][i]);
    KernelFactor { g, pivots }
}

/// Nyström features of query points relative to a pivot set: rows of
/// `L⁻¹ k(P, v)` where `L` is the pivot block of `G`.
struct FeatureMap {
    anchors: Vec<f64>,
    chol: DMatrix<f64>,
    gamma: f64,
}

impl FeatureMap {
    fn new(u: &[f64], factor: &KernelFactor, gamma: f64) -> Self {
        let r = factor.pivots.len();
        let chol = DMatrix::from_fn(r, r, |j, l| if l <= j { factor.g[(factor.pivots[j], l)] } else { 0.0 });
        Self {
            anchors: factor.pivots.iter().map(|&p| u[p]).collect(),
            chol,
            gamma,
        }
    }

    fn features(&self, v: &[f64]) -> DMatrix<f64> {
        let r = self.anchors.len();
        let mut k = DMatrix::from_fn(r, v.len(), |j, i| gaussian(v[i] - self.anchors[j], self.gamma));
        if r > 0 {
            self.chol.solve_lower_triangular_mut(&mut k);
        }
        k.transpose()
    }
}

/// Ridge coefficients in feature space: `(GᵀG + λI)⁻¹ Gᵀ t`.
fn feature_ridge(
    gram: &DMatrix<f64>,
    g: &DMatrix<f64>,
    gt: &DVector<f64>,
    t: &DVector<f64>,
    lambda: f64,
) -> Result<DVector<f64>> {
    if lambda > 0.0 {
        let mut a = gram.clone();
        for j in 0..a.nrows() {
            a[(j, j)] += lambda;
        }
        if let Some(ch) = a.clone().cholesky() {
            return Ok(ch.solve(gt));
        }
        return a
            .svd(true, true)
            .solve(gt, 1e-14)
            .map_err(|e| Error::Fit(format!("kernel ridge solve failed: {e}")));
    }
    g.clone()
        .svd(true, true)
        .solve(t, 1e-13)
        .map_err(|e| Error::Fit(format!("kernel least-squares solve failed: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
enum Body {
    Constant,
    Kernel {
        anchors: Vec<f64>,
        chol: DMatrix<f64>,
        beta: DVector<f64>,
    },
    Nadaraya {
        u: Vec<f64>,
        t: Vec<f64>,
    },
    Groups(HashMap<u64, f64>),
}

/// Fitted weight function `u ↦ ŵ(u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightModel {
    pub method: WeightMethod,
    /// Mean of the training targets; the model predicts it far from data.
    pub center: f64,
    pub bandwidth: f64,
    pub lambda: f64,
    /// Training size.
    pub m: usize,
    body: Body,
}

impl WeightModel {
    /// A model that predicts `value` everywhere.
    pub fn constant(value: f64) -> Self {
        Self {
            method: WeightMethod::KernelRidge,
            center: value,
            bandwidth: f64::NAN,
            lambda: f64::NAN,
            m: 0,
            body: Body::Constant,
        }
    }

    /// Kernel-ridge anchors and dual coefficients `αⱼ` such that
    /// `ŵ(u) = center + Σⱼ αⱼ exp(−(u−aⱼ)²/(2γ²))`.
    pub fn dual_coefficients(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        match &self.body {
            Body::Kernel { anchors, chol, beta } => {
                let alpha = chol.transpose().solve_upper_triangular(beta)?;
                Some((anchors.clone(), alpha.as_slice().to_vec()))
            }
            _ => None,
        }
    }

    /// Numerical rank of the kernel factorization (0 for other methods).
    pub fn rank(&self) -> usize {
        match &self.body {
            Body::Kernel { anchors, .. } => anchors.len(),
            _ => 0,
        }
    }

    pub fn evaluate(&self, u: &[f64]) -> Result<Vec<f64>> {
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite evaluation point at index {i}")));
        }
        Ok(match &self.body {
            Body::Constant => vec![self.center; u.len()],
            Body::Kernel { anchors, chol, beta } => {
                let map = FeatureMap {
                    anchors: anchors.clone(),
                    chol: chol.clone(),
                    gamma: self.bandwidth,
                };
                let f = map.features(u) * beta;
                f.iter().map(|v| self.center + v).collect()
            }
            Body::Nadaraya { u: train, t } => u
                .iter()
                .map(|&v| self.center + nadaraya_watson(train, t, v, self.bandwidth))
                .collect(),
            Body::Groups(groups) => u
                .iter()
                .map(|v| groups.get(&key(*v)).copied().unwrap_or(self.center))
                .collect(),
        })
    }
}

fn key(v: f64) -> u64 {
    // -0.0 and 0.0 share a group.
    (v + 0.0).to_bits()
}

/// Kernel-weighted average, shifted so the nearest training point always
/// has weight one.
fn nadaraya_watson(u: &[f64], t: &[f64], v: f64, gamma: f64) -> f64 {
    let dmin = u.iter().map(|x| (x - v).abs()).fold(f64::INFINITY, f64::min);
    let (mut num, mut den) = (0.0, 0.0);
    for (x, y) in u.iter().zip(t) {
        let d = (x - v).abs();
        let w = (-(d * d - dmin * dmin) / (2.0 * gamma * gamma)).exp();
        num += w * y;
        den += w;
    }
    num / den
}

pub fn evaluate_weight_model(model: &WeightModel, u: &[f64]) -> Result<Vec<f64>> {
    model.evaluate(u)
}

fn has_duplicates(u: &[f64]) -> bool {
    let mut s = u.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).any(|w| w[0] == w[1])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn offset(t: &[f64], center: bool) -> f64 {
    if center {
        mean(t)
    } else {
        0.0
    }
}

fn fit_kernel(u: &[f64], t: &[f64], gamma: f64, lambda: f64, center: bool) -> Result<WeightModel> {
    let center = offset(t, center);
    let tc = DVector::from_iterator(t.len(), t.iter().map(|v| v - center));
    let factor = pivoted_cholesky(u, gamma);
    let map = FeatureMap::new(u, &factor, gamma);
    let gram = factor.g.tr_mul(&factor.g);
    let gt = factor.g.tr_mul(&tc);
    let beta = feature_ridge(&gram, &factor.g, &gt, &tc, lambda)?;
    Ok(WeightModel {
        method: WeightMethod::KernelRidge,
        center,
        bandwidth: gamma,
        lambda,
        m: u.len(),
        body: Body::Kernel {
            anchors: map.anchors,
            chol: map.chol,
            beta,
        },
    })
}

/// Out-of-fold squared error for every (multiplier, λ) cell, multipliers
/// outermost.
fn kernel_cv_errors(u: &[f64], t: &[f64], base: f64, plan: &CrossValidationPlan, lambdas: &[f64]) -> Result<Vec<f64>> {
    let folds = make_folds(u.len(), plan.cv_folds.min(u.len()), plan.seed)?;
    let mut sse = vec![0.0; plan.gamma_multipliers.len() * lambdas.len()];
    for v in 0..folds.k() {
        let train = folds.train_indices(v);
        let test = folds.test_indices(v);
        let ut: Vec<f64> = train.iter().map(|&i| u[i]).collect();
        let tt: Vec<f64> = train.iter().map(|&i| t[i]).collect();
        let uv: Vec<f64> = test.iter().map(|&i| u[i]).collect();
        let center = offset(&tt, plan.center);
        let tc = DVector::from_iterator(tt.len(), tt.iter().map(|x| x - center));
        for (gi, mult) in plan.gamma_multipliers.iter().enumerate() {
            let gamma = base * mult;
            let factor = pivoted_cholesky(&ut, gamma);
            let map = FeatureMap::new(&ut, &factor, gamma);
            let feats = map.features(&uv);
            let gram = factor.g.tr_mul(&factor.g);
            let gt = factor.g.tr_mul(&tc);
            for (li, &lambda) in lambdas.iter().enumerate() {
                let beta = feature_ridge(&gram, &factor.g, &gt, &tc, lambda)?;
                let pred = &feats * &beta;
                sse[gi * lambdas.len() + li] += test
                    .iter()
                    .enumerate()
                    .map(|(k, &i)| (t[i] - center - pred[k]).powi(2))
                    .sum::<f64>();
            }
        }
    }
    Ok(sse)
}

fn nadaraya_cv_errors(u: &[f64], t: &[f64], base: f64, plan: &CrossValidationPlan) -> Result<Vec<f64>> {
    let folds = make_folds(u.len(), plan.cv_folds.min(u.len()), plan.seed)?;
    let mut sse = vec![0.0; plan.gamma_multipliers.len()];
    for v in 0..folds.k() {
        let train = folds.train_indices(v);
        let ut: Vec<f64> = train.iter().map(|&i| u[i]).collect();
        let tt: Vec<f64> = train.iter().map(|&i| t[i]).collect();
        for (gi, mult) in plan.gamma_multipliers.iter().enumerate() {
            for i in folds.test_indices(v) {
                sse[gi] += (t[i] - nadaraya_watson(&ut, &tt, u[i], base * mult)).powi(2);
            }
        }
    }
    Ok(sse)
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

/// Regresses `t` on `u` within the plan's function class, selecting the
/// penalty and bandwidth by V-fold cross-validation and refitting on all
/// points.
pub fn fit_weight_model(u: &[f64], t: &[f64], plan: &CrossValidationPlan) -> Result<WeightModel> {
    plan.validate()?;
    let m = u.len();
    if t.len() != m {
        return Err(Error::Argument(format!(
            "regressand has {m} points, target {}",
            t.len()
        )));
    }
    if let Some(i) = u.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite regressand at index {i}")));
    }
    if let Some(i) = t.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite target at index {i}")));
    }
    if m == 0 {
        return Err(Error::Argument("empty weight-fit sample".into()));
    }
    let center = mean(t);

    if plan.method == WeightMethod::GroupMean {
        let mut acc: HashMap<u64, (f64, usize)> = HashMap::new();
        for (x, y) in u.iter().zip(t) {
            let e = acc.entry(key(*x)).or_insert((0.0, 0));
            e.0 += y;
            e.1 += 1;
        }
        return Ok(WeightModel {
            method: WeightMethod::GroupMean,
            center,
            bandwidth: f64::NAN,
            lambda: f64::NAN,
            m,
            body: Body::Groups(acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()),
        });
    }

    if m < 5 {
        return Err(Error::Argument(format!(
            "kernel weight fit needs at least 5 points, got {m}"
        )));
    }
    if u.iter().all(|&v| v == u[0]) {
        return Ok(WeightModel {
            method: plan.method,
            m,
            ..WeightModel::constant(center)
        });
    }
    let base = base_bandwidth(u, plan.seed)?;

    if plan.method == WeightMethod::NadarayaWatson {
        let gi = if plan.gamma_multipliers.len() == 1 {
            0
        } else {
            argmin(&nadaraya_cv_errors(u, t, base, plan)?)
        };
        return Ok(WeightModel {
            method: WeightMethod::NadarayaWatson,
            center,
            bandwidth: base * plan.gamma_multipliers[gi],
            lambda: f64::NAN,
            m,
            body: Body::Nadaraya {
                u: u.to_vec(),
                t: t.iter().map(|v| v - center).collect(),
            },
        });
    }

    // An exact zero penalty is singular with tied abscissae.
    let mut lambdas = plan.lambda_grid.clone();
    if lambdas.contains(&0.0) && has_duplicates(u) {
        let smallest = lambdas
            .iter()
            .copied()
            .filter(|&l| l > 0.0)
            .fold(f64::INFINITY, f64::min);
        if !smallest.is_finite() {
            return Err(Error::Fit(
                "lambda = 0 with tied regressand values and no positive lambda in the grid".into(),
            ));
        }
        for l in lambdas.iter_mut().filter(|l| **l == 0.0) {
            *l = smallest;
        }
    }

    let (gi, li) = if plan.gamma_multipliers.len() * lambdas.len() == 1 {
        (0, 0)
    } else {
        let best = argmin(&kernel_cv_errors(u, t, base, plan, &lambdas)?);
        (best / lambdas.len(), best % lambdas.len())
    };
    fit_kernel(u, t, base * plan.gamma_multipliers[gi], lambdas[li], plan.center)
}
