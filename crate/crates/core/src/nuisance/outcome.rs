//! Arm-specific outcome regressions µ̂⁰ and µ̂¹.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::ffnn::{FfnnConfig, FfnnModel};
use super::scaling::Standardizer;
use crate::error::{Error, Result};
use crate::rng::mix_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Ridge,
    Ffnn,
    /// µ̂ ≡ 0; reduces AIPW to IPW and AMR to MR.
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutcomeConfig {
    pub learner: LearnerKind,
    pub ridge_lambda: f64,
    pub ffnn: FfnnConfig,
    /// Smallest arm size the network learner accepts.
    pub ffnn_min_rows: usize,
}

impl Default for OutcomeConfig {
    fn default() -> Self {
        Self {
            learner: LearnerKind::Ridge,
            ridge_lambda: 1e-6,
            ffnn: FfnnConfig::default(),
            ffnn_min_rows: 20,
        }
    }
}

impl OutcomeConfig {
    pub fn zero() -> Self {
        Self {
            learner: LearnerKind::Zero,
            ..Default::default()
        }
    }

    pub fn ffnn() -> Self {
        Self {
            learner: LearnerKind::Ffnn,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ridge_lambda >= 0.0 && self.ridge_lambda.is_finite()) {
            return Err(Error::Config("outcome.ridge_lambda must be >= 0".into()));
        }
        self.ffnn.validate()
    }

    /// Copy with the network seed replaced by a stream derived from `coords`.
    pub fn reseeded(&self, coords: &[u64]) -> Self {
        let mut cfg = self.clone();
        cfg.ffnn.seed = mix_seed(self.ffnn.seed, coords);
        cfg
    }
}

/// Linear regression with unpenalized intercept and ridge penalty on
/// standardized slopes.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub intercept: f64,
    /// Raw-scale slopes.
    pub slopes: Vec<f64>,
}

impl RidgeModel {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], lambda: f64) -> Result<Self> {
        let n = x.nrows();
        let p = x.ncols();
        if n == 0 {
            return Err(Error::Fit("ridge fit on an empty arm".into()));
        }
        if lambda == 0.0 && n < p + 1 {
            return Err(Error::Fit(format!(
                "unpenalized linear fit needs at least {} rows, got {n}",
                p + 1
            )));
        }
        let scaler = Standardizer::fit(x);
        let z = scaler.transform(x);
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut gram = z.tr_mul(&z);
        for j in 0..p {
            gram[(j, j)] += lambda;
        }
        let rhs = z.tr_mul(&yc);
        let b = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram
                .svd(true, true)
                .solve(&rhs, 1e-12)
                .map_err(|e| Error::Fit(format!("ridge solve failed: {e}")))?,
        };
        let slopes: Vec<f64> = (0..p).map(|j| b[j] / scaler.scale[j]).collect();
        let intercept = y_mean - slopes.iter().zip(&scaler.mean).map(|(s, m)| s * m).sum::<f64>();
        Ok(Self { intercept, slopes })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let mut out = DVector::from_element(x.nrows(), self.intercept);
        for (j, col) in x.column_iter().enumerate() {
            out.axpy(self.slopes[j], &col, 1.0);
        }
        out.as_slice().to_vec()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regressor {
    Ridge(RidgeModel),
    Ffnn(FfnnModel),
    Zero,
}

impl Regressor {
    pub fn predict(&self, x: &DMatrix<f64>) -> Vec<f64> {
        match self {
            Regressor::Ridge(m) => m.predict(x),
            Regressor::Ffnn(m) => m.predict(x),
            Regressor::Zero => vec![0.0; x.nrows()],
        }
    }
}

/// µ̂⁰ fitted on control rows, µ̂¹ on treated rows.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomePair {
    pub mu0: Regressor,
    pub mu1: Regressor,
}

fn fit_arm(x: &DMatrix<f64>, y: &[f64], cfg: &OutcomeConfig, arm: u64) -> Result<Regressor> {
    match cfg.learner {
        LearnerKind::Zero => Ok(Regressor::Zero),
        LearnerKind::Ridge => Ok(Regressor::Ridge(RidgeModel::fit(x, y, cfg.ridge_lambda)?)),
        LearnerKind::Ffnn => {
            if x.nrows() < cfg.ffnn_min_rows {
                return Err(Error::Fit(format!(
                    "arm {arm} has {} rows; the network learner needs at least {}",
                    x.nrows(),
                    cfg.ffnn_min_rows
                )));
            }
            let mut net = cfg.ffnn.clone();
            net.seed = mix_seed(cfg.ffnn.seed, &[arm]);
            Ok(Regressor::Ffnn(FfnnModel::fit(x, y, &net)?))
        }
    }
}

pub fn fit_outcome(x: &DMatrix<f64>, y: &[f64], a: &[bool], cfg: &OutcomeConfig) -> Result<OutcomePair> {
    cfg.validate()?;
    if y.len() != x.nrows() || a.len() != x.nrows() {
        return Err(Error::Argument("outcome fit inputs differ in length".into()));
    }
    let rows = |arm: bool| -> Vec<usize> { (0..a.len()).filter(|&i| a[i] == arm).collect() };
    let mut fitted = Vec::with_capacity(2);
    for (arm, idx) in [(0u64, rows(false)), (1u64, rows(true))] {
        if idx.is_empty() && cfg.learner != LearnerKind::Zero {
            return Err(Error::Fit(format!("treatment arm {arm} is empty")));
        }
        let xa = x.select_rows(&idx);
        let ya: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        fitted.push(fit_arm(&xa, &ya, cfg, arm)?);
    }
    let mu1 = fitted.pop().unwrap();
    let mu0 = fitted.pop().unwrap();
    Ok(OutcomePair { mu0, mu1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn constant_target_is_reproduced() {
        let x = DMatrix::from_fn(10, 2, |i, j| (i * (j + 1)) as f64);
        let a: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        let pair = fit_outcome(&x, &[3.0; 10], &a, &OutcomeConfig::default()).unwrap();
        let probe = DMatrix::from_row_slice(2, 2, &[-5.0, 100.0, 0.5, 0.25]);
        for v in pair.mu0.predict(&probe).into_iter().chain(pair.mu1.predict(&probe)) {
            assert!((v - 3.0).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn noiseless_linear_truth_is_exact() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 * 0.37 - 2.0).collect();
        let a: Vec<bool> = (0..12).map(|i| i % 3 == 0).collect();
        let y: Vec<f64> = xs
            .iter()
            .zip(&a)
            .map(|(x, &t)| 2.0 * x + if t { 5.0 } else { 0.0 })
            .collect();
        let x = DMatrix::from_column_slice(12, 1, &xs);
        let cfg = OutcomeConfig {
            ridge_lambda: 0.0,
            ..Default::default()
        };
        let pair = fit_outcome(&x, &y, &a, &cfg).unwrap();
        let m0 = pair.mu0.predict(&x);
        let m1 = pair.mu1.predict(&x);
        for i in 0..12 {
            assert!((m0[i] - 2.0 * xs[i]).abs() < 1e-10);
            assert!((m1[i] - 2.0 * xs[i] - 5.0).abs() < 1e-10);
        }
    }

    #[test]
    fn ols_residuals_are_orthogonal_to_design() {
        let mut rng = rng_from_seed(9);
        let n = 60;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n)
            .map(|i| x[(i, 0)] - 2.0 * x[(i, 2)] + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let m = RidgeModel::fit(&x, &y, 0.0).unwrap();
        let r: Vec<f64> = m.predict(&x).iter().zip(&y).map(|(p, t)| t - p).collect();
        assert!(r.iter().sum::<f64>().abs() < 1e-8);
        for col in x.column_iter() {
            let dot: f64 = col.iter().zip(&r).map(|(a, b)| a * b).sum();
            assert!(dot.abs() < 1e-8, "{dot}");
        }
    }

    #[test]
    fn empty_arm_is_fit_error() {
        let x = DMatrix::zeros(4, 1);
        let err = fit_outcome(&x, &[1.0; 4], &[true; 4], &OutcomeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Fit(_)));
    }

    #[test]
    fn network_needs_minimum_rows() {
        let x = DMatrix::zeros(10, 1);
        let a: Vec<bool> = (0..10).map(|i| i < 5).collect();
        let err = fit_outcome(&x, &[1.0; 10], &a, &OutcomeConfig::ffnn()).unwrap_err();
        assert!(matches!(err, Error::Fit(_)));
    }

    #[test]
    fn zero_learner_predicts_zero() {
        let x = DMatrix::zeros(3, 1);
        let pair = fit_outcome(&x, &[1.0, 2.0, 3.0], &[true, true, true], &OutcomeConfig::zero()).unwrap();
        assert_eq!(pair.mu0.predict(&x), vec![0.0; 3]);
    }
}
