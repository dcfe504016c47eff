//! Nuisance functions: propensity π̂, outcome regressions µ̂⁰/µ̂¹, and the
//! derived clever covariate and pseudo-outcome vectors.

mod ffnn;
mod outcome;
mod propensity;
pub(crate) mod scaling;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use ffnn::{FfnnConfig, FfnnModel};
pub use outcome::{fit_outcome, LearnerKind, OutcomeConfig, OutcomePair, Regressor, RidgeModel};
pub(crate) use propensity::expit;
pub use propensity::{fit_propensity, PropensityConfig, PropensityModel, SEPARATION_PENALTY};

use crate::dataset::ObservationSet;
use crate::error::{Error, Result};

/// Learner settings for both nuisance models.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NuisanceConfig {
    pub propensity: PropensityConfig,
    pub outcome: OutcomeConfig,
}

/// Fitted nuisances with their evaluations cached on an evaluation set.
#[derive(Debug, Clone)]
pub struct NuisanceFit {
    pub propensity: Option<PropensityModel>,
    pub outcome: Option<OutcomePair>,
    pi: Vec<f64>,
    mu0: Vec<f64>,
    mu1: Vec<f64>,
}

impl NuisanceFit {
    /// Wraps precomputed per-row evaluations.
    pub fn from_values(pi: Vec<f64>, mu0: Vec<f64>, mu1: Vec<f64>) -> Result<Self> {
        if pi.len() != mu0.len() || pi.len() != mu1.len() {
            return Err(Error::Argument(format!(
                "nuisance vectors differ in length ({}, {}, {})",
                pi.len(),
                mu0.len(),
                mu1.len()
            )));
        }
        Ok(Self {
            propensity: None,
            outcome: None,
            pi,
            mu0,
            mu1,
        })
    }

    /// Fits π̂ and µ̂ᵃ on `train` and caches their values on `eval_x`.
    pub fn fit(train: &ObservationSet, eval_x: &DMatrix<f64>, cfg: &NuisanceConfig) -> Result<Self> {
        let propensity = fit_propensity(train.x(), train.treated(), &cfg.propensity)?;
        let outcome = fit_outcome(train.x(), train.y(), train.treated(), &cfg.outcome)?;
        Ok(Self {
            pi: propensity.predict(eval_x),
            mu0: outcome.mu0.predict(eval_x),
            mu1: outcome.mu1.predict(eval_x),
            propensity: Some(propensity),
            outcome: Some(outcome),
        })
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn mu1(&self) -> &[f64] {
        &self.mu1
    }
}

fn check_open_unit(pi: &[f64]) -> Result<()> {
    match pi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
        Some(row) => Err(Error::Domain {
            row,
            message: format!("propensity {} outside (0, 1)", pi[row]),
        }),
        None => Ok(()),
    }
}

/// hᵢ = Aᵢ/π̂ᵢ − (1−Aᵢ)/(1−π̂ᵢ), i.e. (A−π)/(π(1−π)).
pub fn clever_covariates(a: &[f64], pi: &[f64]) -> Result<Vec<f64>> {
    if a.len() != pi.len() {
        return Err(Error::Argument(format!(
            "treatment has {} entries, propensity {}",
            a.len(),
            pi.len()
        )));
    }
    check_open_unit(pi)?;
    Ok(a.iter()
        .zip(pi)
        .map(|(&ai, &p)| ai / p - (1.0 - ai) / (1.0 - p))
        .collect())
}

/// Ŷ*ᵢ = Yᵢ − [π̂ᵢ µ̂⁰ᵢ + (1−π̂ᵢ) µ̂¹ᵢ].
///
/// The propensity multiplies µ̂⁰ (not µ̂¹), so this is not the residual of
/// E[Y|X].
pub fn pseudo_outcomes(y: &[f64], pi: &[f64], mu0: &[f64], mu1: &[f64]) -> Result<Vec<f64>> {
    let n = y.len();
    if pi.len() != n || mu0.len() != n || mu1.len() != n {
        return Err(Error::Argument(format!(
            "pseudo-outcome inputs differ in length ({n}, {}, {}, {})",
            pi.len(),
            mu0.len(),
            mu1.len()
        )));
    }
    check_open_unit(pi)?;
    Ok((0..n)
        .map(|i| y[i] - (pi[i] * mu0[i] + (1.0 - pi[i]) * mu1[i]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clever_covariate_values() {
        let h = clever_covariates(&[1.0, 0.0, 1.0], &[0.1, 0.1, 0.5]).unwrap();
        assert!((h[0] - 10.0).abs() < 1e-12);
        assert!((h[1] + 1.0 / 0.9).abs() < 1e-12);
        assert!((h[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn clever_covariate_rejects_boundary() {
        match clever_covariates(&[1.0, 0.0], &[0.5, 1.0]).unwrap_err() {
            Error::Domain { row, .. } => assert_eq!(row, 1),
            e => panic!("{e}"),
        }
        assert!(clever_covariates(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn pseudo_outcome_values() {
        let v = pseudo_outcomes(&[2.0, 1.0], &[0.5, 0.8], &[1.0, 0.0], &[3.0, 1.0]).unwrap();
        assert!(v[0].abs() < 1e-12);
        assert!((v[1] - 0.8).abs() < 1e-12);
        assert!(pseudo_outcomes(&[1.0], &[0.5, 0.5], &[0.0], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn clever_covariate_sign_and_magnitude(a in proptest::bool::ANY, p in 0.001f64..0.999) {
            let av = if a { 1.0 } else { 0.0 };
            let h = clever_covariates(&[av], &[p]).unwrap()[0];
            prop_assert_eq!(h > 0.0, a);
            let expected = if a { 1.0 / p } else { 1.0 / (1.0 - p) };
            prop_assert!((h.abs() - expected).abs() <= 1e-12 * expected);
            let displayed = (av - p) / (p * (1.0 - p));
            prop_assert!((h - displayed).abs() <= 1e-9 * expected);
        }

        #[test]
        fn pseudo_outcome_shifts_with_y(
            rows in proptest::collection::vec((-50.0f64..50.0, 0.01f64..0.99, -20.0f64..20.0, -20.0f64..20.0, -5.0f64..5.0), 1..20)
        ) {
            let y: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let pi: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let mu0: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let mu1: Vec<f64> = rows.iter().map(|r| r.3).collect();
            let shift: Vec<f64> = rows.iter().map(|r| r.4).collect();
            let base = pseudo_outcomes(&y, &pi, &mu0, &mu1).unwrap();
            let y2: Vec<f64> = y.iter().zip(&shift).map(|(a, b)| a + b).collect();
            let moved = pseudo_outcomes(&y2, &pi, &mu0, &mu1).unwrap();
            for i in 0..y.len() {
                prop_assert!((moved[i] - base[i] - shift[i]).abs() < 1e-9);
            }
        }

        #[test]
        fn equal_outcome_models_subtract_constant(
            y in proptest::collection::vec(-10.0f64..10.0, 1..10), p in 0.01f64..0.99, c in -5.0f64..5.0
        ) {
            let n = y.len();
            let v = pseudo_outcomes(&y, &vec![p; n], &vec![c; n], &vec![c; n]).unwrap();
            for i in 0..n {
                prop_assert!((v[i] - (y[i] - c)).abs() < 1e-12);
            }
        }
    }
}
