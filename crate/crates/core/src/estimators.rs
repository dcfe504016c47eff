//! IPW, AIPW, MR and AMR point estimators with cross-fitting, plus the
//! ATT/ATC and policy-value variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{make_folds, ObservationSet};
use crate::error::{Error, Result};
use crate::nuisance::{
    clever_covariates, pseudo_outcomes, NuisanceConfig, NuisanceFit, OutcomeConfig, PropensityConfig,
};
use crate::rng::mix_seed;
use crate::weightfit::{fit_weight_model, CrossValidationPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "IPW")]
    Ipw,
    #[serde(rename = "AIPW")]
    Aipw,
    #[serde(rename = "MR")]
    Mr,
    #[serde(rename = "AMR")]
    Amr,
    #[serde(rename = "MR-oracleW")]
    MrOracleW,
    #[serde(rename = "AMR-oracleW")]
    AmrOracleW,
    #[serde(rename = "ATT-AMR")]
    AttAmr,
    #[serde(rename = "ATC-AMR")]
    AtcAmr,
    #[serde(rename = "POLICY")]
    Policy,
    /// IPW with the true propensity.
    #[serde(rename = "IPW-oracle")]
    IpwOracle,
    /// AIPW with the true propensity and outcome regressions.
    #[serde(rename = "AIPW-oracle")]
    AipwOracle,
}

impl Method {
    pub const ALL: [Method; 11] = [
        Method::Ipw,
        Method::Aipw,
        Method::Mr,
        Method::Amr,
        Method::MrOracleW,
        Method::AmrOracleW,
        Method::AttAmr,
        Method::AtcAmr,
        Method::Policy,
        Method::IpwOracle,
        Method::AipwOracle,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Ipw => "IPW",
            Method::Aipw => "AIPW",
            Method::Mr => "MR",
            Method::Amr => "AMR",
            Method::MrOracleW => "MR-oracleW",
            Method::AmrOracleW => "AMR-oracleW",
            Method::AttAmr => "ATT-AMR",
            Method::AtcAmr => "ATC-AMR",
            Method::Policy => "POLICY",
            Method::IpwOracle => "IPW-oracle",
            Method::AipwOracle => "AIPW-oracle",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.tag().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Argument(format!("unknown estimator '{s}'")))
    }
}

/// Point estimate with its per-unit contributions.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub method: Method,
    pub theta_hat: f64,
    pub contributions: Vec<f64>,
    pub folds: usize,
    pub fingerprint: String,
    /// Per-unit weights that multiplied the outcome (ĥ for IPW/AIPW, ŵ or ŵ*
    /// otherwise).
    pub weights: Option<Vec<f64>>,
    /// AMR only: ĥᵢŶ*ᵢ with the same held-out nuisances.
    pub aipw_contributions: Option<Vec<f64>>,
}

impl EstimateReport {
    pub fn from_contributions(method: Method, contributions: Vec<f64>, folds: usize, fingerprint: String) -> Self {
        let theta_hat = contributions.iter().sum::<f64>() / contributions.len() as f64;
        Self {
            method,
            theta_hat,
            contributions,
            folds,
            fingerprint,
            weights: None,
            aipw_contributions: None,
        }
    }

    pub fn n(&self) -> usize {
        self.contributions.len()
    }

    fn with_weights(mut self, w: Vec<f64>) -> Self {
        self.weights = Some(w);
        self
    }
}

/// Learners, folds and weight plan shared by all estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    /// Cross-fitting folds; 1 fits nuisances and weights in-sample.
    pub folds: usize,
    pub seed: u64,
    pub propensity: PropensityConfig,
    pub outcome: OutcomeConfig,
    pub weights: CrossValidationPlan,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            seed: 0,
            propensity: PropensityConfig::default(),
            outcome: OutcomeConfig::default(),
            weights: CrossValidationPlan::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn nuisance(&self) -> NuisanceConfig {
        NuisanceConfig {
            propensity: self.propensity.clone(),
            outcome: self.outcome.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::Config("folds must be >= 1".into()));
        }
        self.propensity.validate()?;
        self.outcome.validate()?;
        self.weights.validate()
    }

    /// Short hex digest identifying the configuration.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone)]
struct FoldPart {
    train: Vec<usize>,
    test: Vec<usize>,
    /// Nuisances fitted on `train`, evaluated on every row.
    fit: NuisanceFit,
}

/// Fold-wise nuisance fits shared across estimators.
#[derive(Debug, Clone)]
pub struct CrossFitNuisances {
    parts: Vec<FoldPart>,
    n: usize,
}

fn fold_partition(n: usize, k: usize, seed: u64) -> Result<Vec<(Vec<usize>, Vec<usize>)>> {
    if k == 1 {
        let all: Vec<usize> = (0..n).collect();
        return Ok(vec![(all.clone(), all)]);
    }
    let folds = make_folds(n, k, seed)?;
    Ok((0..k)
        .map(|f| (folds.train_indices(f), folds.test_indices(f)))
        .collect())
}

impl CrossFitNuisances {
    /// Fits π̂, µ̂⁰, µ̂¹ on each training fold.
    pub fn fit(data: &ObservationSet, cfg: &EstimatorConfig) -> Result<Self> {
        cfg.validate()?;
        let nuisance = cfg.nuisance();
        let mut parts = Vec::with_capacity(cfg.folds);
        for (k, (train, test)) in fold_partition(data.n(), cfg.folds, cfg.seed)?.into_iter().enumerate() {
            let sub = data.subset(&train);
            let treated = sub.n_treated();
            if treated == 0 || treated == sub.n() {
                return Err(Error::Fit(format!(
                    "training fold {k} contains a single treatment arm; use fewer folds"
                )));
            }
            let fold_cfg = NuisanceConfig {
                propensity: nuisance.propensity.clone(),
                outcome: nuisance.outcome.reseeded(&[cfg.seed, k as u64]),
            };
            let fit = NuisanceFit::fit(&sub, data.x(), &fold_cfg)?;
            parts.push(FoldPart { train, test, fit });
        }
        Ok(Self { parts, n: data.n() })
    }

    /// Uses the same known nuisance values in every fold.
    pub fn fixed(fit: NuisanceFit, folds: usize, seed: u64) -> Result<Self> {
        let n = fit.len();
        let parts = fold_partition(n, folds, seed)?
            .into_iter()
            .map(|(train, test)| FoldPart {
                train,
                test,
                fit: fit.clone(),
            })
            .collect();
        Ok(Self { parts, n })
    }

    pub fn folds(&self) -> usize {
        self.parts.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Each row's nuisance values taken from the fit that held it out.
    pub fn held_out(&self) -> NuisanceFit {
        let mut pi = vec![0.0; self.n];
        let mut mu0 = vec![0.0; self.n];
        let mut mu1 = vec![0.0; self.n];
        for part in &self.parts {
            for &i in &part.test {
                pi[i] = part.fit.pi()[i];
                mu0[i] = part.fit.mu0()[i];
                mu1[i] = part.fit.mu1()[i];
            }
        }
        NuisanceFit::from_values(pi, mu0, mu1).expect("equal lengths")
    }

    fn check(&self, data: &ObservationSet) -> Result<()> {
        if data.n() != self.n {
            return Err(Error::Argument(format!(
                "nuisances cover {} rows, data has {}",
                self.n,
                data.n()
            )));
        }
        Ok(())
    }
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

pub fn estimate_ipw(data: &ObservationSet, pi_hat: &[f64]) -> Result<EstimateReport> {
    ipw_report(data, pi_hat, Method::Ipw, 1, String::new())
}

fn ipw_report(data: &ObservationSet, pi: &[f64], method: Method, folds: usize, fp: String) -> Result<EstimateReport> {
    let h = clever_covariates(&data.a(), pi)?;
    let c = h.iter().zip(data.y()).map(|(h, y)| h * y).collect();
    Ok(EstimateReport::from_contributions(method, c, folds, fp).with_weights(h))
}

pub fn estimate_aipw(data: &ObservationSet, fit: &NuisanceFit) -> Result<EstimateReport> {
    aipw_report(data, fit, Method::Aipw, 1, String::new())
}

fn aipw_report(
    data: &ObservationSet,
    fit: &NuisanceFit,
    method: Method,
    folds: usize,
    fp: String,
) -> Result<EstimateReport> {
    if fit.len() != data.n() {
        return Err(Error::Argument(format!(
            "nuisances cover {} rows, data has {}",
            fit.len(),
            data.n()
        )));
    }
    let h = clever_covariates(&data.a(), fit.pi())?;
    let ystar = pseudo_outcomes(data.y(), fit.pi(), fit.mu0(), fit.mu1())?;
    let c = h.iter().zip(&ystar).map(|(h, y)| h * y).collect();
    Ok(EstimateReport::from_contributions(method, c, folds, fp).with_weights(h))
}

/// Regressand of the weight regression.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Regressand {
    Outcome,
    Pseudo,
}

/// Per fold: regress ĥ₋ₖ on the regressand over D₋ₖ, then apply the fitted
/// weight to the held-out regressand computed with the same fold's nuisances.
fn marginal_ratio(
    data: &ObservationSet,
    cf: &CrossFitNuisances,
    plan: &CrossValidationPlan,
    kind: Regressand,
    fp: String,
) -> Result<EstimateReport> {
    cf.check(data)?;
    let n = data.n();
    let a = data.a();
    let mut contributions = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut aipw = vec![0.0; n];
    for (k, part) in cf.parts.iter().enumerate() {
        let fit = &part.fit;
        let h = clever_covariates(&a, fit.pi())?;
        let u = match kind {
            Regressand::Outcome => data.y().to_vec(),
            Regressand::Pseudo => pseudo_outcomes(data.y(), fit.pi(), fit.mu0(), fit.mu1())?,
        };
        let model = fit_weight_model(
            &pick(&u, &part.train),
            &pick(&h, &part.train),
            &plan.with_seed(mix_seed(plan.seed, &[k as u64])),
        )?;
        let w = model.evaluate(&pick(&u, &part.test))?;
        for (j, &i) in part.test.iter().enumerate() {
            weights[i] = w[j];
            contributions[i] = w[j] * u[i];
            aipw[i] = h[i] * u[i];
        }
    }
    let method = match kind {
        Regressand::Outcome => Method::Mr,
        Regressand::Pseudo => Method::Amr,
    };
    let mut report = EstimateReport::from_contributions(method, contributions, cf.folds(), fp).with_weights(weights);
    if kind == Regressand::Pseudo {
        report.aipw_contributions = Some(aipw);
    }
    Ok(report)
}

/// Cross-fitted MR: θ̂ = Pₙ[ŵ(Y)Y] with ŵ the regression of ĥ on Y.
pub fn estimate_mr(data: &ObservationSet, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    // MR never touches the outcome regressions.
    let cfg_mr = EstimatorConfig {
        outcome: OutcomeConfig::zero(),
        ..cfg.clone()
    };
    let cf = CrossFitNuisances::fit(data, &cfg_mr)?;
    mr_from_nuisances(data, &cf, &cfg.weights, cfg.fingerprint())
}

/// Cross-fitted AMR: θ̂ = Pₙ[ŵ*(Ŷ*)Ŷ*] with ŵ* the regression of ĥ on Ŷ*.
pub fn estimate_amr(data: &ObservationSet, cfg: &EstimatorConfig) -> Result<EstimateReport> {
    let cf = CrossFitNuisances::fit(data, cfg)?;
    amr_from_nuisances(data, &cf, &cfg.weights, cfg.fingerprint())
}

pub fn mr_from_nuisances(
    data: &ObservationSet,
    cf: &CrossFitNuisances,
    plan: &CrossValidationPlan,
    fp: String,
) -> Result<EstimateReport> {
    marginal_ratio(data, cf, plan, Regressand::Outcome, fp)
}

pub fn amr_from_nuisances(
    data: &ObservationSet,
    cf: &CrossFitNuisances,
    plan: &CrossValidationPlan,
    fp: String,
) -> Result<EstimateReport> {
    marginal_ratio(data, cf, plan, Regressand::Pseudo, fp)
}

/// MR/AMR with a known weight function in place of the fitted one.
pub fn estimate_with_oracle_weights(
    data: &ObservationSet,
    fit: &NuisanceFit,
    method: Method,
    weight: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
) -> Result<EstimateReport> {
    let u = match method {
        Method::MrOracleW => data.y().to_vec(),
        Method::AmrOracleW => pseudo_outcomes(data.y(), fit.pi(), fit.mu0(), fit.mu1())?,
        other => {
            return Err(Error::Argument(format!("{other} is not an oracle-weight estimator")));
        }
    };
    let w = weight(&u)?;
    if w.len() != u.len() {
        return Err(Error::Argument("weight function changed the vector length".into()));
    }
    let c = w.iter().zip(&u).map(|(w, u)| w * u).collect();
    let mut report = EstimateReport::from_contributions(method, c, 1, String::new()).with_weights(w);
    if method == Method::AmrOracleW {
        let h = clever_covariates(&data.a(), fit.pi())?;
        report.aipw_contributions = Some(h.iter().zip(&u).map(|(h, u)| h * u).collect());
    }
    Ok(report)
}

/// IPW and AIPW with the true nuisances.
pub fn estimate_oracle_ipw_aipw(
    data: &ObservationSet,
    truth: &NuisanceFit,
) -> Result<(EstimateReport, EstimateReport)> {
    Ok((
        ipw_report(data, truth.pi(), Method::IpwOracle, 1, String::new())?,
        aipw_report(data, truth, Method::AipwOracle, 1, String::new())?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TreatedMode {
    Att,
    Atc,
}

pub fn estimate_att_atc(data: &ObservationSet, cfg: &EstimatorConfig, mode: TreatedMode) -> Result<EstimateReport> {
    let cf = CrossFitNuisances::fit(data, cfg)?;
    att_atc_from_nuisances(data, &cf, &cfg.weights, mode, cfg.fingerprint())
}

/// ATT: regress A/π̂ on r = Y − (1−π̂)µ̂¹; ATC: regress (1−A)/(1−π̂) on
/// r = Y − π̂µ̂⁰. Contributions ŵ(rᵢ)·rᵢ.
pub fn att_atc_from_nuisances(
    data: &ObservationSet,
    cf: &CrossFitNuisances,
    plan: &CrossValidationPlan,
    mode: TreatedMode,
    fp: String,
) -> Result<EstimateReport> {
    cf.check(data)?;
    let n = data.n();
    let a = data.a();
    let y = data.y();
    let mut contributions = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for (k, part) in cf.parts.iter().enumerate() {
        let (pi, mu0, mu1) = (part.fit.pi(), part.fit.mu0(), part.fit.mu1());
        if let Some(row) = pi.iter().position(|&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::Domain {
                row,
                message: format!("propensity {} outside (0, 1)", pi[row]),
            });
        }
        let (r, ratio): (Vec<f64>, Vec<f64>) = (0..n)
            .map(|i| match mode {
                TreatedMode::Att => (y[i] - (1.0 - pi[i]) * mu1[i], a[i] / pi[i]),
                TreatedMode::Atc => (y[i] - pi[i] * mu0[i], (1.0 - a[i]) / (1.0 - pi[i])),
            })
            .unzip();
        let model = fit_weight_model(
            &pick(&r, &part.train),
            &pick(&ratio, &part.train),
            &plan.with_seed(mix_seed(plan.seed, &[k as u64])),
        )?;
        let w = model.evaluate(&pick(&r, &part.test))?;
        for (j, &i) in part.test.iter().enumerate() {
            weights[i] = w[j];
            contributions[i] = w[j] * r[i];
        }
    }
    let method = match mode {
        TreatedMode::Att => Method::AttAmr,
        TreatedMode::Atc => Method::AtcAmr,
    };
    Ok(EstimateReport::from_contributions(method, contributions, cf.folds(), fp).with_weights(weights))
}

/// Value of a target policy: Pₙ{Ê[πᵗ/π̂ᵒᵇˢ | Y − µ̂(X,A)]·(Y − µ̂(X,A))}.
/// There is no plug-in term.
pub fn estimate_policy_value(
    residuals: &[f64],
    ratio: &[f64],
    plan: &CrossValidationPlan,
    folds: usize,
    seed: u64,
) -> Result<EstimateReport> {
    let n = residuals.len();
    if ratio.len() != n {
        return Err(Error::Argument(format!("{n} residuals but {} ratios", ratio.len())));
    }
    if n < 2 {
        return Err(Error::Argument("policy value needs at least two units".into()));
    }
    if let Some(i) = ratio.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::Argument(format!(
            "policy ratio at index {i} must be finite and >= 0"
        )));
    }
    let mut contributions = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for (k, (train, test)) in fold_partition(n, folds, seed)?.into_iter().enumerate() {
        let model = fit_weight_model(
            &pick(residuals, &train),
            &pick(ratio, &train),
            &plan.with_seed(mix_seed(plan.seed, &[k as u64])),
        )?;
        let w = model.evaluate(&pick(residuals, &test))?;
        for (j, &i) in test.iter().enumerate() {
            weights[i] = w[j];
            contributions[i] = w[j] * residuals[i];
        }
    }
    Ok(EstimateReport::from_contributions(Method::Policy, contributions, folds, String::new()).with_weights(weights))
}

/// IPW, AIPW, MR and AMR sharing one pass of cross-fitted nuisances.
pub fn estimator_suite(data: &ObservationSet, cfg: &EstimatorConfig) -> Result<Vec<EstimateReport>> {
    let cf = CrossFitNuisances::fit(data, cfg)?;
    suite_from_nuisances(data, &cf, &cfg.weights, cfg.fingerprint())
}

pub fn suite_from_nuisances(
    data: &ObservationSet,
    cf: &CrossFitNuisances,
    plan: &CrossValidationPlan,
    fp: String,
) -> Result<Vec<EstimateReport>> {
    let held = cf.held_out();
    let k = cf.folds();
    Ok(vec![
        ipw_report(data, held.pi(), Method::Ipw, k, fp.clone())?,
        aipw_report(data, &held, Method::Aipw, k, fp.clone())?,
        mr_from_nuisances(data, cf, plan, fp.clone())?,
        amr_from_nuisances(data, cf, plan, fp)?,
    ])
}
