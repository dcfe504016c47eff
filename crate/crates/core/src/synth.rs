//! Synthetic data: the instrument/confounder/prognostic/spurious simulation
//! design, Gaussian designs with closed-form weights, and oracle estimators
//! built from those weights.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::ObservationSet;
use crate::error::{Error, Result};
use crate::estimators::{estimate_oracle_ipw_aipw, estimate_with_oracle_weights, EstimateReport, Method};
use crate::nuisance::{expit, pseudo_outcomes, NuisanceFit};
use crate::rng::{mix_seed, rng_from_seed, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mu0Form {
    /// 10 sin(π ΣO) + 20 (ΣO)² + (ΣC cos(π ΣO))².
    Nonlinear,
    /// ΣO + ΣC.
    Linear,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub n: usize,
    pub p_i: usize,
    pub p_c: usize,
    pub p_o: usize,
    pub p_s: usize,
    pub effect: f64,
    pub noise_sd: f64,
    pub mu0: Mu0Form,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            n: 400,
            p_i: 5,
            p_c: 5,
            p_o: 5,
            p_s: 5,
            effect: 5.0,
            noise_sd: 1.0,
            mu0: Mu0Form::Nonlinear,
            seed: 0,
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("simulation n must be >= 2".into()));
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::Config("noise_sd must be positive".into()));
        }
        if !self.effect.is_finite() {
            return Err(Error::Config("effect must be finite".into()));
        }
        if self.p_i + self.p_c + self.p_o + self.p_s == 0 {
            return Err(Error::Config("the design needs at least one covariate".into()));
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.p_i + self.p_c + self.p_o + self.p_s
    }
}

/// Simulated data with the generating nuisances at every row.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub data: ObservationSet,
    pub theta: f64,
    pub pi: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
}

impl SyntheticSample {
    pub fn truth(&self) -> NuisanceFit {
        NuisanceFit::from_values(self.pi.clone(), self.mu0.clone(), self.mu1.clone()).expect("equal lengths")
    }
}

fn draw_normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Columns are ordered instruments, confounders, prognostic, spurious and
/// named x1..xp.
pub fn generate_synthetic(cfg: &SimulationConfig) -> Result<SyntheticSample> {
    cfg.validate()?;
    let (n, p) = (cfg.n, cfg.p());
    let mut rng = rng_from_seed(cfg.seed);
    let mut x = DMatrix::zeros(n, p);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut pis = Vec::with_capacity(n);
    let mut mu0s = Vec::with_capacity(n);
    let c0 = cfg.p_i;
    let o0 = c0 + cfg.p_c;
    let s0 = o0 + cfg.p_o;
    let mut row = vec![0.0; p];
    for i in 0..n {
        for (j, v) in row.iter_mut().enumerate() {
            *v = draw_normal(&mut rng);
            x[(i, j)] = *v;
        }
        let si: f64 = row[..c0].iter().sum();
        let sc: f64 = row[c0..o0].iter().sum();
        let so: f64 = row[o0..s0].iter().sum();
        let pi = expit(si + 0.5 * sc);
        let mu0 = match cfg.mu0 {
            Mu0Form::Nonlinear => 10.0 * (PI * so).sin() + 20.0 * so * so + (sc * (PI * so).cos()).powi(2),
            Mu0Form::Linear => so + sc,
            Mu0Form::Zero => 0.0,
        };
        let ai = rng.random::<f64>() < pi;
        let yi = cfg.effect * f64::from(u8::from(ai)) + mu0 + cfg.noise_sd * draw_normal(&mut rng);
        a.push(ai);
        y.push(yi);
        pis.push(pi);
        mu0s.push(mu0);
    }
    let mu1s = mu0s.iter().map(|m| m + cfg.effect).collect();
    Ok(SyntheticSample {
        data: ObservationSet::new(x, a, y, None)?,
        theta: cfg.effect,
        pi: pis,
        mu0: mu0s,
        mu1: mu1s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovariateLaw {
    PointMass(Vec<f64>),
    StandardNormal(usize),
}

impl CovariateLaw {
    pub fn dim(&self) -> usize {
        match self {
            CovariateLaw::PointMass(v) => v.len(),
            CovariateLaw::StandardNormal(d) => *d,
        }
    }
}

/// `expit(intercept + coefsᵀx)`; missing coefficients are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLogit {
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

impl LinearLogit {
    pub fn constant(p: f64) -> Self {
        Self {
            intercept: (p / (1.0 - p)).ln(),
            coefs: vec![],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        expit(self.intercept + self.coefs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>())
    }
}

/// `intercept + coefsᵀx`; missing coefficients are zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    pub coefs: Vec<f64>,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Self {
            intercept: c,
            coefs: vec![],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefs.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    fn mean(&self, law: &CovariateLaw) -> f64 {
        match law {
            CovariateLaw::PointMass(v) => self.eval(v),
            CovariateLaw::StandardNormal(_) => self.intercept,
        }
    }
}

/// A | X ~ Bernoulli(π(X)), Yᵃ | X ~ N(µᵃ(X), σ²).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianDesign {
    pub law: CovariateLaw,
    pub propensity: LinearLogit,
    pub mu0: Affine,
    pub mu1: Affine,
    pub sigma: f64,
}

/// Plug-in nuisances π̂, µ̂⁰, µ̂¹ for the ⁰-kind oracle weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuisanceOverride {
    pub propensity: LinearLogit,
    pub mu0: Affine,
    pub mu1: Affine,
}

impl GaussianDesign {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config("design sigma must be positive".into()));
        }
        let d = self.law.dim();
        for (name, len) in [
            ("propensity", self.propensity.coefs.len()),
            ("mu0", self.mu0.coefs.len()),
            ("mu1", self.mu1.coefs.len()),
        ] {
            if len > d {
                return Err(Error::Config(format!(
                    "{name} has {len} coefficients for {d} covariates"
                )));
            }
        }
        if d == 0 {
            return Err(Error::Config("design needs at least one covariate".into()));
        }
        Ok(())
    }

    /// E[µ¹(X) − µ⁰(X)], exact for affine outcome specifications.
    pub fn true_theta(&self) -> f64 {
        self.mu1.mean(&self.law) - self.mu0.mean(&self.law)
    }

    pub fn as_override(&self) -> NuisanceOverride {
        NuisanceOverride {
            propensity: self.propensity.clone(),
            mu0: self.mu0.clone(),
            mu1: self.mu1.clone(),
        }
    }

    fn draw_x(&self, rng: &mut Rng, out: &mut [f64]) {
        match &self.law {
            CovariateLaw::PointMass(v) => out.copy_from_slice(v),
            CovariateLaw::StandardNormal(_) => out.iter_mut().for_each(|x| *x = draw_normal(rng)),
        }
    }
}

pub fn generate_gaussian_example(design: &GaussianDesign, n: usize, seed: u64) -> Result<SyntheticSample> {
    design.validate()?;
    if n < 2 {
        return Err(Error::Config("n must be >= 2".into()));
    }
    let d = design.law.dim();
    let mut rng = rng_from_seed(seed);
    let mut x = DMatrix::zeros(n, d);
    let mut row = vec![0.0; d];
    let (mut a, mut y, mut pis, mut mu0s, mut mu1s) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..n {
        design.draw_x(&mut rng, &mut row);
        for j in 0..d {
            x[(i, j)] = row[j];
        }
        let pi = design.propensity.eval(&row);
        let (m0, m1) = (design.mu0.eval(&row), design.mu1.eval(&row));
        let ai = rng.random::<f64>() < pi;
        let noise = design.sigma * draw_normal(&mut rng);
        y.push(if ai { m1 } else { m0 } + noise);
        a.push(ai);
        pis.push(pi);
        mu0s.push(m0);
        mu1s.push(m1);
    }
    Ok(SyntheticSample {
        data: ObservationSet::new(x, a, y, None)?,
        theta: design.true_theta(),
        pi: pis,
        mu0: mu0s,
        mu1: mu1s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightKind {
    /// E[h | Y].
    W,
    /// E[ĥ | Y] with plug-in π̂.
    W0,
    /// E[h | Y*].
    WStar,
    /// E[ĥ | Ŷ*] with plug-in π̂ and µ̂ᵃ.
    WStar0,
}

impl WeightKind {
    pub fn uses_pseudo_outcome(self) -> bool {
        matches!(self, WeightKind::WStar | WeightKind::WStar0)
    }
}

/// Closed-form weight function tabulated on a grid. Points where the
/// marginal density underflows are out of support (`None`).
#[derive(Debug, Clone, PartialEq)]
pub struct OracleWeightTable {
    pub kind: WeightKind,
    pub grid: Vec<f64>,
    pub values: Vec<Option<f64>>,
    pub m: usize,
    pub seed: u64,
}

/// Below this the marginal density is treated as zero.
const DENSITY_FLOOR: f64 = 1e-300;

/// Per-draw mixture components: (ratio₁, mean₁, ratio₀, mean₀, π).
fn components(design: &GaussianDesign, kind: WeightKind, ov: &NuisanceOverride, x: &[f64]) -> [f64; 5] {
    let pi = design.propensity.eval(x);
    let (m0, m1) = (design.mu0.eval(x), design.mu1.eval(x));
    let (r1, r0) = match kind {
        WeightKind::W | WeightKind::WStar => (1.0, 1.0),
        WeightKind::W0 | WeightKind::WStar0 => {
            let ph = ov.propensity.eval(x);
            (pi / ph, (1.0 - pi) / (1.0 - ph))
        }
    };
    let (c1, c0) = match kind {
        WeightKind::W | WeightKind::W0 => (m1, m0),
        WeightKind::WStar => (pi * (m1 - m0), -(1.0 - pi) * (m1 - m0)),
        WeightKind::WStar0 => {
            let ph = ov.propensity.eval(x);
            let star = ph * ov.mu0.eval(x) + (1.0 - ph) * ov.mu1.eval(x);
            (m1 - star, m0 - star)
        }
    };
    [r1, c1, r0, c0, pi]
}

pub fn oracle_weight_table(
    design: &GaussianDesign,
    kind: WeightKind,
    overrides: Option<&NuisanceOverride>,
    grid: &[f64],
    m: usize,
    seed: u64,
) -> Result<OracleWeightTable> {
    design.validate()?;
    if grid.is_empty() || grid.iter().any(|g| !g.is_finite()) {
        return Err(Error::Argument("oracle grid must be non-empty and finite".into()));
    }
    let point_mass = matches!(design.law, CovariateLaw::PointMass(_));
    if !point_mass && m < 10_000 {
        return Err(Error::Argument(format!("oracle integration needs M >= 10000, got {m}")));
    }
    let truth = design.as_override();
    let ov = match (kind, overrides) {
        (WeightKind::W0 | WeightKind::WStar0, Some(o)) => o,
        (WeightKind::W0 | WeightKind::WStar0, None) => {
            return Err(Error::Argument("plug-in weight kinds need nuisance overrides".into()));
        }
        _ => &truth,
    };
    let draws = if point_mass { 1 } else { m };
    let mut rng = rng_from_seed(seed);
    let mut x = vec![0.0; design.law.dim()];
    let comps: Vec<[f64; 5]> = (0..draws)
        .map(|_| {
            design.draw_x(&mut rng, &mut x);
            components(design, kind, ov, &x)
        })
        .collect();
    if let Some(c) = comps.iter().find(|c| !c.iter().all(|v| v.is_finite())) {
        return Err(Error::Argument(format!("non-finite oracle component {c:?}")));
    }

    let s2 = 2.0 * design.sigma * design.sigma;
    let log_norm = -(design.sigma * (2.0 * PI).sqrt()).ln() - (draws as f64).ln();
    let values = grid
        .iter()
        .map(|&y| {
            let lmax = comps
                .iter()
                .map(|c| (-(y - c[1]).powi(2) / s2).max(-(y - c[3]).powi(2) / s2))
                .fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0, 0.0);
            for c in &comps {
                let e1 = (-(y - c[1]).powi(2) / s2 - lmax).exp();
                let e0 = (-(y - c[3]).powi(2) / s2 - lmax).exp();
                num += c[0] * e1 - c[2] * e0;
                den += c[4] * e1 + (1.0 - c[4]) * e0;
            }
            let log_den = lmax + log_norm + den.ln();
            (den > 0.0 && log_den >= DENSITY_FLOOR.ln()).then(|| num / den)
        })
        .collect();
    Ok(OracleWeightTable {
        kind,
        grid: grid.to_vec(),
        values,
        m: draws,
        seed,
    })
}

/// Type-7 sample quantile.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn linspace(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points == 1 || lo == hi {
        return vec![lo; points];
    }
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// 201 equally spaced points spanning the 0.5%–99.5% quantiles of `values`.
pub fn default_grid(values: &[f64]) -> Result<Vec<f64>> {
    quantile_grid(values, 0.005, 0.995, 201)
}

pub fn quantile_grid(values: &[f64], lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if values.is_empty() || points == 0 {
        return Err(Error::Argument("grid needs values and points".into()));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(linspace(quantile(&s, lo), quantile(&s, hi), points))
}

impl OracleWeightTable {
    fn supported(&self) -> Vec<(f64, f64)> {
        self.grid
            .iter()
            .zip(&self.values)
            .filter_map(|(g, v)| v.map(|v| (*g, v)))
            .collect()
    }

    /// Fraction of `u` inside the grid's range.
    pub fn coverage(&self, u: &[f64]) -> f64 {
        let lo = self.grid.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        u.iter().filter(|&&v| lo <= v && v <= hi).count() as f64 / u.len().max(1) as f64
    }

    /// Linear interpolation over supported grid points; values beyond the
    /// ends take the nearest endpoint.
    pub fn interpolate(&self, u: &[f64]) -> Result<Vec<f64>> {
        let pts = self.supported();
        if pts.is_empty() {
            return Err(Error::Coverage("oracle table has no supported grid points".into()));
        }
        let mut clamped = 0usize;
        let out = u
            .iter()
            .map(|&v| {
                let j = pts.partition_point(|p| p.0 < v);
                if j == 0 {
                    clamped += usize::from(v < pts[0].0);
                    pts[0].1
                } else if j == pts.len() {
                    clamped += 1;
                    pts[j - 1].1
                } else {
                    let (x0, y0) = pts[j - 1];
                    let (x1, y1) = pts[j];
                    y0 + (y1 - y0) * (v - x0) / (x1 - x0)
                }
            })
            .collect();
        if clamped > 0 {
            warn!(
                "{clamped} of {} points fall outside the oracle grid and were clamped",
                u.len()
            );
        }
        Ok(out)
    }

    /// CSV with columns `u,weight`; unsupported points have an empty weight.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["u", "weight"])?;
        for (g, v) in self.grid.iter().zip(&self.values) {
            w.write_record([g.to_string(), v.map(|v| v.to_string()).unwrap_or_default()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Realized regressand for a table kind under the true nuisances.
fn regressand(sample: &SyntheticSample, kind: WeightKind) -> Result<Vec<f64>> {
    if kind.uses_pseudo_outcome() {
        pseudo_outcomes(sample.data.y(), &sample.pi, &sample.mu0, &sample.mu1)
    } else {
        Ok(sample.data.y().to_vec())
    }
}

const MIN_GRID_COVERAGE: f64 = 0.99;

/// Oracle IPW and AIPW (true nuisances) and oracle MR and AMR (weights from
/// the given tables of kinds w and w*).
pub fn oracle_estimates_with_tables(
    sample: &SyntheticSample,
    w: &OracleWeightTable,
    w_star: &OracleWeightTable,
) -> Result<Vec<EstimateReport>> {
    if w.kind.uses_pseudo_outcome() || !w_star.kind.uses_pseudo_outcome() {
        return Err(Error::Argument(
            "expected an outcome-scale and a pseudo-outcome-scale table".into(),
        ));
    }
    for table in [w, w_star] {
        let cov = table.coverage(&regressand(sample, table.kind)?);
        if cov < MIN_GRID_COVERAGE {
            return Err(Error::Coverage(format!(
                "{:?} grid covers {:.2}% of realized points",
                table.kind,
                100.0 * cov
            )));
        }
    }
    let truth = sample.truth();
    let (ipw, aipw) = estimate_oracle_ipw_aipw(&sample.data, &truth)?;
    let mr = estimate_with_oracle_weights(&sample.data, &truth, Method::MrOracleW, &|u| w.interpolate(u))?;
    let amr = estimate_with_oracle_weights(&sample.data, &truth, Method::AmrOracleW, &|u| w_star.interpolate(u))?;
    Ok(vec![ipw, aipw, mr, amr])
}

/// As [`oracle_estimates_with_tables`], tabulating w and w* over the realized
/// range with `m` integration draws.
pub fn oracle_estimates(
    sample: &SyntheticSample,
    design: &GaussianDesign,
    m: usize,
    seed: u64,
) -> Result<Vec<EstimateReport>> {
    let table = |kind: WeightKind, coord: u64| -> Result<OracleWeightTable> {
        let u = regressand(sample, kind)?;
        let grid = quantile_grid(&u, 0.0, 1.0, 201)?;
        oracle_weight_table(design, kind, None, &grid, m, mix_seed(seed, &[coord]))
    };
    oracle_estimates_with_tables(sample, &table(WeightKind::W, 0)?, &table(WeightKind::WStar, 1)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn npdf(y: f64, m: f64) -> f64 {
        (-(y - m).powi(2) / 2.0).exp() / (2.0 * PI).sqrt()
    }

    fn point_design(pi: f64, mu1: f64, mu0: f64) -> GaussianDesign {
        GaussianDesign {
            law: CovariateLaw::PointMass(vec![0.0]),
            propensity: LinearLogit::constant(pi),
            mu0: Affine::constant(mu0),
            mu1: Affine::constant(mu1),
            sigma: 1.0,
        }
    }

    #[test]
    fn synthetic_shape_and_truth() {
        let cfg = SimulationConfig {
            n: 400,
            p_i: 10,
            ..Default::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        assert_eq!(s.data.p(), 25);
        assert_eq!(s.data.n(), 400);
        assert_eq!(s.theta, 5.0);
        assert_eq!(s.data.covariate_names()[24], "x25");
        let again = generate_synthetic(&cfg).unwrap();
        assert_eq!(s.data, again.data);
    }

    #[test]
    fn synthetic_noise_moments() {
        let cfg = SimulationConfig {
            n: 200_000,
            seed: 42,
            ..Default::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        let a = s.data.a();
        let e: Vec<f64> = (0..cfg.n).map(|i| s.data.y()[i] - 5.0 * a[i] - s.mu0[i]).collect();
        let mean = e.iter().sum::<f64>() / cfg.n as f64;
        let sd = (e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (cfg.n - 1) as f64).sqrt();
        assert!(mean.abs() < 0.02 && (sd - 1.0).abs() < 0.02, "{mean} {sd}");
    }

    #[test]
    fn synthetic_mu0_forms() {
        let cfg = SimulationConfig {
            n: 5,
            p_i: 1,
            p_c: 1,
            p_o: 1,
            p_s: 1,
            mu0: Mu0Form::Linear,
            ..Default::default()
        };
        let s = generate_synthetic(&cfg).unwrap();
        for i in 0..5 {
            let x = s.data.x();
            assert!((s.mu0[i] - x[(i, 1)] - x[(i, 2)]).abs() < 1e-12);
            assert!((s.pi[i] - expit(x[(i, 0)] + 0.5 * x[(i, 1)])).abs() < 1e-12);
        }
        let z = generate_synthetic(&SimulationConfig {
            mu0: Mu0Form::Zero,
            ..cfg
        })
        .unwrap();
        assert!(z.mu0.iter().all(|&m| m == 0.0));
        assert!(generate_synthetic(&SimulationConfig {
            noise_sd: 0.0,
            ..Default::default()
        })
        .is_err());
    }

    #[test]
    fn gaussian_example_truth() {
        let s = generate_gaussian_example(&point_design(0.5, 1.0, -1.0), 50, 1).unwrap();
        assert_eq!(s.theta, 2.0);
        let same = GaussianDesign {
            law: CovariateLaw::StandardNormal(2),
            propensity: LinearLogit {
                intercept: 0.0,
                coefs: vec![1.0],
            },
            mu0: Affine {
                intercept: 1.0,
                coefs: vec![0.0, 1.0],
            },
            mu1: Affine {
                intercept: 1.0,
                coefs: vec![0.0, 1.0],
            },
            sigma: 1.0,
        };
        assert_eq!(same.true_theta(), 0.0);
        let slope = GaussianDesign {
            mu1: Affine {
                intercept: 1.0,
                coefs: vec![1.0, 1.0],
            },
            ..same
        };
        assert!(slope.true_theta().abs() < 0.005);
    }

    #[test]
    fn point_mass_closed_form_weights() {
        let t = oracle_weight_table(&point_design(0.5, 1.0, -1.0), WeightKind::W, None, &[0.0], 10_000, 0).unwrap();
        assert!(t.values[0].unwrap().abs() < 1e-15);
        let t = oracle_weight_table(&point_design(0.5, 2.0, 0.0), WeightKind::W, None, &[2.0], 10_000, 0).unwrap();
        let hand = (npdf(2.0, 2.0) - npdf(2.0, 0.0)) / (0.5 * (npdf(2.0, 2.0) + npdf(2.0, 0.0)));
        assert!((t.values[0].unwrap() - hand).abs() < 1e-12);
        assert!((hand - 1.5232).abs() < 1e-3);
    }

    #[test]
    fn zero_effect_weights_vanish() {
        let design = GaussianDesign {
            law: CovariateLaw::StandardNormal(3),
            propensity: LinearLogit {
                intercept: 0.2,
                coefs: vec![1.0, -0.5],
            },
            mu0: Affine {
                intercept: 0.0,
                coefs: vec![0.0, 1.0, 1.0],
            },
            mu1: Affine {
                intercept: 0.0,
                coefs: vec![0.0, 1.0, 1.0],
            },
            sigma: 1.0,
        };
        let grid = linspace(-5.0, 5.0, 21);
        let t = oracle_weight_table(&design, WeightKind::WStar, None, &grid, 10_000, 3).unwrap();
        assert!(t.values.iter().all(|v| *v == Some(0.0)));
    }

    #[test]
    fn plug_in_kinds_reduce_to_true_kinds() {
        let design = GaussianDesign {
            law: CovariateLaw::StandardNormal(2),
            propensity: LinearLogit {
                intercept: 0.0,
                coefs: vec![0.7, 0.3],
            },
            mu0: Affine {
                intercept: 0.0,
                coefs: vec![1.0],
            },
            mu1: Affine {
                intercept: 2.0,
                coefs: vec![1.0, 0.5],
            },
            sigma: 1.0,
        };
        let grid = linspace(-3.0, 5.0, 17);
        let ov = design.as_override();
        for (plain, plug) in [(WeightKind::W, WeightKind::W0), (WeightKind::WStar, WeightKind::WStar0)] {
            let a = oracle_weight_table(&design, plain, None, &grid, 20_000, 5).unwrap();
            let b = oracle_weight_table(&design, plug, Some(&ov), &grid, 20_000, 5).unwrap();
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x.unwrap() - y.unwrap()).abs() < 1e-10);
            }
        }
        assert!(oracle_weight_table(&design, WeightKind::W0, None, &grid, 20_000, 5).is_err());
        assert!(oracle_weight_table(&design, WeightKind::W, None, &grid, 100, 5).is_err());
    }

    #[test]
    fn out_of_support_points_are_reported() {
        let design = GaussianDesign {
            sigma: 0.01,
            ..point_design(0.5, 1.0, 0.0)
        };
        let t = oracle_weight_table(&design, WeightKind::W, None, &[0.98, 0.5], 10_000, 0).unwrap();
        assert!(t.values[0].is_some());
        assert!(t.values[1].is_none());
    }

    #[test]
    fn table_is_deterministic_and_exports() {
        let design = GaussianDesign {
            law: CovariateLaw::StandardNormal(1),
            propensity: LinearLogit {
                intercept: 0.0,
                coefs: vec![1.0],
            },
            mu0: Affine::constant(0.0),
            mu1: Affine::constant(1.0),
            sigma: 1.0,
        };
        let grid = linspace(-2.0, 3.0, 6);
        let a = oracle_weight_table(&design, WeightKind::W, None, &grid, 10_000, 9).unwrap();
        assert_eq!(
            a,
            oracle_weight_table(&design, WeightKind::W, None, &grid, 10_000, 9).unwrap()
        );
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("u,weight\n-2,"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn interpolation_and_clamping() {
        let t = OracleWeightTable {
            kind: WeightKind::W,
            grid: vec![0.0, 1.0, 2.0, 3.0],
            values: vec![Some(0.0), Some(2.0), None, Some(8.0)],
            m: 1,
            seed: 0,
        };
        assert_eq!(t.interpolate(&[-1.0, 0.5, 2.0, 9.0]).unwrap(), vec![0.0, 1.0, 5.0, 8.0]);
        assert_eq!(t.coverage(&[-1.0, 0.5, 2.0, 9.0]), 0.5);
    }

    #[test]
    fn default_grid_spans_central_quantiles() {
        let v: Vec<f64> = (0..=1000).map(|i| i as f64).collect();
        let g = default_grid(&v).unwrap();
        assert_eq!(g.len(), 201);
        assert!((g[0] - 5.0).abs() < 1e-9 && (g[200] - 995.0).abs() < 1e-9);
    }

    /// With no confounding and constant outcome means, w(y) depends on the
    /// instrument law only through E[π]; two logit slopes with E[π] = 1/2
    /// give the same table.
    #[test]
    fn instrument_strength_does_not_move_mr_weights() {
        let design = |slope: f64| GaussianDesign {
            law: CovariateLaw::StandardNormal(1),
            propensity: LinearLogit {
                intercept: 0.0,
                coefs: vec![slope],
            },
            mu0: Affine::constant(0.0),
            mu1: Affine::constant(2.0),
            sigma: 1.0,
        };
        let grid = linspace(-2.0, 4.0, 61);
        let a = oracle_weight_table(&design(1.0), WeightKind::W, None, &grid, 100_000, 1).unwrap();
        let b = oracle_weight_table(&design(2.0), WeightKind::W, None, &grid, 100_000, 2).unwrap();
        let sup = a
            .values
            .iter()
            .zip(&b.values)
            .map(|(x, y)| (x.unwrap() - y.unwrap()).abs())
            .fold(0.0, f64::max);
        assert!(sup <= 0.02, "{sup}");
    }

    #[test]
    fn oracle_estimates_examples() {
        let zero = GaussianDesign {
            law: CovariateLaw::StandardNormal(2),
            propensity: LinearLogit {
                intercept: 0.0,
                coefs: vec![1.0],
            },
            mu0: Affine {
                intercept: 0.0,
                coefs: vec![0.0, 1.0],
            },
            mu1: Affine {
                intercept: 0.0,
                coefs: vec![0.0, 1.0],
            },
            sigma: 1.0,
        };
        let s = generate_gaussian_example(&zero, 300, 4).unwrap();
        let r = oracle_estimates(&s, &zero, 10_000, 0).unwrap();
        assert_eq!(r[3].method, Method::AmrOracleW);
        assert_eq!(r[3].theta_hat, 0.0);

        let quiet = GaussianDesign {
            sigma: 1e-6,
            mu1: Affine {
                intercept: 3.0,
                coefs: vec![0.0, 1.0],
            },
            ..zero.clone()
        };
        let s = generate_gaussian_example(&quiet, 300, 5).unwrap();
        let (_, aipw) = estimate_oracle_ipw_aipw(&s.data, &s.truth()).unwrap();
        assert!((aipw.theta_hat - s.theta).abs() < 1e-3, "{}", aipw.theta_hat);
    }

    #[test]
    fn oracle_amr_recovers_point_mass_effect() {
        let design = point_design(0.5, 2.0, 0.0);
        let s = generate_gaussian_example(&design, 10_000, 6).unwrap();
        let r = oracle_estimates(&s, &design, 10_000, 0).unwrap();
        assert!((r[3].theta_hat - 2.0).abs() <= 0.1, "{}", r[3].theta_hat);
        assert!((r[2].theta_hat - 2.0).abs() <= 0.1, "{}", r[2].theta_hat);
    }

    #[test]
    fn coverage_shortfall_is_an_error() {
        let design = point_design(0.5, 2.0, 0.0);
        let s = generate_gaussian_example(&design, 500, 7).unwrap();
        let narrow = oracle_weight_table(&design, WeightKind::W, None, &linspace(0.0, 0.5, 5), 10_000, 0).unwrap();
        let star = oracle_weight_table(&design, WeightKind::WStar, None, &linspace(-9.0, 9.0, 50), 10_000, 0).unwrap();
        assert!(matches!(
            oracle_estimates_with_tables(&s, &narrow, &star),
            Err(Error::Coverage(_))
        ));
    }
}
