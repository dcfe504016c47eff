//! Monte Carlo replication sweeps over (n, p_I) cells with bias, MAE, RMSE
//! and interval coverage summaries.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{suite_from_nuisances, CrossFitNuisances, EstimatorConfig, Method};
use crate::inference::summarize;
use crate::nuisance::{OutcomeConfig, PropensityConfig};
use crate::rng::mix_seed;
use crate::synth::{generate_synthetic, SimulationConfig, SyntheticSample};
use crate::weightfit::CrossValidationPlan;

/// Label of the AMR row that uses the efficient interval.
pub const AMR_EFFICIENT: &str = "AMR-efficient";
/// Share of failed replications above which a cell is flagged.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n: Vec<usize>,
    pub p_i: Vec<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n: vec![400],
            p_i: vec![5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub reps: usize,
    pub grid: GridConfig,
    pub alpha: f64,
    pub estimators: Vec<Method>,
    pub master_seed: u64,
    pub workers: usize,
    /// Record wall time per cell. Off by default so exports are reproducible.
    pub timing: bool,
    /// Data-generating template; `n`, `p_i` and `seed` are set per replication.
    pub simulation: SimulationConfig,
    pub folds: usize,
    pub propensity: PropensityConfig,
    pub outcome: OutcomeConfig,
    pub weights: CrossValidationPlan,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let est = EstimatorConfig::default();
        Self {
            reps: 200,
            grid: GridConfig::default(),
            alpha: 0.05,
            estimators: vec![Method::Ipw, Method::Aipw, Method::Mr, Method::Amr],
            master_seed: 0,
            workers: 1,
            timing: false,
            simulation: SimulationConfig::default(),
            folds: est.folds,
            propensity: est.propensity,
            outcome: est.outcome,
            weights: est.weights,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::Config("reps must be >= 1".into()));
        }
        if self.grid.n.is_empty() || self.grid.p_i.is_empty() {
            return Err(Error::Config("grid.n and grid.p_i must be non-empty".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config("alpha must lie in (0, 1)".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("estimators must be non-empty".into()));
        }
        if let Some(m) = self
            .estimators
            .iter()
            .find(|m| !matches!(m, Method::Ipw | Method::Aipw | Method::Mr | Method::Amr))
        {
            return Err(Error::Config(format!(
                "estimator {m} is not available in simulation sweeps"
            )));
        }
        self.estimator_config(0).validate()
    }

    /// Cells in grid order: n outer, p_I inner.
    pub fn cells(&self) -> Vec<(usize, usize)> {
        self.grid
            .n
            .iter()
            .flat_map(|&n| self.grid.p_i.iter().map(move |&p| (n, p)))
            .collect()
    }

    pub fn estimator_config(&self, seed: u64) -> EstimatorConfig {
        EstimatorConfig {
            folds: self.folds,
            seed,
            propensity: self.propensity.clone(),
            outcome: self.outcome.clone(),
            weights: self.weights.clone(),
        }
    }
}

/// One estimator's result on one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationOutcome {
    pub label: String,
    pub theta_hat: f64,
    pub interval: Option<(f64, f64)>,
}

/// Something that turns a simulated dataset into labelled estimates.
pub trait ReplicationEstimator: Sync {
    /// Labels produced on success, used to attribute failures.
    fn labels(&self) -> Vec<String>;
    fn run(&self, sample: &SyntheticSample, seed: u64, alpha: f64) -> Result<Vec<ReplicationOutcome>>;
}

/// The shared-nuisance estimator suite. AMR reports the conservative
/// interval, with an extra `AMR-efficient` row for the efficient one.
#[derive(Debug, Clone)]
pub struct SuiteEstimator {
    pub experiment: ExperimentConfig,
}

impl ReplicationEstimator for SuiteEstimator {
    fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = self.experiment.estimators.iter().map(|m| m.tag().to_string()).collect();
        if self.experiment.estimators.contains(&Method::Amr) {
            out.push(AMR_EFFICIENT.to_string());
        }
        out
    }

    fn run(&self, sample: &SyntheticSample, seed: u64, alpha: f64) -> Result<Vec<ReplicationOutcome>> {
        let cfg = self.experiment.estimator_config(seed);
        let cf = CrossFitNuisances::fit(&sample.data, &cfg)?;
        let reports = suite_from_nuisances(&sample.data, &cf, &cfg.weights, cfg.fingerprint())?;
        let mut out = Vec::new();
        for method in &self.experiment.estimators {
            let r = reports
                .iter()
                .find(|r| r.method == *method)
                .ok_or_else(|| Error::State(format!("suite produced no {method} report")))?;
            if !r.theta_hat.is_finite() {
                return Err(Error::Fit(format!("{method} estimate is not finite")));
            }
            let inf = summarize(r, alpha)?;
            let ci = inf.interval();
            out.push(ReplicationOutcome {
                label: method.tag().to_string(),
                theta_hat: r.theta_hat,
                interval: Some((ci.lower, ci.upper)),
            });
            if *method == Method::Amr {
                out.push(ReplicationOutcome {
                    label: AMR_EFFICIENT.to_string(),
                    theta_hat: r.theta_hat,
                    interval: Some((inf.efficient.lower, inf.efficient.upper)),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub cell: usize,
    pub n: usize,
    pub p_i: usize,
    pub rep: usize,
    pub theta: f64,
    pub outcome: std::result::Result<Vec<ReplicationOutcome>, String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFlag {
    /// No replication produced an interval, or all intervals have zero width.
    CoverageUndefined,
    InfiniteLength,
    FailureRate,
    NoSuccesses,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub n: usize,
    pub p_i: usize,
    pub method: String,
    pub bias: f64,
    pub mae: f64,
    pub rmse: f64,
    pub coverage: Option<f64>,
    pub ci_length: Option<f64>,
    /// Successful replications.
    pub reps: usize,
    pub failures: usize,
    pub seconds: Option<f64>,
    pub flags: Vec<CellFlag>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn flagged(&self) -> Vec<&MetricsRow> {
        self.rows.iter().filter(|r| !r.flags.is_empty()).collect()
    }

    pub fn get(&self, n: usize, p_i: usize, method: &str) -> Option<&MetricsRow> {
        self.rows
            .iter()
            .find(|r| r.n == n && r.p_i == p_i && r.method == method)
    }
}

#[derive(Debug, Clone)]
pub struct MonteCarloRun {
    pub table: MetricsTable,
    pub records: Vec<ReplicationRecord>,
}

fn replication_seed(master: u64, cell: usize, rep: usize, stream: u64) -> u64 {
    mix_seed(master, &[cell as u64, rep as u64, stream])
}

/// Runs every (cell, replication) on a pool of `cfg.workers` threads.
/// Results do not depend on the worker count.
pub fn run_replications(cfg: &ExperimentConfig, est: &dyn ReplicationEstimator) -> Result<Vec<ReplicationRecord>> {
    cfg.validate()?;
    let items: Vec<(usize, usize, usize, usize)> = cfg
        .cells()
        .into_iter()
        .enumerate()
        .flat_map(|(c, (n, p))| (0..cfg.reps).map(move |r| (c, n, p, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let job = |&(cell, n, p_i, rep): &(usize, usize, usize, usize)| -> Result<ReplicationRecord> {
        let start = Instant::now();
        let sim = SimulationConfig {
            n,
            p_i,
            seed: replication_seed(cfg.master_seed, cell, rep, 0),
            ..cfg.simulation.clone()
        };
        let sample = generate_synthetic(&sim)?;
        let outcome = est
            .run(&sample, replication_seed(cfg.master_seed, cell, rep, 1), cfg.alpha)
            .map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            log::debug!("cell {cell} replication {rep} failed: {e}");
        }
        Ok(ReplicationRecord {
            cell,
            n,
            p_i,
            rep,
            theta: sample.theta,
            outcome,
            seconds: start.elapsed().as_secs_f64(),
        })
    };
    pool.install(|| items.par_iter().map(job).collect())
}

fn aggregate(n: usize, p_i: usize, method: &str, records: &[&ReplicationRecord], timing: bool) -> MetricsRow {
    let mut errors = Vec::new();
    let mut hits = 0usize;
    let mut lengths = Vec::new();
    let mut failures = 0usize;
    for rec in records {
        let found = rec
            .outcome
            .as_ref()
            .ok()
            .and_then(|outs| outs.iter().find(|o| o.label == method));
        match found {
            Some(o) => {
                errors.push(o.theta_hat - rec.theta);
                if let Some((lo, hi)) = o.interval {
                    hits += usize::from(lo <= rec.theta && rec.theta <= hi);
                    lengths.push(hi - lo);
                }
            }
            None => failures += 1,
        }
    }
    let k = errors.len() as f64;
    let mut flags = Vec::new();
    let (bias, mae, rmse) = if errors.is_empty() {
        flags.push(CellFlag::NoSuccesses);
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (
            errors.iter().sum::<f64>() / k,
            errors.iter().map(|e| e.abs()).sum::<f64>() / k,
            (errors.iter().map(|e| e * e).sum::<f64>() / k).sqrt(),
        )
    };
    let (coverage, ci_length) = if lengths.is_empty() {
        (None, None)
    } else {
        (
            Some(hits as f64 / lengths.len() as f64),
            Some(lengths.iter().sum::<f64>() / lengths.len() as f64),
        )
    };
    if lengths.is_empty() || lengths.iter().all(|&l| l == 0.0) {
        flags.push(CellFlag::CoverageUndefined);
    }
    if ci_length.is_some_and(|l| !l.is_finite()) {
        flags.push(CellFlag::InfiniteLength);
    }
    if failures as f64 > MAX_FAILURE_RATE * records.len() as f64 {
        flags.push(CellFlag::FailureRate);
    }
    MetricsRow {
        n,
        p_i,
        method: method.to_string(),
        bias,
        mae,
        rmse,
        coverage,
        ci_length,
        reps: errors.len(),
        failures,
        seconds: timing.then(|| records.iter().map(|r| r.seconds).sum()),
        flags,
    }
}

/// Per-cell, per-label metrics; rows ordered by (n, p_I, label).
pub fn summarize_records(records: &[ReplicationRecord], labels: &[String], timing: bool) -> MetricsTable {
    let mut keys: Vec<(usize, usize, usize)> = records.iter().map(|r| (r.n, r.p_i, r.cell)).collect();
    keys.sort_unstable();
    keys.dedup();
    let mut labels = labels.to_vec();
    labels.sort();
    labels.dedup();
    let mut rows = Vec::new();
    for (n, p_i, cell) in keys {
        let recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.cell == cell).collect();
        for label in &labels {
            rows.push(aggregate(n, p_i, label, &recs, timing));
        }
    }
    MetricsTable { rows }
}

pub fn run_monte_carlo(cfg: &ExperimentConfig, est: &dyn ReplicationEstimator) -> Result<MonteCarloRun> {
    let records = run_replications(cfg, est)?;
    let table = summarize_records(&records, &est.labels(), cfg.timing);
    Ok(MonteCarloRun { table, records })
}

/// Suite run at level `alpha`, reporting both AMR intervals.
pub fn coverage_experiment(cfg: &ExperimentConfig, alpha: f64) -> Result<MonteCarloRun> {
    for needed in [Method::Amr, Method::Aipw] {
        if !cfg.estimators.contains(&needed) {
            return Err(Error::Config(format!(
                "coverage experiment needs {needed} in the estimator list"
            )));
        }
    }
    let cfg = ExperimentConfig { alpha, ..cfg.clone() };
    run_monte_carlo(
        &cfg,
        &SuiteEstimator {
            experiment: cfg.clone(),
        },
    )
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub const RESULTS_HEADER: [&str; 11] = [
    "n",
    "p_i",
    "method",
    "bias",
    "mae",
    "rmse",
    "coverage",
    "ci_length",
    "reps",
    "failures",
    "seconds",
];

pub fn write_results<W: Write>(table: &MetricsTable, writer: W) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::Argument("metrics table is empty".into()));
    }
    let mut rows: Vec<&MetricsRow> = table.rows.iter().collect();
    rows.sort_by(|a, b| (a.n, a.p_i, &a.method).cmp(&(b.n, b.p_i, &b.method)));
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RESULTS_HEADER)?;
    for r in rows {
        w.write_record([
            r.n.to_string(),
            r.p_i.to_string(),
            r.method.clone(),
            r.bias.to_string(),
            r.mae.to_string(),
            r.rmse.to_string(),
            fmt_opt(r.coverage),
            fmt_opt(r.ci_length),
            r.reps.to_string(),
            r.failures.to_string(),
            fmt_opt(r.seconds),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn export_results(table: &MetricsTable, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_results(table, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}
