//! Balance and overlap diagnostics: per-covariate imbalance under a weight
//! vector, weight summaries, and propensity histograms.

use std::io::Write;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimateReport;

/// Exponent applied to s = Pₙ[bX]² / Pₙ[X²].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImbalanceConvention {
    /// s^(−1/2); zero weights give an infinite metric.
    Inverse,
    /// s^(+1/2); zero weights give zero imbalance.
    #[default]
    Corrected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImbalanceProfile {
    /// One entry per covariate; `None` for an all-zero column.
    pub values: Vec<Option<f64>>,
    pub label: String,
    pub convention: ImbalanceConvention,
}

impl ImbalanceProfile {
    /// Mean over defined entries.
    pub fn mean(&self) -> f64 {
        let defined: Vec<f64> = self.values.iter().flatten().copied().collect();
        defined.iter().sum::<f64>() / defined.len() as f64
    }

    pub fn flagged(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&j| self.values[j].is_none()).collect()
    }
}

pub fn imbalance_profile(
    x: &DMatrix<f64>,
    b: &[f64],
    convention: ImbalanceConvention,
    label: &str,
) -> Result<ImbalanceProfile> {
    let n = x.nrows();
    if b.len() != n {
        return Err(Error::Argument(format!("{} weights for {n} rows", b.len())));
    }
    if n == 0 {
        return Err(Error::Argument("imbalance needs at least one row".into()));
    }
    let values = x
        .column_iter()
        .map(|col| {
            let second = col.iter().map(|v| v * v).sum::<f64>() / n as f64;
            if second == 0.0 {
                return None;
            }
            let first = col.iter().zip(b).map(|(x, w)| x * w).sum::<f64>() / n as f64;
            let s = first * first / second;
            Some(match convention {
                ImbalanceConvention::Inverse => s.powf(-0.5),
                ImbalanceConvention::Corrected => s.sqrt(),
            })
        })
        .collect();
    Ok(ImbalanceProfile {
        values,
        label: label.to_string(),
        convention,
    })
}

/// Type-7 quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub const SUMMARY_QUANTILES: [f64; 5] = [0.01, 0.05, 0.5, 0.95, 0.99];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub mean_abs: f64,
    /// At [`SUMMARY_QUANTILES`].
    pub quantiles: [f64; 5],
}

pub fn summarize_weights(w: &[f64]) -> Result<WeightSummary> {
    if w.is_empty() {
        return Err(Error::Argument("no weights to summarize".into()));
    }
    let mut s = w.to_vec();
    s.sort_by(f64::total_cmp);
    let n = w.len() as f64;
    Ok(WeightSummary {
        min: s[0],
        max: s[s.len() - 1],
        mean: w.iter().sum::<f64>() / n,
        mean_abs: w.iter().map(|v| v.abs()).sum::<f64>() / n,
        quantiles: SUMMARY_QUANTILES.map(|q| quantile(&s, q)),
    })
}

pub fn weight_summary(report: &EstimateReport) -> Result<WeightSummary> {
    let w = report
        .weights
        .as_ref()
        .ok_or_else(|| Error::State(format!("{} report carries no weights", report.method)))?;
    summarize_weights(w)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` equally spaced edges on [0, 1].
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub const DEFAULT_BINS: usize = 50;

/// Equal-width histogram on [0, 1]; bin i is [edgeᵢ, edgeᵢ₊₁).
pub fn propensity_histogram(pi_hat: &[f64], bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::Argument(format!("need at least 2 bins, got {bins}")));
    }
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let mut counts = vec![0usize; bins];
    for (row, &p) in pi_hat.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain {
                row,
                message: format!("propensity {p} outside (0, 1)"),
            });
        }
        let mut k = ((p * bins as f64).floor() as usize).min(bins - 1);
        while k > 0 && p < edges[k] {
            k -= 1;
        }
        while k + 1 < bins && p >= edges[k + 1] {
            k += 1;
        }
        counts[k] += 1;
    }
    Ok(Histogram { edges, counts })
}

impl Histogram {
    /// Columns `lower,upper,count`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["lower", "upper", "count"])?;
        for (i, c) in self.counts.iter().enumerate() {
            w.write_record([self.edges[i].to_string(), self.edges[i + 1].to_string(), c.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Columns `covariate,<label>...`, one row per covariate; undefined entries
/// are left empty.
pub fn write_imbalance_csv<W: Write>(writer: W, names: &[String], profiles: &[ImbalanceProfile]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["covariate".to_string()];
    header.extend(profiles.iter().map(|p| p.label.clone()));
    w.write_record(&header)?;
    for (j, name) in names.iter().enumerate() {
        let mut rec = vec![name.clone()];
        for p in profiles {
            rec.push(
                p.values
                    .get(j)
                    .copied()
                    .flatten()
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Columns `method,min,max,mean,mean_abs,q01,q05,q50,q95,q99`.
pub fn write_weight_summaries_csv<W: Write>(writer: W, rows: &[(String, WeightSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "method", "min", "max", "mean", "mean_abs", "q01", "q05", "q50", "q95", "q99",
    ])?;
    for (label, s) in rows {
        let mut rec = vec![label.clone()];
        rec.extend([s.min, s.max, s.mean, s.mean_abs].iter().map(|v| v.to_string()));
        rec.extend(s.quantiles.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
