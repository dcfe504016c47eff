//! Influence-function variances and Wald intervals, including the
//! conservative AMR interval that borrows the AIPW-style variance.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimateReport;

/// Inverse standard-normal CDF (Wichura's AS241, relative error ~1e-16).
#[allow(clippy::inconsistent_digit_grouping, clippy::excessive_precision)]
pub fn normal_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2509.080_928_730_122_7 * r + 33430.575_583_588_128) * r + 67265.770_927_008_7) * r
                + 45921.953_931_549_87)
                * r
                + 13731.693_765_509_461)
                * r
                + 1971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5226.495_278_852_545 * r + 28729.085_735_721_943) * r + 39307.895_800_092_71) * r
                + 21213.794_301_586_597)
                * r
                + 5394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_6) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r + 0.001_242_660_947_388_078_4) * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_9)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Pₙ(cᵢ − θ̂)², divisor n.
pub fn influence_variance(contributions: &[f64], theta_hat: f64) -> Result<f64> {
    if contributions.len() < 2 {
        return Err(Error::Argument("variance needs at least two contributions".into()));
    }
    Ok(contributions.iter().map(|c| (c - theta_hat).powi(2)).sum::<f64>() / contributions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntervalKind {
    Efficient,
    Conservative,
}

impl fmt::Display for IntervalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            IntervalKind::Efficient => "efficient",
            IntervalKind::Conservative => "conservative",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage 1 − α.
    pub level: f64,
    pub kind: IntervalKind,
}

impl ConfidenceInterval {
    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, theta: f64) -> bool {
        self.lower <= theta && theta <= self.upper
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// θ̂ ± z₁₋α/₂ σ̂/√n.
pub fn wald_interval(theta_hat: f64, sigma_hat: f64, n: usize, alpha: f64) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    if n < 2 {
        return Err(Error::Argument("interval needs n >= 2".into()));
    }
    if sigma_hat.is_nan() || sigma_hat < 0.0 {
        return Err(Error::Argument(format!("standard error must be >= 0, got {sigma_hat}")));
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * sigma_hat / (n as f64).sqrt();
    Ok(ConfidenceInterval {
        lower: theta_hat - half,
        upper: theta_hat + half,
        level: 1.0 - alpha,
        kind: IntervalKind::Efficient,
    })
}

/// Interval from the report's own influence-function variance.
pub fn efficient_interval(report: &EstimateReport, alpha: f64) -> Result<ConfidenceInterval> {
    let var = influence_variance(&report.contributions, report.theta_hat)?;
    wald_interval(report.theta_hat, var.sqrt(), report.n(), alpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservativeInterval {
    pub interval: ConfidenceInterval,
    /// σ̂′² = Pₙ(ĥŶ* − θ̂_AMR)².
    pub variance_conservative: f64,
    /// σ̂²_AMR.
    pub variance_efficient: f64,
    /// σ̂′² − σ̂²_AMR.
    pub delta_hat: f64,
}

/// AMR-centered interval with the AIPW-style variance about θ̂_AMR.
pub fn conservative_interval(report: &EstimateReport, alpha: f64) -> Result<ConservativeInterval> {
    let aipw = report
        .aipw_contributions
        .as_ref()
        .ok_or_else(|| Error::State(format!("{} report carries no AIPW-style contributions", report.method)))?;
    let var_c = influence_variance(aipw, report.theta_hat)?;
    let var_e = influence_variance(&report.contributions, report.theta_hat)?;
    let mut interval = wald_interval(report.theta_hat, var_c.sqrt(), report.n(), alpha)?;
    interval.kind = IntervalKind::Conservative;
    Ok(ConservativeInterval {
        interval,
        variance_conservative: var_c,
        variance_efficient: var_e,
        delta_hat: var_c - var_e,
    })
}

/// Everything the report writers emit for one estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceSummary {
    pub var_efficient: f64,
    pub efficient: ConfidenceInterval,
    pub conservative: Option<ConservativeInterval>,
}

impl InferenceSummary {
    /// The headline variance: conservative when available.
    pub fn var_hat(&self) -> f64 {
        self.conservative
            .map(|c| c.variance_conservative)
            .unwrap_or(self.var_efficient)
    }

    pub fn interval(&self) -> ConfidenceInterval {
        self.conservative.map(|c| c.interval).unwrap_or(self.efficient)
    }
}

pub fn summarize(report: &EstimateReport, alpha: f64) -> Result<InferenceSummary> {
    let var_efficient = influence_variance(&report.contributions, report.theta_hat)?;
    Ok(InferenceSummary {
        var_efficient,
        efficient: wald_interval(report.theta_hat, var_efficient.sqrt(), report.n(), alpha)?,
        conservative: match report.aipw_contributions {
            Some(_) => Some(conservative_interval(report, alpha)?),
            None => None,
        },
    })
}
