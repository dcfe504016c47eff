use std::io::Write;

use anyhow::Result;

use amr_core::estimators::EstimateReport;
use amr_core::inference::summarize;

pub const REPORT_HEADER: [&str; 15] = [
    "method",
    "theta_hat",
    "n",
    "K",
    "var_hat",
    "ci_low",
    "ci_high",
    "fingerprint",
    "var_efficient",
    "var_conservative",
    "ci_eff_low",
    "ci_eff_high",
    "ci_cons_low",
    "ci_cons_high",
    "delta_hat",
];

/// One row per report. Conservative columns are empty when the estimator
/// has no conservative interval.
pub fn write_reports<W: Write>(writer: W, reports: &[EstimateReport], alpha: f64) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(REPORT_HEADER)?;
    for r in reports {
        let s = summarize(r, alpha)?;
        let ci = s.interval();
        let cons = |f: &dyn Fn(&amr_core::inference::ConservativeInterval) -> f64| {
            s.conservative.as_ref().map(|c| f(c).to_string()).unwrap_or_default()
        };
        w.write_record([
            r.method.tag().to_string(),
            r.theta_hat.to_string(),
            r.n().to_string(),
            r.folds.to_string(),
            s.var_hat().to_string(),
            ci.lower.to_string(),
            ci.upper.to_string(),
            r.fingerprint.clone(),
            s.var_efficient.to_string(),
            cons(&|c| c.variance_conservative),
            s.efficient.lower.to_string(),
            s.efficient.upper.to_string(),
            cons(&|c| c.interval.lower),
            cons(&|c| c.interval.upper),
            cons(&|c| c.delta_hat),
        ])?;
    }
    w.flush()?;
    Ok(())
}
