//! CSV emission for replicate-level outputs.
//!
//! The formats are stable, diff-able and deterministic: floats print in
//! Rust's shortest round-trip form, rows follow replicate order, and equal
//! seeds produce byte-identical files regardless of worker count.
//!
//! `replicates.csv`: `replicate_id,estimator,tau,cost_units,failed,h_0,...`
//! (failed rows leave `tau` and the value columns blank).
//! `tau_samples.csv`: `replicate_id,tau,outcome`.
//! `ci_series.csv`: `coord,mean,sd,ci_low,ci_high`.

use std::io::Write;

use crate::error::Result;
use crate::rhee_glynn::{MeetingTimeSurvey, ReplicateSummary, TauOutcome, UnbiasedReport};

/// Write per-replicate rows with one column per test-function coordinate.
pub fn write_replicates_csv<W: Write>(
    out: &mut W,
    estimator: &str,
    reports: &[UnbiasedReport],
    h_dim: usize,
) -> Result<()> {
    write!(out, "replicate_id,estimator,tau,cost_units,failed")?;
    for i in 0..h_dim {
        write!(out, ",h_{i}")?;
    }
    writeln!(out)?;
    for (id, report) in reports.iter().enumerate() {
        write!(out, "{id},{estimator}")?;
        match report.tau {
            Some(tau) => write!(out, ",{tau}")?,
            None => write!(out, ",")?,
        }
        write!(out, ",{}", report.cost_units)?;
        match &report.failed {
            Some(reason) => write!(out, ",{reason}")?,
            None => write!(out, ",")?,
        }
        for i in 0..h_dim {
            match report.value.get(i) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Write meeting-time samples from a survey.
pub fn write_tau_samples_csv<W: Write>(out: &mut W, survey: &MeetingTimeSurvey) -> Result<()> {
    writeln!(out, "replicate_id,tau,outcome")?;
    for (id, outcome) in survey.outcomes.iter().enumerate() {
        match outcome {
            TauOutcome::Met(tau) => writeln!(out, "{id},{tau},met")?,
            TauOutcome::Censored { .. } => writeln!(out, "{id},,censored")?,
            TauOutcome::Failed(reason) => writeln!(out, "{id},,failed:{reason}")?,
        }
    }
    Ok(())
}

/// Write the per-coordinate summary series (one row per test-function
/// coordinate: the format behind error-bar plots).
pub fn write_ci_series_csv<W: Write>(out: &mut W, summary: &ReplicateSummary) -> Result<()> {
    writeln!(out, "coord,mean,sd,ci_low,ci_high")?;
    for (i, mean) in summary.mean.iter().enumerate() {
        write!(out, "{i},{mean}")?;
        for field in [&summary.sd, &summary.ci_low, &summary.ci_high] {
            match field.as_ref().and_then(|v| v.get(i)) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Render any of the CSV writers to a string (handy for tests and the CLI).
pub fn to_csv_string<F>(write: F) -> Result<String>
where
    F: FnOnce(&mut Vec<u8>) -> Result<()>,
{
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(String::from_utf8(buf).expect("CSV writers emit UTF-8"))
}
