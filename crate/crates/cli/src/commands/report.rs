use std::path::Path;

use cabingaze_core::metrics::EvalReport;

use crate::commands::eval::write_report;
use crate::error::CliError;

pub fn parse_report(text: &str) -> Result<EvalReport, CliError> {
    let r: EvalReport = serde_json::from_str(text).map_err(|e| CliError::MalformedReport(e.to_string()))?;
    for (name, b) in [("gaze_bins", Some(&r.gaze_bins)), ("head_bins", r.head_bins.as_ref())] {
        // One bin per edge interval plus the overflow bin.
        let Some(b) = b else { continue };
        if b.counts.len() != b.edges.len() || b.mean_errors.len() != b.edges.len() {
            return Err(CliError::MalformedReport(format!("{name}: counts/means do not match the edges")));
        }
    }
    Ok(r)
}

/// Writes `eval.txt` and the SVG charts for an existing `eval.json`.
pub fn run(report: &Path, out: &Path) -> Result<String, CliError> {
    let text = std::fs::read_to_string(report).map_err(|e| CliError::io(report, e))?;
    let r = parse_report(&text).map_err(|e| match e {
        CliError::MalformedReport(m) => CliError::MalformedReport(format!("{}: {m}", report.display())),
        other => other,
    })?;
    write_report(&r, out)?;
    Ok(r.to_table())
}
