use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{DiagnoseRow, SweepReport};
use crate::{Error, Result};

const BER_COLUMNS: [&str; 6] = ["snr_db", "bits", "errors", "ber", "censored", "wall_time_s"];
const DIAG_COLUMNS: [&str; 6] = ["t", "v2", "tau2", "v2_emp", "tau2_emp", "ortho"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::InvalidConfig(format!("unknown report format {other:?} (csv | json)"))),
        }
    }
}

fn csv_table<T: Serialize>(header: &[&str], rows: &[T]) -> Result<String> {
    let ser = |e: csv::Error| Error::Serialize(e.to_string());
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(ser)?;
    for row in rows {
        w.serialize(row).map_err(ser)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Serialize(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub(crate) fn render_report(report: &SweepReport, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => csv_table(&BER_COLUMNS, &report.points),
        ReportFormat::Json => json(report),
    }
}

pub(crate) fn render_diagnostics(rows: &[DiagnoseRow], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => csv_table(&DIAG_COLUMNS, rows),
        ReportFormat::Json => json(&rows),
    }
}

fn write(text: &str, path: &Path) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn export_report(report: &SweepReport, format: ReportFormat, path: &Path) -> Result<()> {
    write(&render_report(report, format)?, path)
}

pub fn write_diagnostics(rows: &[DiagnoseRow], format: ReportFormat, path: &Path) -> Result<()> {
    write(&render_diagnostics(rows, format)?, path)
}

/// Reads a JSON report written by [`export_report`].
pub fn read_report(path: &Path) -> Result<SweepReport> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serialize(format!("{}: {e}", path.display())))
}
