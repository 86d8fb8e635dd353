use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// One model's regime comparison. `_a` is fine-tuning, `_b` the frozen
/// pipeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub accuracy_a: f64,
    pub wall_a: f64,
    pub accuracy_b: f64,
    pub wall_b: f64,
    pub decrease_accuracy_pct: f64,
    pub decrease_time_pct: f64,
}

impl ComparisonRow {
    pub fn new(model: impl Into<String>, accuracy_a: f64, wall_a: f64, accuracy_b: f64, wall_b: f64) -> Result<Self> {
        compute_decreases(ComparisonRow {
            model: model.into(),
            accuracy_a,
            wall_a,
            accuracy_b,
            wall_b,
            decrease_accuracy_pct: 0.0,
            decrease_time_pct: 0.0,
        })
    }
}

/// Fills both decrease columns: `100·(a − b)/a`.
pub fn compute_decreases(mut row: ComparisonRow) -> Result<ComparisonRow> {
    let positive = |v: f64| v.partial_cmp(&0.0) == Some(std::cmp::Ordering::Greater);
    if !positive(row.accuracy_a) || !positive(row.wall_a) {
        return Err(Error::InvalidArgument(format!(
            "decreases need positive fine-tune accuracy and time, got {} and {}",
            row.accuracy_a, row.wall_a
        )));
    }
    row.decrease_accuracy_pct = 100.0 * (row.accuracy_a - row.accuracy_b) / row.accuracy_a;
    row.decrease_time_pct = 100.0 * (row.wall_a - row.wall_b) / row.wall_a;
    Ok(row)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportEnvironment {
    pub threads: usize,
    pub partitions: usize,
    pub seed: u64,
    pub train_examples: usize,
    pub validation_examples: usize,
    pub test_examples: usize,
    pub epochs: usize,
    /// Accelerator description; always null for CPU runs.
    pub device: Option<String>,
}

/// Peak resident memory of each regime run, when measurable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RowMemory {
    pub model: String,
    pub peak_memory_a_bytes: Option<u64>,
    pub peak_memory_b_bytes: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub rows: Vec<ComparisonRow>,
    /// Field-wise arithmetic mean of `rows`.
    pub average: ComparisonRow,
    pub environment: ReportEnvironment,
    #[serde(default)]
    pub memory: Vec<RowMemory>,
}

impl ComparisonReport {
    pub fn new(rows: Vec<ComparisonRow>, environment: ReportEnvironment) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("a report needs at least one row".into()));
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&ComparisonRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
        let average = ComparisonRow {
            model: "Average".into(),
            accuracy_a: mean(|r| r.accuracy_a),
            wall_a: mean(|r| r.wall_a),
            accuracy_b: mean(|r| r.accuracy_b),
            wall_b: mean(|r| r.wall_b),
            decrease_accuracy_pct: mean(|r| r.decrease_accuracy_pct),
            decrease_time_pct: mean(|r| r.decrease_time_pct),
        };
        Ok(ComparisonReport {
            schema_version: SCHEMA_VERSION,
            rows,
            average,
            environment,
            memory: Vec::new(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::Config(format!(
                "unknown report format `{s}` (json, csv, markdown)"
            ))),
        }
    }
}

/// Whole seconds as `hh:mm:ss`.
pub fn format_hms(seconds: f64) -> String {
    let total = seconds.max(0.0).round() as u64;
    format!("{:02}:{:02}:{:02}", total / 3600, total % 3600 / 60, total % 60)
}

const HEADER: [&str; 7] = [
    "Model",
    "Accuracy (fine-tune)",
    "Time (fine-tune)",
    "Accuracy (frozen pipeline)",
    "Time (frozen pipeline)",
    "Decrease in Accuracy (%)",
    "Decrease in Time (%)",
];

pub fn render_report(report: &ComparisonReport, format: ReportFormat) -> Result<String> {
    let rows = report.rows.iter().chain(std::iter::once(&report.average));
    let mut out = String::new();
    match format {
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(report)?;
            out.push('\n');
        }
        ReportFormat::Csv => {
            out.push_str("model,accuracy_a,wall_a,accuracy_b,wall_b,decrease_accuracy_pct,decrease_time_pct\n");
            for r in rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    csv_field(&r.model),
                    r.accuracy_a,
                    r.wall_a,
                    r.accuracy_b,
                    r.wall_b,
                    r.decrease_accuracy_pct,
                    r.decrease_time_pct
                );
            }
        }
        ReportFormat::Markdown => {
            let _ = writeln!(out, "| {} |", HEADER.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(HEADER.len()));
            for r in rows {
                let _ = writeln!(
                    out,
                    "| {} | {:.4} | {} | {:.4} | {} | {:.1} | {:.1} |",
                    r.model,
                    r.accuracy_a,
                    format_hms(r.wall_a),
                    r.accuracy_b,
                    format_hms(r.wall_b),
                    r.decrease_accuracy_pct,
                    r.decrease_time_pct
                );
            }
        }
    }
    Ok(out)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn emit_report(report: &ComparisonReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = render_report(report, format)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hms() {
        assert_eq!(format_hms(701.0), "00:11:41");
        assert_eq!(format_hms(5892.0), "01:38:12");
        assert_eq!(format_hms(0.4), "00:00:00");
    }

    #[test]
    fn equal_accuracy_is_zero_decrease() {
        let r = ComparisonRow::new("x", 0.9, 10.0, 0.9, 4.0).unwrap();
        assert_eq!(r.decrease_accuracy_pct, 0.0);
        assert!((r.decrease_time_pct - 60.0).abs() < 1e-12);
    }

    #[test]
    fn zero_denominators_are_rejected() {
        assert!(ComparisonRow::new("x", 0.0, 10.0, 0.5, 1.0).is_err());
        assert!(ComparisonRow::new("x", 0.9, 0.0, 0.5, 1.0).is_err());
    }

    #[test]
    fn single_row_markdown_has_average() {
        let row = ComparisonRow::new("Tiny", 0.9104, 701.0, 0.8444, 276.0).unwrap();
        let report = ComparisonReport::new(vec![row], ReportEnvironment::default()).unwrap();
        let md = render_report(&report, ReportFormat::Markdown).unwrap();
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].contains("00:11:41") && lines[2].contains("7.2") && lines[2].contains("60.6"));
        assert!(lines[3].starts_with("| Average |"));
    }

    #[test]
    fn json_round_trip() {
        let rows = vec![
            ComparisonRow::new("a", 0.91, 700.5, 0.84, 276.25).unwrap(),
            ComparisonRow::new("b", 0.87, 100.0, 0.81, 30.0).unwrap(),
        ];
        let report = ComparisonReport::new(rows, ReportEnvironment::default()).unwrap();
        let json = render_report(&report, ReportFormat::Json).unwrap();
        let back: ComparisonReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(json.contains("\"device\": null"));
    }

    #[test]
    fn unwritable_path() {
        let row = ComparisonRow::new("a", 0.9, 1.0, 0.8, 0.5).unwrap();
        let report = ComparisonReport::new(vec![row], ReportEnvironment::default()).unwrap();
        assert!(emit_report(&report, ReportFormat::Csv, "/nonexistent-dir/x.csv").is_err());
    }
}
