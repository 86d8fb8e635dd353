use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::LabeledExample;
use crate::error::{Error, Result};
use crate::tokenize::normalize_text;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Zero-based column holding the 1-based class.
    pub label_column: usize,
    /// Zero-based column holding the text.
    pub text_column: usize,
    /// Fields every row must have.
    pub expected_columns: usize,
    pub classes: usize,
    /// Malformed rows tolerated (skipped) before loading fails.
    pub error_budget: usize,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            label_column: 0,
            text_column: 2,
            expected_columns: 3,
            classes: 4,
            error_budget: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    pub line: u64,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CsvLoad {
    pub examples: Vec<LabeledExample>,
    pub skipped: Vec<SkippedRow>,
}

/// Loads `(class, title, description)` rows; class `"1"`–`"4"` becomes
/// label 0–3 and the description becomes the text.
pub fn load_agnews_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Vec<LabeledExample>> {
    load_agnews_csv_report(path, options).map(|l| l.examples)
}

/// Like [`load_agnews_csv`], also returning the rows skipped under the
/// error budget.
pub fn load_agnews_csv_report(path: impl AsRef<Path>, options: &CsvOptions) -> Result<CsvLoad> {
    let path = path.as_ref();
    if options.text_column >= options.expected_columns || options.label_column >= options.expected_columns {
        return Err(Error::Config(format!(
            "text column {} / label column {} outside {} columns",
            options.text_column, options.label_column, options.expected_columns
        )));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(file);
    let mut examples = Vec::new();
    let mut skipped = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = reader.position().line();
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                let line = record.position().map_or(line, |p| p.line());
                match parse_row(&record, options) {
                    Ok(example) => examples.push(example),
                    Err(message) => reject(path, line, message, options, &mut skipped)?,
                }
            }
            Err(e) => {
                let line = e.position().map_or(line, |p| p.line());
                if matches!(e.kind(), csv::ErrorKind::Io(_)) {
                    return Err(Error::Data {
                        path: PathBuf::from(path),
                        line,
                        message: e.to_string(),
                    });
                }
                reject(path, line, e.to_string(), options, &mut skipped)?;
            }
        }
    }
    Ok(CsvLoad { examples, skipped })
}

fn reject(path: &Path, line: u64, message: String, options: &CsvOptions, skipped: &mut Vec<SkippedRow>) -> Result<()> {
    if skipped.len() >= options.error_budget {
        return Err(Error::Data {
            path: path.to_path_buf(),
            line,
            message,
        });
    }
    skipped.push(SkippedRow { line, message });
    Ok(())
}

fn parse_row(record: &csv::StringRecord, options: &CsvOptions) -> std::result::Result<LabeledExample, String> {
    if record.len() != options.expected_columns {
        return Err(format!(
            "expected {} fields, found {}",
            options.expected_columns,
            record.len()
        ));
    }
    let raw = record[options.label_column].trim();
    let class: usize = raw.parse().map_err(|_| format!("class `{raw}` is not an integer"))?;
    if class == 0 || class > options.classes {
        return Err(format!("class {class} outside 1..={}", options.classes));
    }
    let text = record[options.text_column].to_string();
    if normalize_text(&text).is_empty() {
        return Err("text field is empty".to_string());
    }
    Ok(LabeledExample { text, label: class - 1 })
}
