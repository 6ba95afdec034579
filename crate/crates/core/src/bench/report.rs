//! Report rendering.
//!
//! | file           | content                                              |
//! |----------------|------------------------------------------------------|
//! | `report.txt`   | aligned table                                        |
//! | `report.csv`   | header plus one row per strategy variant             |
//! | `report.jsonl` | one object per row, keys in column order             |
//! | `report.json`  | the full [`RunReport`] including per-run accuracies  |
//!
//! Percentages are rendered with 2 decimals and seconds with 1. A row with
//! no successful run renders its accuracy as `nan` (`null` in JSON lines).
//! `build_time_s` and `train_time_s` are wall-clock measurements and the only
//! fields that differ between repeated runs of the same configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ReportRow, RunReport};
use crate::error::{Error, Result};

pub const REPORT_COLUMNS: [&str; 7] = [
    "strategy",
    "variant",
    "runs",
    "acc_mean_pct",
    "acc_std_pct",
    "build_time_s",
    "train_time_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Text,
    Csv,
    JsonLines,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Text => "report.txt",
            ReportFormat::Csv => "report.csv",
            ReportFormat::JsonLines => "report.jsonl",
        }
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.2}"))
}

fn secs(v: f64) -> String {
    format!("{v:.1}")
}

fn cells(row: &ReportRow) -> [String; 7] {
    [
        row.strategy.clone(),
        row.variant.clone(),
        row.runs.to_string(),
        pct(row.acc_mean_pct),
        pct(row.acc_std_pct),
        secs(row.build_time_s),
        secs(row.train_time_s),
    ]
}

/// One JSON-lines record; field order is the column order.
#[derive(Serialize)]
struct JsonRow<'a> {
    strategy: &'a str,
    variant: &'a str,
    runs: usize,
    acc_mean_pct: Option<f64>,
    acc_std_pct: Option<f64>,
    build_time_s: f64,
    train_time_s: f64,
}

fn rounded(v: f64, decimals: usize) -> f64 {
    format!("{v:.decimals$}").parse().expect("formatted float parses")
}

pub fn render_report(report: &RunReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Text => {
            let rows: Vec<[String; 7]> = report.rows.iter().map(cells).collect();
            let mut widths = REPORT_COLUMNS.map(str::len);
            for r in &rows {
                for (w, c) in widths.iter_mut().zip(r) {
                    *w = (*w).max(c.len());
                }
            }
            let line = |out: &mut String, r: &[String]| {
                let mut s = String::new();
                for (i, (c, w)) in r.iter().zip(widths).enumerate() {
                    if i < 2 {
                        let _ = write!(s, "{c:<w$}  ");
                    } else {
                        let _ = write!(s, "{c:>w$}  ");
                    }
                }
                out.push_str(s.trim_end());
                out.push('\n');
            };
            let _ = writeln!(
                out,
                "dataset {}  model {}  seed {}  epochs {}",
                report.dataset, report.model, report.seed, report.epochs
            );
            line(&mut out, &REPORT_COLUMNS.map(String::from));
            for r in &rows {
                line(&mut out, r);
            }
            if !report.timings_reliable {
                out.push_str("note: runs were trained concurrently; timings are unreliable\n");
            }
            for row in &report.rows {
                for note in &row.notes {
                    let _ = writeln!(out, "note: {}:{}: {note}", row.strategy, row.variant);
                }
            }
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(REPORT_COLUMNS).expect("in-memory write");
            for row in &report.rows {
                w.write_record(cells(row)).expect("in-memory write");
            }
            out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input");
        }
        ReportFormat::JsonLines => {
            for row in &report.rows {
                let j = JsonRow {
                    strategy: &row.strategy,
                    variant: &row.variant,
                    runs: row.runs,
                    acc_mean_pct: row.acc_mean_pct.map(|v| rounded(v, 2)),
                    acc_std_pct: row.acc_std_pct.map(|v| rounded(v, 2)),
                    build_time_s: rounded(row.build_time_s, 1),
                    train_time_s: rounded(row.train_time_s, 1),
                };
                out.push_str(&serde_json::to_string(&j).expect("plain struct serializes"));
                out.push('\n');
            }
        }
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_report(report: &RunReport, format: ReportFormat, path: &Path) -> Result<()> {
    write_file(path, &render_report(report, format))
}

/// Writes every report format plus `report.json` into `dir`.
pub fn write_reports(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for format in [ReportFormat::Text, ReportFormat::Csv, ReportFormat::JsonLines] {
        let path = dir.join(format.file_name());
        emit_report(report, format, &path)?;
        written.push(path);
    }
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(&path, &(json + "\n"))?;
    written.push(path);
    Ok(written)
}

/// Reads `report.json`, or `<dir>/report.json` when given a directory.
pub fn read_report(path: &Path) -> Result<RunReport> {
    let path = if path.is_dir() {
        path.join("report.json")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CsvRow {
    pub strategy: String,
    pub variant: String,
    pub runs: usize,
    pub acc_mean_pct: f64,
    pub acc_std_pct: f64,
    pub build_time_s: f64,
    pub train_time_s: f64,
}

pub fn parse_report_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    if header != REPORT_COLUMNS {
        return Err(Error::Format(format!("unexpected report header {header:?}")));
    }
    r.deserialize()
        .map(|row| row.map_err(|e| Error::Format(e.to_string())))
        .collect()
}

/// Long-form accuracy table: one row per successful run of every strategy
/// variant in every report.
pub fn emit_plot_data(reports: &[RunReport]) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Config("plot data needs at least one report".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "model", "strategy", "variant", "run", "seed", "accuracy_pct"])
        .expect("in-memory write");
    for report in reports {
        for row in &report.rows {
            for r in &row.results {
                if let Some(acc) = r.accuracy_pct {
                    w.write_record([
                        report.dataset.as_str(),
                        report.model.as_str(),
                        row.strategy.as_str(),
                        row.variant.as_str(),
                        &r.run.to_string(),
                        &r.seed.to_string(),
                        &acc.to_string(),
                    ])
                    .expect("in-memory write");
                }
            }
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input"))
}
