//! Per-round KPI records and their CSV / JSON-lines export.
//!
//! CSV columns, in order:
//! `round_id, global_version, global_validation_accuracy,
//! mean_client_local_accuracy, accepted, participating_clients,
//! bytes_on_wire, epsilon_bound, wall_ticks`.
//! Reals use 9 significant digits, `.` as decimal separator; absent values
//! are empty cells.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

pub const CSV_HEADER: [&str; 9] = [
    "round_id",
    "global_version",
    "global_validation_accuracy",
    "mean_client_local_accuracy",
    "accepted",
    "participating_clients",
    "bytes_on_wire",
    "epsilon_bound",
    "wall_ticks",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round_id: u32,
    pub global_version: u32,
    pub global_validation_accuracy: Option<f64>,
    pub mean_client_local_accuracy: Option<f64>,
    pub accepted: bool,
    pub participating_clients: usize,
    pub bytes_on_wire: u64,
    pub epsilon_bound: Option<f64>,
    pub wall_ticks: u64,
}

/// Formats with 9 significant digits: fixed notation for exponents in
/// `-5..9`, scientific otherwise.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.8e}");
    let exp: i32 = sci[sci.find('e').unwrap() + 1..].parse().unwrap();
    if (-5..9).contains(&exp) {
        format!("{x:.prec$}", prec = (8 - exp) as usize)
    } else {
        sci
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_sig9).unwrap_or_default()
}

pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = CSV_HEADER.join(",");
    out.push('\n');
    for r in records {
        let row = [
            r.round_id.to_string(),
            r.global_version.to_string(),
            opt(r.global_validation_accuracy),
            opt(r.mean_client_local_accuracy),
            r.accepted.to_string(),
            r.participating_clients.to_string(),
            r.bytes_on_wire.to_string(),
            opt(r.epsilon_bound),
            r.wall_ticks.to_string(),
        ];
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn metrics_jsonl(records: &[MetricsRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("serializable"));
        s.push('\n');
    }
    s
}

fn parse_err(line: usize, msg: impl Into<String>) -> HarnessError {
    HarnessError::Parse { line, msg: msg.into() }
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRecord>, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header != CSV_HEADER {
        return Err(parse_err(1, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(line, e.to_string()))?;
        let int = |k: usize| -> Result<u64, HarnessError> {
            rec[k]
                .parse()
                .map_err(|_| parse_err(line, format!("bad {}", CSV_HEADER[k])))
        };
        let real = |k: usize| -> Result<Option<f64>, HarnessError> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                rec[k]
                    .parse()
                    .map(Some)
                    .map_err(|_| parse_err(line, format!("bad {}", CSV_HEADER[k])))
            }
        };
        out.push(MetricsRecord {
            round_id: int(0)? as u32,
            global_version: int(1)? as u32,
            global_validation_accuracy: real(2)?,
            mean_client_local_accuracy: real(3)?,
            accepted: rec[4].parse().map_err(|_| parse_err(line, "bad accepted"))?,
            participating_clients: int(5)? as usize,
            bytes_on_wire: int(6)?,
            epsilon_bound: real(7)?,
            wall_ticks: int(8)?,
        });
    }
    Ok(out)
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<(), HarnessError> {
    let mut f = fs::File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(contents).map_err(|e| HarnessError::io(path, e))
}

/// Writes `metrics.csv` and `metrics.jsonl` into `dir`, creating it if needed.
pub fn export_metrics(records: &[MetricsRecord], dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let csv_path = dir.join("metrics.csv");
    let jsonl_path = dir.join("metrics.jsonl");
    write_file(&csv_path, metrics_csv(records).as_bytes())?;
    write_file(&jsonl_path, metrics_jsonl(records).as_bytes())?;
    Ok((csv_path, jsonl_path))
}
