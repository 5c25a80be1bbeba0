//! CSV series and demand files.
//!
//! Series: `step,date,q,q1,q2,q3` in 10³ m³ per step. Demands: one row per
//! step of the year, `step_of_year,d1_level,d2_level,d3,d4,d5,d6,d7,d8`.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use oro_core::hydro::{StepRecord, SystemSpec};
use oro_core::series::{assemble, DemandRow, FlowRecord};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Row { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub step: usize,
    pub date: String,
    pub q: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandCsvRow {
    pub step_of_year: usize,
    pub d1_level: f64,
    pub d2_level: f64,
    pub d3: f64,
    pub d4: f64,
    pub d5: f64,
    pub d6: f64,
    pub d7: f64,
    pub d8: f64,
}

impl From<&DemandCsvRow> for DemandRow {
    fn from(r: &DemandCsvRow) -> Self {
        DemandRow {
            d1: r.d1_level,
            d2: r.d2_level,
            d3: r.d3,
            d4: r.d4,
            d5: r.d5,
            d6: r.d6,
            d7: r.d7,
            d8: r.d8,
        }
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn rows<T: for<'de> Deserialize<'de>, R: Read>(r: R) -> Result<Vec<(usize, T)>, IngestError> {
    let mut rd = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let mut out = Vec::new();
    for rec in rd.deserialize::<T>() {
        match rec {
            Ok(v) => {
                let line = out.len() + 2;
                out.push((line, v));
            }
            Err(e) => {
                let line = e.position().map_or(out.len() + 2, |p| p.line() as usize);
                let message = match e.kind() {
                    csv::ErrorKind::Deserialize { err, .. } => err.to_string(),
                    _ => e.to_string(),
                };
                return Err(IngestError::Row { line, message });
            }
        }
    }
    Ok(out)
}

fn check_value(line: usize, name: &str, v: f64) -> Result<(), IngestError> {
    if !v.is_finite() {
        return Err(IngestError::Row {
            line,
            message: format!("{name} is not a finite number"),
        });
    }
    if v < 0.0 {
        return Err(IngestError::Row {
            line,
            message: format!("{name} is negative ({v})"),
        });
    }
    Ok(())
}

pub fn parse_series<R: Read>(r: R) -> Result<Vec<SeriesRow>, IngestError> {
    let parsed = rows::<SeriesRow, _>(r)?;
    if parsed.is_empty() {
        return Err(IngestError::Invalid("series file has no rows".into()));
    }
    for (line, row) in &parsed {
        for (name, v) in [("q", row.q), ("q1", row.q1), ("q2", row.q2), ("q3", row.q3)] {
            check_value(*line, name, v)?;
        }
        if row.q3 < row.q {
            return Err(IngestError::Row {
                line: *line,
                message: format!("q3 ({}) is below q ({})", row.q3, row.q),
            });
        }
    }
    Ok(parsed.into_iter().map(|(_, r)| r).collect())
}

pub fn parse_demands<R: Read>(r: R) -> Result<Vec<DemandCsvRow>, IngestError> {
    let parsed = rows::<DemandCsvRow, _>(r)?;
    for (k, (line, row)) in parsed.iter().enumerate() {
        if row.step_of_year != k + 1 {
            return Err(IngestError::Row {
                line: *line,
                message: format!("step_of_year {} out of sequence, expected {}", row.step_of_year, k + 1),
            });
        }
        for (name, v) in [
            ("d1_level", row.d1_level),
            ("d2_level", row.d2_level),
            ("d3", row.d3),
            ("d4", row.d4),
            ("d5", row.d5),
            ("d6", row.d6),
            ("d7", row.d7),
            ("d8", row.d8),
        ] {
            check_value(*line, name, v)?;
        }
        if row.d1_level > row.d2_level {
            return Err(IngestError::Row {
                line: *line,
                message: "d1_level above d2_level".into(),
            });
        }
    }
    Ok(parsed.into_iter().map(|(_, r)| r).collect())
}

pub fn read_series(path: &Path) -> Result<Vec<SeriesRow>, IngestError> {
    parse_series(open(path)?).map_err(|e| with_path(e, path))
}

pub fn read_demands(path: &Path) -> Result<Vec<DemandCsvRow>, IngestError> {
    parse_demands(open(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: IngestError, path: &Path) -> IngestError {
    match e {
        IngestError::Row { line, message } => IngestError::Row {
            line,
            message: format!("{}: {message}", path.display()),
        },
        IngestError::Invalid(m) => IngestError::Invalid(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Step records from a series and a one-year demand profile.
pub fn load(spec: &SystemSpec, series: &Path, demands: &Path) -> Result<Vec<StepRecord>, IngestError> {
    let s = read_series(series)?;
    let d = read_demands(demands)?;
    combine(spec, &s, &d)
}

pub fn combine(
    spec: &SystemSpec,
    series: &[SeriesRow],
    demands: &[DemandCsvRow],
) -> Result<Vec<StepRecord>, IngestError> {
    let flows: Vec<FlowRecord> = series
        .iter()
        .map(|r| FlowRecord {
            q: r.q,
            q1: r.q1,
            q2: r.q2,
            q3: r.q3,
        })
        .collect();
    let d: Vec<DemandRow> = demands.iter().map(DemandRow::from).collect();
    assemble(spec, &flows, &d).map_err(|e| match e {
        oro_core::ModelError::InvalidRecord { step, reason } => IngestError::Row {
            line: step + 2,
            message: reason,
        },
        other => IngestError::Invalid(other.to_string()),
    })
}

/// Calendar date of step `k` when the series starts on 1 January `first_year`.
pub fn step_date(first_year: i32, steps_per_year: usize, k: usize) -> String {
    let year = first_year + (k / steps_per_year) as i32;
    let j = k % steps_per_year;
    let date = if steps_per_year == 12 {
        NaiveDate::from_ymd_opt(year, j as u32 + 1, 1)
    } else {
        NaiveDate::from_ymd_opt(year, 1, 1).map(|d| d + Duration::days(7 * j as i64))
    };
    date.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default()
}

pub fn series_rows(flows: &[FlowRecord], first_year: i32, steps_per_year: usize) -> Vec<SeriesRow> {
    flows
        .iter()
        .enumerate()
        .map(|(k, f)| SeriesRow {
            step: k + 1,
            date: step_date(first_year, steps_per_year, k),
            q: f.q,
            q1: f.q1,
            q2: f.q2,
            q3: f.q3,
        })
        .collect()
}

pub fn demand_rows(profile: &[DemandRow]) -> Vec<DemandCsvRow> {
    profile
        .iter()
        .enumerate()
        .map(|(k, d)| DemandCsvRow {
            step_of_year: k + 1,
            d1_level: d.d1,
            d2_level: d.d2,
            d3: d.d3,
            d4: d.d4,
            d5: d.d5,
            d6: d.d6,
            d7: d.d7,
            d8: d.d8,
        })
        .collect()
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], w: W) -> Result<(), IngestError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r).map_err(|e| IngestError::Invalid(e.to_string()))?;
    }
    wr.flush().map_err(|e| IngestError::Invalid(e.to_string()))
}

pub fn write_csv_file<T: Serialize>(rows: &[T], path: &Path) -> Result<(), IngestError> {
    let f = File::create(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    write_csv(rows, std::io::BufWriter::new(f))
}
