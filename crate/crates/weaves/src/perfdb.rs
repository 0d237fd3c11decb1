//! Append-only performance database in CSV.
//!
//! The header names the problem parameters, then `method`, `outcome`,
//! `time` and `evals`. Rows are only ever appended.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use weaves_core::recommender::{Outcome, PerformanceRecord};

use crate::error::{AppError, Result};

const COST_COLUMNS: [&str; 4] = ["method", "outcome", "time", "evals"];

pub struct PerfDb {
    path: PathBuf,
    params: Vec<String>,
}

impl PerfDb {
    /// Open `path`, creating it with a header if it is missing or empty. An
    /// existing header must name the same parameters.
    pub fn open(path: &Path, params: &[&str]) -> Result<PerfDb> {
        let params: Vec<String> = params.iter().map(|p| p.to_string()).collect();
        let header: Vec<String> = params.iter().cloned().chain(COST_COLUMNS.iter().map(|c| c.to_string())).collect();
        let empty = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
        if empty {
            let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
            w.write_record(&header).map_err(csv_err)?;
            w.flush()?;
        } else {
            let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
            let found: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
            if found != header {
                return Err(AppError::Format(format!(
                    "{} has columns {found:?}, expected {header:?}",
                    path.display()
                )));
            }
        }
        Ok(PerfDb {
            path: path.to_path_buf(),
            params,
        })
    }

    pub fn params(&self) -> &[String] {
        &self.params
    }

    pub fn append(&self, records: &[PerformanceRecord]) -> Result<()> {
        let file = OpenOptions::new().append(true).open(&self.path)?;
        let mut w = csv::Writer::from_writer(file);
        for r in records {
            if r.params.len() != self.params.len() {
                return Err(AppError::Format(format!(
                    "record has {} parameters, database has {}",
                    r.params.len(),
                    self.params.len()
                )));
            }
            let mut row: Vec<String> = r.params.iter().map(|p| p.to_string()).collect();
            row.push(r.method.clone());
            row.push(r.outcome.as_str().to_string());
            row.push(r.time.to_string());
            row.push(r.evals.to_string());
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(&self) -> Result<Vec<PerformanceRecord>> {
        read_perfdb(&self.path).map(|(_, rows)| rows)
    }
}

fn csv_err(e: csv::Error) -> AppError {
    AppError::Format(e.to_string())
}

/// Parameter names and rows of a database file.
pub fn read_perfdb(path: &Path) -> Result<(Vec<String>, Vec<PerformanceRecord>)> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header.len() < COST_COLUMNS.len() || header[header.len() - COST_COLUMNS.len()..] != COST_COLUMNS {
        return Err(AppError::Format(format!("{} lacks the cost columns", path.display())));
    }
    let np = header.len() - COST_COLUMNS.len();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| AppError::Format(format!("row {}: bad {what}", i + 2));
        let params = (0..np)
            .map(|j| rec[j].parse::<f64>().map_err(|_| bad(&header[j])))
            .collect::<Result<Vec<_>>>()?;
        let outcome = match &rec[np + 1] {
            "success" => Outcome::Success,
            "failure" => Outcome::Failure,
            _ => return Err(bad("outcome")),
        };
        rows.push(PerformanceRecord {
            params,
            method: rec[np].to_string(),
            outcome,
            time: rec[np + 2].parse().map_err(|_| bad("time"))?,
            evals: rec[np + 3].parse().map_err(|_| bad("evals"))?,
        });
    }
    Ok((header[..np].to_vec(), rows))
}
