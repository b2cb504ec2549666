//! Metrics rows and their CSV form.
//!
//! Files start with a `#schema=N` comment, then a header row, then one row
//! per evaluation. Appending to an existing file checks the schema and
//! never rewrites earlier rows.

use std::fmt;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{Algorithm, SweepVariable};

pub const SCHEMA_VERSION: u32 = 1;

/// Column order of the CSV.
pub const COLUMNS: [&str; 10] = [
    "algorithm",
    "sweep_var",
    "sweep_value",
    "seed",
    "epoch",
    "mean_reward",
    "transmission_cost",
    "computation_cost",
    "weighted_cost",
    "status",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Status {
    /// Intermediate evaluation of a learner.
    Ok,
    /// Last evaluation; the convergence rule fired.
    Converged,
    /// Last evaluation; the round budget ran out.
    Budget,
    /// Single evaluation of a non-learning algorithm.
    Final,
    Failed(String),
}

impl Status {
    /// True for the row that closes a successful replica.
    pub fn is_final(&self) -> bool {
        matches!(self, Status::Converged | Status::Budget | Status::Final)
    }

    pub fn is_failed(&self) -> bool {
        matches!(self, Status::Failed(_))
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Status::Ok => f.write_str("ok"),
            Status::Converged => f.write_str("converged"),
            Status::Budget => f.write_str("budget"),
            Status::Final => f.write_str("final"),
            Status::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

impl FromStr for Status {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "ok" => Status::Ok,
            "converged" => Status::Converged,
            "budget" => Status::Budget,
            "final" => Status::Final,
            _ => match s.strip_prefix("failed: ") {
                Some(m) => Status::Failed(m.to_string()),
                None => return Err(Error::Metrics(format!("unknown status {s:?}"))),
            },
        })
    }
}

impl From<Status> for String {
    fn from(s: Status) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for Status {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// One evaluation of one replica. Costs are per-slot means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub algorithm: Algorithm,
    pub sweep_var: Option<SweepVariable>,
    pub sweep_value: Option<f64>,
    pub seed: u64,
    /// Training epochs completed before this evaluation.
    pub epoch: u64,
    pub mean_reward: f64,
    /// Reactive plus proactive bandwidth.
    pub transmission_cost: f64,
    pub computation_cost: f64,
    pub weighted_cost: f64,
    pub status: Status,
}

fn schema_line() -> String {
    format!("#schema={SCHEMA_VERSION}")
}

/// Serialises rows with the schema line and header.
pub fn write_csv<W: Write>(mut out: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{}", schema_line())?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(COLUMNS)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(rows: &[MetricsRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows)?;
    String::from_utf8(buf).map_err(|e| Error::Metrics(e.to_string()))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut input = BufReader::new(input);
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim_end() != schema_line() {
        return Err(Error::Metrics(format!(
            "expected {:?} on the first line, found {:?}",
            schema_line(),
            first.trim_end()
        )));
    }
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != COLUMNS {
        return Err(Error::Metrics(format!("unexpected header {header:?}")));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<MetricsRow>> {
    let f = std::fs::File::open(path)?;
    read_csv(f).map_err(|e| Error::Metrics(format!("{}: {e}", path.display())))
}

/// Appends rows, writing the schema line and header first if the file is
/// new or empty.
pub fn append_csv_file(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let existing = std::fs::metadata(path).map(|m| m.len()).unwrap_or(0);
    if existing == 0 {
        let f = std::fs::File::create(path)?;
        return write_csv(f, rows);
    }
    // validates schema and header
    read_csv_file(path)?;
    let f = OpenOptions::new().append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
