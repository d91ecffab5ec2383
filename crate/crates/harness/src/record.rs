//! Result records, CSV tables and their on-disk layout.
//!
//! A run of subcommand `cmd` writes into `<out>/<cmd>/`:
//! the data tables named by the subcommand, `metrics.csv` with one row per
//! checked quantity, and `verdict.json` holding the full [`ResultRecord`].
//! Files are first written to a sibling staging directory and moved into
//! place only once all of them exist.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use oufield::quadvar::Provenance;

use crate::error::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Reported for context, not judged.
    Info,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub name: String,
    pub value: f64,
    pub se: Option<f64>,
    pub reference: Option<f64>,
    pub provenance: Provenance,
    pub status: Status,
    pub detail: String,
}

impl MetricRow {
    pub fn new(name: impl Into<String>, value: f64, provenance: Provenance) -> Self {
        Self {
            name: name.into(),
            value,
            se: None,
            reference: None,
            provenance,
            status: Status::Info,
            detail: String::new(),
        }
    }

    pub fn se(mut self, se: f64) -> Self {
        self.se = Some(se);
        self
    }

    pub fn reference(mut self, r: f64) -> Self {
        self.reference = Some(r);
        self
    }

    pub fn check(mut self, ok: bool, detail: impl Into<String>) -> Self {
        self.status = Status::from_bool(ok);
        self.detail = detail.into();
        self
    }

    pub fn note(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub experiment: String,
    pub config_digest: String,
    pub input_hash: String,
    pub passed: bool,
    pub rows: Vec<MetricRow>,
}

impl ResultRecord {
    pub fn new(experiment: &str, config_digest: String, input_hash: String, rows: Vec<MetricRow>) -> Self {
        let passed = rows.iter().all(|r| r.status != Status::Fail);
        Self {
            experiment: experiment.to_string(),
            config_digest,
            input_hash,
            passed,
            rows,
        }
    }

    pub fn failures(&self) -> impl Iterator<Item = &MetricRow> {
        self.rows.iter().filter(|r| r.status == Status::Fail)
    }

    pub fn row(&self, name: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn metrics_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        Ok(
            String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
                .expect("csv output is UTF-8"),
        )
    }

    pub fn rows_from_csv(text: &str) -> Result<Vec<MetricRow>, HarnessError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        Ok(r.deserialize().collect::<Result<Vec<MetricRow>, _>>()?)
    }
}

/// Git-style content hash: SHA-256 of `blob <len>\0<content>`.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    format!("{:x}", h.finalize())
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// A CSV table with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(
            String::from_utf8(w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?)
                .expect("csv output is UTF-8"),
        )
    }
}

/// Everything a subcommand produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Output {
    pub record: ResultRecord,
    pub tables: Vec<Table>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Output {
    /// Writes tables, `metrics.csv` and `verdict.json` under
    /// `out_dir/<experiment>` and returns that directory.
    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, HarnessError> {
        let name = &self.record.experiment;
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        let mut files = Vec::new();
        for t in &self.tables {
            files.push((format!("{}.csv", t.name), t.to_csv()?));
        }
        files.push(("metrics.csv".to_string(), self.record.metrics_csv()?));
        files.push((
            "verdict.json".to_string(),
            serde_json::to_string_pretty(&self.record)? + "\n",
        ));

        let staging = out_dir.join(format!(".{name}.partial-{}", std::process::id()));
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        for (file, body) in &files {
            let p = staging.join(file);
            fs::write(&p, body).map_err(io_err(&p))?;
        }
        let target = out_dir.join(name);
        if target.exists() {
            fs::remove_dir_all(&target).map_err(io_err(&target))?;
        }
        fs::rename(&staging, &target).map_err(io_err(&target))?;
        Ok(target)
    }
}
