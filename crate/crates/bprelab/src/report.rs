//! Versioned run reports and their side files.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::ExperimentConfig;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One pass/fail statement tied to a named invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    /// The mathematical statement under test.
    pub anchor: String,
    pub passed: bool,
    pub observed: Option<f64>,
    pub bound: Option<f64>,
    /// Distance to the bound, positive when passing.
    pub slack: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl Verdict {
    /// Passes iff `observed <= bound`.
    pub fn at_most(check: impl Into<String>, anchor: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            check: check.into(),
            anchor: anchor.into(),
            passed: observed <= bound,
            observed: Some(observed),
            bound: Some(bound),
            slack: Some(bound - observed),
            detail: None,
        }
    }

    /// Passes iff `observed >= bound`.
    pub fn at_least(check: impl Into<String>, anchor: impl Into<String>, observed: f64, bound: f64) -> Self {
        Self {
            check: check.into(),
            anchor: anchor.into(),
            passed: observed >= bound,
            observed: Some(observed),
            bound: Some(bound),
            slack: Some(observed - bound),
            detail: None,
        }
    }

    pub fn flag(check: impl Into<String>, anchor: impl Into<String>, passed: bool) -> Self {
        Self {
            check: check.into(),
            anchor: anchor.into(),
            passed,
            observed: None,
            bound: None,
            slack: None,
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub status: Status,
    pub verdicts: Vec<Verdict>,
    pub results: Value,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl SuiteReport {
    pub fn new(suite: &str, verdicts: Vec<Verdict>, results: Value, notes: Vec<String>) -> Self {
        let status = if verdicts.iter().all(|v| v.passed) { Status::Pass } else { Status::Fail };
        Self { suite: suite.to_string(), status, verdicts, results, notes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub status: Status,
    pub verdicts: usize,
    pub passed: usize,
    pub failed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub suites: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool: Tool,
    pub config: ExperimentConfig,
    pub suites: Vec<SuiteReport>,
    pub summary: Summary,
    pub timings: Timings,
}

impl Report {
    pub fn new(config: ExperimentConfig, suites: Vec<SuiteReport>, timings: Timings) -> Self {
        let mut failed = Vec::new();
        let mut total = 0;
        for s in &suites {
            for v in &s.verdicts {
                total += 1;
                if !v.passed {
                    failed.push(format!("{}/{}", s.suite, v.check));
                }
            }
        }
        let status = if failed.is_empty() { Status::Pass } else { Status::Fail };
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            tool: Tool { name: env!("CARGO_PKG_NAME").to_string(), version: env!("CARGO_PKG_VERSION").to_string() },
            config,
            summary: Summary { status, verdicts: total, passed: total - failed.len(), failed },
            suites,
            timings,
        }
    }

    pub fn passed(&self) -> bool {
        self.summary.status == Status::Pass
    }

    /// The report as JSON with the timings block removed; identical inputs
    /// give identical values.
    pub fn deterministic_view(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        if let Value::Object(map) = &mut v {
            map.remove("timings");
        }
        v
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A file produced by a suite, written next to `report.json`.
#[derive(Debug, Clone, PartialEq)]
pub struct SideFile {
    pub name: String,
    pub bytes: Vec<u8>,
}

/// Writes `report.json` and every side file into `dir`, returning the
/// report path.
pub fn write_outputs(dir: &Path, report: &Report, side_files: &[SideFile]) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    for f in side_files {
        fs::write(dir.join(&f.name), &f.bytes)?;
    }
    let path = dir.join("report.json");
    fs::write(&path, report.to_json())?;
    Ok(path)
}
