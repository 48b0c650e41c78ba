use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use phonon_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::scenario::Scenario;

/// One acceptance threshold, inclusive on both ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub pass: bool,
}

impl Check {
    pub fn range(name: &str, value: f64, lo: f64, hi: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            lo,
            hi,
            pass: value >= lo && value <= hi,
        }
    }

    pub fn around(name: &str, value: f64, target: f64, tolerance: f64) -> Self {
        Self::range(name, value, target - tolerance, target + tolerance)
    }

    pub fn relative(name: &str, value: f64, target: f64, fraction: f64) -> Self {
        Self::around(name, value, target, fraction * target.abs())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: Scenario,
    pub seed: u64,
    pub shots: u64,
    pub config: Config,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl RunReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Collects the artifacts of one run in its output directory.
#[derive(Debug)]
pub struct Output {
    dir: PathBuf,
    artifacts: Vec<String>,
    svg: bool,
}

impl Output {
    pub fn create(dir: &Path, svg: bool) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Output {
            dir: dir.to_path_buf(),
            artifacts: Vec::new(),
            svg,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        std::fs::write(&path, contents).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.artifacts.push(name.to_string());
        Ok(())
    }

    /// Skipped when plots are disabled; the SVG is only rendered if needed.
    pub fn plot(&mut self, name: &str, render: impl FnOnce() -> Result<String>) -> Result<()> {
        if self.svg {
            let s = render()?;
            self.write(name, &s)?;
        }
        Ok(())
    }

    pub fn into_artifacts(self) -> Vec<String> {
        self.artifacts
    }
}

/// Writes `report.json` next to the other artifacts.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<PathBuf> {
    let path = dir.join("report.json");
    let mut text = report.to_json()?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path)
}
