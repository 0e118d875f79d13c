//! Desk-scale reproduction: every acceptance criterion, its artifacts and a
//! pass/fail report.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::criteria::{self, CriterionResult, Profile};
use crate::error::{CliError, Result};
use crate::output::{sha256_file, Output};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub profile: Profile,
    pub seed: u64,
    pub criteria: Vec<CriterionResult>,
    /// SHA-256 of every artifact except the report itself.
    pub artifacts: BTreeMap<String, String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.criteria.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&CriterionResult> {
        self.criteria.iter().filter(|c| !c.passed).collect()
    }
}

/// Hash identifying a reproduction (profile and seed).
pub fn reproduction_hash(profile: &Profile, seed: u64) -> String {
    let json = serde_json::to_vec(&(profile, seed)).expect("profile serializes");
    hex::encode(Sha256::digest(json))
}

/// Run one criterion, logging how long it took.
fn timed(
    id: u32,
    f: impl FnOnce() -> Result<CriterionResult>,
    progress: &mut dyn FnMut(&CriterionResult, f64),
) -> Result<CriterionResult> {
    let t = Instant::now();
    let r = f().map_err(|e| match e {
        CliError::Data(m) => CliError::Data(format!("criterion {id}: {m}")),
        CliError::Usage(m) => CliError::Usage(format!("criterion {id}: {m}")),
        CliError::Criterion(m) => CliError::Criterion(format!("criterion {id}: {m}")),
    })?;
    progress(&r, t.elapsed().as_secs_f64());
    Ok(r)
}

/// Criteria 1-9 into `out`. With `previous`, criterion 10 compares the
/// artifact hashes against an earlier report.
pub fn run(
    profile: &Profile,
    seed: u64,
    out: &Output,
    previous: Option<&Path>,
    progress: &mut dyn FnMut(&CriterionResult, f64),
) -> Result<Report> {
    let mut criteria = vec![
        timed(1, criteria::c1_wall_field, progress)?,
        timed(2, criteria::c2_band_endpoints, progress)?,
        timed(3, || criteria::c3_correlator_count(seed), progress)?,
        timed(4, || criteria::c4_sensitivity(profile, seed + 100, out), progress)?,
        timed(5, || criteria::c5_asymmetry(profile, seed + 200, out), progress)?,
        timed(6, || criteria::c6_threshold(profile, seed + 300, out), progress)?,
        timed(7, || criteria::c7_injection(profile, seed + 400, out), progress)?,
        timed(8, || criteria::c8_limits(profile, seed + 500, out), progress)?,
        timed(9, || criteria::c9_wire(profile, seed + 600, out), progress)?,
    ];
    let mut artifacts = BTreeMap::new();
    for entry in std::fs::read_dir(&out.dir)? {
        let path = entry?.path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if path.is_file() && name != REPORT_JSON && name != REPORT_TXT {
            artifacts.insert(name, sha256_file(&path)?);
        }
    }
    if let Some(prev) = previous {
        let text = std::fs::read_to_string(prev)
            .map_err(|e| CliError::Data(format!("previous report {}: {e}", prev.display())))?;
        let before: Report =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("previous report {}: {e}", prev.display())))?;
        let t = Instant::now();
        let mut c = CriterionResult {
            id: 10,
            name: "determinism".into(),
            passed: before.artifacts == artifacts,
            detail: String::new(),
            measured: BTreeMap::new(),
        };
        let differing: Vec<&String> = artifacts
            .keys()
            .chain(before.artifacts.keys())
            .filter(|k| artifacts.get(*k) != before.artifacts.get(*k))
            .collect();
        c.detail = if c.passed {
            format!("{} artifact hashes identical to {}", artifacts.len(), prev.display())
        } else {
            format!("FAILED artifacts differ: {differing:?}")
        };
        progress(&c, t.elapsed().as_secs_f64());
        criteria.push(c);
    }
    let report = Report {
        profile: profile.clone(),
        seed,
        criteria,
        artifacts,
    };
    out.json(REPORT_JSON, &report)?;
    let mut text = String::new();
    for c in &report.criteria {
        text.push_str(&c.line());
        text.push('\n');
    }
    out.bytes(REPORT_TXT, text.as_bytes())?;
    Ok(report)
}
