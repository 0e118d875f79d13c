//! Pipeline configuration files (JSON).
//!
//! ```json
//! {
//!   "run_spec": "spec.json",            // path (relative to this file) or inline RunSpec
//!   "spectral": { "segment_length": 100000, "overlap_fraction": 0.5, "window": "hann", "band": [1, 500] },
//!   "detection": { "cl": 0.95, "window_bins": 64, "subset": "cross_station_only",
//!                  "n_trials": 100, "technical_lines": [50.0], "veto": { ... } },
//!   "output_dir": "out",
//!   "seed": 0
//! }
//! ```
//! Every section is optional; defaults give the 13 + 2 sensor, 2000 s network.

use std::path::{Path, PathBuf};

use haloscope::correlator::{SpectralConfig, Subset, Weighting};
use haloscope::detect::{AnalysisConfig, ThresholdMode, VetoPolicy, DEFAULT_BLOCK_BINS};
use haloscope::simnet::RunSpec;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunSpecRef {
    Path(PathBuf),
    Inline(Box<RunSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionConfig {
    pub cl: f64,
    pub window_bins: usize,
    pub subset: Subset,
    pub weighting: Weighting,
    pub n_trials: usize,
    pub threshold_mode: ThresholdMode,
    pub block_bins: usize,
    pub veto: VetoPolicy,
    /// Known technical lines, Hz; merged into the veto list.
    pub technical_lines: Vec<f64>,
    pub run_vetoes: bool,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        let a = AnalysisConfig::default();
        Self {
            cl: a.cl,
            window_bins: a.window_bins,
            subset: a.subset,
            weighting: a.weighting,
            n_trials: a.n_trials,
            threshold_mode: ThresholdMode::PerBin,
            block_bins: DEFAULT_BLOCK_BINS,
            veto: VetoPolicy::default(),
            technical_lines: Vec::new(),
            run_vetoes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub run_spec: Option<RunSpecRef>,
    #[serde(default)]
    pub spectral: SpectralConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            run_spec: None,
            spectral: SpectralConfig::default(),
            detection: DetectionConfig::default(),
            output_dir: None,
            seed: None,
        }
    }
}

/// A configuration with its run spec loaded and overrides applied.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub spec: RunSpec,
    pub spectral: SpectralConfig,
    pub detection: DetectionConfig,
    pub output_dir: Option<PathBuf>,
    pub seed: u64,
}

#[derive(Serialize)]
struct Hashed<'a> {
    spec: &'a RunSpec,
    spectral: &'a SpectralConfig,
    detection: &'a DetectionConfig,
    seed: u64,
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<T> {
    // serde_json reports line and column.
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = parse(&text, path)?;
        // Spec paths are relative to the config file.
        if let Some(RunSpecRef::Path(p)) = &mut cfg.run_spec {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Load the run spec and apply a seed override.
    pub fn resolve(&self, seed: Option<u64>) -> Result<Resolved> {
        let seed = seed.or(self.seed);
        let mut spec = match &self.run_spec {
            None => RunSpec::two_station_default(seed.unwrap_or(0)),
            Some(RunSpecRef::Inline(spec)) => (**spec).clone(),
            Some(RunSpecRef::Path(p)) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("run spec {}: {e}", p.display())))?;
                parse(&text, p)?
            }
        };
        if let Some(s) = seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(Resolved {
            seed: spec.seed,
            spec,
            spectral: self.spectral,
            detection: self.detection.clone(),
            output_dir: self.output_dir.clone(),
        })
    }
}

impl Resolved {
    /// Hash of everything that influences results (not the output location).
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&Hashed {
            spec: &self.spec,
            spectral: &self.spectral,
            detection: &self.detection,
            seed: self.seed,
        })
        .expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn analysis(&self) -> AnalysisConfig {
        let d = &self.detection;
        let mut veto = d.veto.clone();
        veto.technical_lines.extend(&d.technical_lines);
        AnalysisConfig {
            spectral: self.spectral,
            subset: d.subset,
            weighting: d.weighting,
            window_bins: d.window_bins,
            cl: d.cl,
            n_trials: d.n_trials,
            mc_seed: self.seed,
            threshold_mode: d.threshold_mode,
            block_bins: d.block_bins,
            veto,
            run_vetoes: d.run_vetoes,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_default_network() {
        let cfg: PipelineConfig = serde_json::from_str("{}").unwrap();
        let r = cfg.resolve(Some(4)).unwrap();
        assert_eq!(r.spec, RunSpec::two_station_default(4));
        assert_eq!(r.analysis().mc_seed, 4);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = parse::<PipelineConfig>("{\n  \"seed\": 1,\n  \"bogus\": 2\n}", Path::new("c.json")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn hash_tracks_seed_and_detection() {
        let cfg = PipelineConfig::default();
        let a = cfg.resolve(Some(1)).unwrap().hash();
        assert_eq!(a, cfg.resolve(Some(1)).unwrap().hash());
        assert_ne!(a, cfg.resolve(Some(2)).unwrap().hash());
        let mut other = cfg.clone();
        other.detection.cl = 0.9;
        assert_ne!(a, other.resolve(Some(1)).unwrap().hash());
    }
}
