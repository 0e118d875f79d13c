use serde::{Deserialize, Serialize};

use super::candidates::{find_candidates, Candidate};
use super::limits::{exclusion_curve, ExclusionCurve, Provenance};
use super::response::{calibrate_bin_response, gain_of, sensor_gains, BinResponse, FieldCalibration};
use super::snr::{snr_spectrum, SnrSpectrum};
use super::threshold::{mc_threshold, NoiseModel, Threshold, ThresholdMode, DEFAULT_BLOCK_BINS};
use super::veto::{veto_candidates, VetoData, VetoPolicy};
use crate::correlator::{spectra_bundle, AveragedSpectrum, SpectraBundle, SpectralConfig, Subset, Weighting};
use crate::error::{Error, Result};
use crate::simnet::{RunData, RunSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub spectral: SpectralConfig,
    /// Pairs entering the detection average. Cross-station pairs are immune
    /// to shield-room common-mode noise.
    pub subset: Subset,
    pub weighting: Weighting,
    pub window_bins: usize,
    pub cl: f64,
    pub n_trials: usize,
    pub mc_seed: u64,
    pub threshold_mode: ThresholdMode,
    pub block_bins: usize,
    pub veto: VetoPolicy,
    pub run_vetoes: bool,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            spectral: SpectralConfig::default(),
            subset: Subset::CrossStationOnly,
            weighting: Weighting::Uniform,
            window_bins: 64,
            cl: 0.95,
            n_trials: 100,
            mc_seed: 0,
            threshold_mode: ThresholdMode::PerBin,
            block_bins: DEFAULT_BLOCK_BINS,
            veto: VetoPolicy::default(),
            run_vetoes: true,
        }
    }
}

/// Everything produced by one pass of the detection pipeline.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub bundle: SpectraBundle,
    pub average: AveragedSpectrum,
    pub snr: SnrSpectrum,
    pub threshold: Threshold,
    pub response: BinResponse,
    pub calibration: FieldCalibration,
    /// Relative signal gain of each sensor, in bundle order.
    pub gains: Vec<f64>,
    pub candidates: Vec<Candidate>,
    pub veto_data: Option<VetoData>,
}

impl Analysis {
    /// Veto arbitrary bins, e.g. a known injection, whether or not they
    /// crossed the threshold.
    pub fn veto_bins(&self, bins: &[usize], policy: &VetoPolicy) -> Result<Vec<Candidate>> {
        let data = self
            .veto_data
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("analysis ran without veto data".into()))?;
        let pending = bins
            .iter()
            .map(|&k| Candidate::at_bin(&self.snr, k, self.threshold.at(k), &self.calibration))
            .collect::<Result<Vec<_>>>()?;
        Ok(veto_candidates(&pending, data, &self.bundle, policy, &self.threshold))
    }

    pub fn exclusion_curve(&self, cl: f64, run_id: &str, config_hash: &str) -> Result<ExclusionCurve> {
        let provenance = Provenance::new(run_id, config_hash, &self.threshold.method, &self.response);
        exclusion_curve(&self.average, &self.calibration, cl, provenance)
    }
}

/// Spectra, average, SNR, threshold, candidates and (optionally) vetoes.
///
/// `threshold` skips the Monte-Carlo step when a threshold for an
/// equivalent network is already at hand.
pub fn analyze(run: &RunData, spec: &RunSpec, cfg: &AnalysisConfig, threshold: Option<Threshold>) -> Result<Analysis> {
    let bundle = spectra_bundle(run, &cfg.spectral)?;
    let average = bundle.average(cfg.subset, cfg.weighting)?;
    let snr = snr_spectrum(&average, cfg.window_bins)?;
    let threshold = match threshold {
        Some(t) => t,
        None => {
            let model = NoiseModel::from_bundle_with_blocks(&bundle, cfg.subset, cfg.window_bins, cfg.block_bins)?;
            mc_threshold(&model, cfg.n_trials, cfg.cl, cfg.mc_seed)?
        }
    }
    .with_mode(cfg.threshold_mode);

    let rate = run.records[0].sample_rate;
    let [lo, hi] = cfg.spectral.band;
    let response = calibrate_bin_response(&cfg.spectral, rate, average.grid.frequency(average.grid.len / 2).clamp(lo, hi))?;
    let (shield, gain_map) = sensor_gains(spec)?;
    let gains = bundle
        .sensors
        .iter()
        .map(|k| gain_of(&gain_map, k))
        .collect::<Result<Vec<_>>>()?;
    let admitted: Vec<f64> = bundle
        .pairs
        .iter()
        .zip(&bundle.pair_index)
        .filter(|(p, _)| cfg.subset.admits(p))
        .map(|(_, &(i, j))| gains[i] * gains[j])
        .collect();
    let calibration = FieldCalibration {
        response: response.center,
        shield,
        gain_sq: admitted.iter().sum::<f64>() / admitted.len() as f64,
    };

    let mut candidates = find_candidates(&snr, &threshold, &calibration)?;
    let veto_data = if cfg.run_vetoes {
        let data = VetoData::prepare(
            run,
            &bundle,
            &gains,
            &cfg.spectral,
            cfg.subset,
            cfg.weighting,
            cfg.window_bins,
            &cfg.veto,
        )?;
        candidates = veto_candidates(&candidates, &data, &bundle, &cfg.veto, &threshold);
        Some(data)
    } else {
        None
    };
    log::info!(
        "analysis: {} pairs ({}), {} candidates",
        average.n_correlators,
        cfg.subset.label(),
        candidates.len()
    );

    Ok(Analysis {
        bundle,
        average,
        snr,
        threshold,
        response,
        calibration,
        gains,
        candidates,
        veto_data,
    })
}
