use serde::{Deserialize, Serialize};

use super::response::FieldCalibration;
use super::snr::SnrSpectrum;
use super::threshold::Threshold;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VetoStatus {
    #[default]
    Pending,
    Passed,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VetoReason {
    HalfRunInconsistent,
    CrossStationAbsent,
    PairAmplitudeNonuniform,
    KnownTechnicalLine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Index into the analysis grid.
    pub bin: usize,
    pub frequency: f64,
    pub snr: f64,
    pub threshold: f64,
    pub implied_epsilon: f64,
    pub veto_status: VetoStatus,
    pub reasons: Vec<VetoReason>,
}

impl Candidate {
    /// A pending candidate at `bin`, whether or not it crosses a threshold.
    pub fn at_bin(snr: &SnrSpectrum, bin: usize, threshold: f64, calibration: &FieldCalibration) -> Result<Self> {
        let frequency = snr.grid.frequency(bin);
        Ok(Self {
            bin,
            frequency,
            snr: snr.snr[bin],
            threshold,
            implied_epsilon: calibration.epsilon_from_power(snr.mean_real[bin], frequency)?,
            veto_status: VetoStatus::Pending,
            reasons: Vec::new(),
        })
    }

    pub fn is_rejected(&self) -> bool {
        self.veto_status == VetoStatus::Rejected
    }
}

/// Every bin whose SNR exceeds its threshold.
pub fn find_candidates(
    snr: &SnrSpectrum,
    threshold: &Threshold,
    calibration: &FieldCalibration,
) -> Result<Vec<Candidate>> {
    snr.snr
        .iter()
        .enumerate()
        .filter(|&(k, &s)| s > threshold.at(k))
        .map(|(k, _)| Candidate::at_bin(snr, k, threshold.at(k), calibration))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::FrequencyGrid;
    use crate::detect::snr::snr_of_values;
    use crate::physics::ShieldGeometry;
    use crate::rng::StreamKey;

    fn calibration() -> FieldCalibration {
        FieldCalibration {
            response: 100.0 / 3.0,
            shield: ShieldGeometry::default(),
            gain_sq: 1.0,
        }
    }

    fn noise_snr(n: usize) -> SnrSpectrum {
        let grid = FrequencyGrid {
            first_bin: 100,
            df: 0.01,
            len: n,
        };
        snr_of_values(grid, &StreamKey::new(8, &["cand"]).gaussian(n, 1e-30), 64).unwrap()
    }

    #[test]
    fn candidates_follow_the_threshold() {
        let snr = noise_snr(50_000);
        let c = find_candidates(&snr, &Threshold::constant(1.645, 0.95), &calibration()).unwrap();
        let frac = c.len() as f64 / 50_000.0;
        // The local MAD sigma is noisy, so a plain Gaussian quantile flags a
        // little more than 5%.
        assert!((0.045..0.065).contains(&frac), "{frac}");
        assert!(c.iter().all(|x| x.snr > 1.645 && x.implied_epsilon > 0.0));
        assert!(c.iter().all(|x| x.veto_status == VetoStatus::Pending && x.reasons.is_empty()));
        assert!(find_candidates(&snr, &Threshold::constant(f64::INFINITY, 0.95), &calibration())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn negative_power_implies_zero_epsilon() {
        let snr = noise_snr(1000);
        let k = snr.mean_real.iter().position(|&v| v < 0.0).unwrap();
        let c = Candidate::at_bin(&snr, k, 0.0, &calibration()).unwrap();
        assert_eq!(c.implied_epsilon, 0.0);
    }
}
