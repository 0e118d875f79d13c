use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::response::{BinResponse, FieldCalibration};
use crate::correlator::AveragedSpectrum;
use crate::error::{Error, Result};
use crate::physics;

/// Where an exclusion curve came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub config_hash: String,
    pub threshold_method: String,
    pub bin_response_center: f64,
    pub bin_response_edge: f64,
    pub confidence_level: f64,
    /// How the signal amplitude is modelled in the conversion.
    pub amplitude_model: String,
}

impl Provenance {
    pub fn new(run_id: &str, config_hash: &str, threshold_method: &str, response: &BinResponse) -> Self {
        Self {
            run_id: run_id.to_string(),
            config_hash: config_hash.to_string(),
            threshold_method: threshold_method.to_string(),
            bin_response_center: response.center,
            bin_response_edge: response.edge,
            confidence_level: 0.0,
            amplitude_model: "deterministic rms amplitude (amplitude_scale = 1), tone at bin center; \
                              no stochastic-amplitude or scalloping correction"
                .to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionCurve {
    pub frequencies: Vec<f64>,
    /// Dark-photon mass of each bin, eV.
    pub masses: Vec<f64>,
    pub epsilon_95: Vec<f64>,
    pub provenance: Provenance,
}

impl ExclusionCurve {
    /// Limit at the bin nearest `frequency`.
    pub fn at_frequency(&self, frequency: f64) -> Option<f64> {
        let i = self
            .frequencies
            .partition_point(|&f| f < frequency)
            .min(self.frequencies.len().checked_sub(1)?);
        let best = [i.saturating_sub(1), i]
            .into_iter()
            .min_by(|&a, &b| {
                (self.frequencies[a] - frequency)
                    .abs()
                    .total_cmp(&(self.frequencies[b] - frequency).abs())
            })?;
        Some(self.epsilon_95[best])
    }

    /// Least-squares slope of `ln epsilon` against `ln frequency`.
    pub fn log_slope(&self) -> f64 {
        let xs: Vec<f64> = self.frequencies.iter().map(|f| f.ln()).collect();
        let ys: Vec<f64> = self.epsilon_95.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        sxy / sxx
    }
}

/// One-sided upper limit on the common tone power in every bin,
/// `max(mean, 0) + z_cl * sigma`, converted to kinetic mixing.
pub fn exclusion_curve(
    avg: &AveragedSpectrum,
    calibration: &FieldCalibration,
    cl: f64,
    mut provenance: Provenance,
) -> Result<ExclusionCurve> {
    if !(cl > 0.0 && cl < 1.0) {
        return Err(Error::Domain(format!("confidence level must be in (0, 1), got {cl}")));
    }
    let z = Normal::standard().inverse_cdf(cl);
    let frequencies = avg.grid.frequencies();
    let mut masses = Vec::with_capacity(frequencies.len());
    let mut epsilon_95 = Vec::with_capacity(frequencies.len());
    for (k, &f) in frequencies.iter().enumerate() {
        let power = (avg.mean_real[k].max(0.0) + z * avg.bin_sigma[k]).max(f64::MIN_POSITIVE);
        masses.push(physics::freq_to_mass(f)?);
        epsilon_95.push(calibration.epsilon_from_power(power, f)?.max(f64::MIN_POSITIVE));
    }
    provenance.confidence_level = cl;
    Ok(ExclusionCurve {
        frequencies,
        masses,
        epsilon_95,
        provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::{FrequencyGrid, Subset};
    use crate::physics::ShieldGeometry;

    fn flat(len: usize, mean: f64, sigma: f64) -> AveragedSpectrum {
        AveragedSpectrum {
            grid: FrequencyGrid {
                first_bin: 100,
                df: 0.01,
                len,
            },
            mean_real: vec![mean; len],
            bin_sigma: vec![sigma; len],
            n_correlators: 1,
            subset_label: Subset::All,
            effective_segments: 37.0,
        }
    }

    fn cal() -> FieldCalibration {
        FieldCalibration {
            response: 100.0 / 3.0,
            shield: ShieldGeometry::default(),
            gain_sq: 1.0,
        }
    }

    fn prov() -> Provenance {
        let r = BinResponse {
            center: 100.0 / 3.0,
            edge: 24.0,
            at_frequency: 100.0 / 3.0,
            frequency: 100.0,
        };
        Provenance::new("run", "hash", "test", &r)
    }

    #[test]
    fn flat_power_floor_gives_inverse_frequency() {
        let curve = exclusion_curve(&flat(49_900, 0.0, 1e-30), &cal(), 0.95, prov()).unwrap();
        assert!((curve.log_slope() + 1.0).abs() < 1e-9);
        assert!(curve.epsilon_95.iter().all(|&e| e > 0.0));
        assert!(curve.masses.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(curve.provenance.confidence_level, 0.95);
    }

    #[test]
    fn limit_matches_hand_conversion() {
        let curve = exclusion_curve(&flat(49_900, -5e-30, 2e-30), &cal(), 0.95, prov()).unwrap();
        let f = 250.0;
        let p: f64 = 1.6448536269514722 * 2e-30;
        let b = (p / (100.0 / 3.0)).sqrt();
        let eps = b / (1.63e-12 * 25.0 * 2.0);
        let got = curve.at_frequency(f).unwrap();
        assert!((got / eps - 1.0).abs() < 1e-9, "{got} vs {eps}");
    }

    #[test]
    fn noiseless_spectrum_floors_at_tiny_positive() {
        let curve = exclusion_curve(&flat(100, 0.0, 0.0), &cal(), 0.95, prov()).unwrap();
        assert!(curve.epsilon_95.iter().all(|&e| e > 0.0 && e < 1e-100));
    }
}
