//! Welch cross-spectral estimation and network averaging.
//!
//! Spectra are one-sided and normalized to T^2/Hz: white noise with ASD `S`
//! has auto-spectrum `S^2` in every bin. Only bins strictly between DC and
//! Nyquist that fall inside the configured band are kept.

mod engine;
mod network;
mod spectrogram;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use engine::{compute_spectra, welch_cross_spectrum, CrossSpectrum, Segmentation, SubsetVariance};
pub use network::{
    all_pair_spectra, fit_power_law, network_average, sensitivity_curve, spectra_bundle,
    AveragedSpectrum, PowerLawFit, SensitivityPoint, SpectraBundle, Subset, Weighting,
};
pub use spectrogram::{cross_spectrogram, Spectrogram};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    Hann,
}

impl Window {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| {
                    let s = (std::f64::consts::PI * i as f64 / n as f64).sin();
                    s * s
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectralConfig {
    /// Samples per segment.
    pub segment_length: usize,
    pub overlap_fraction: f64,
    pub window: Window,
    /// [f_lo, f_hi] in hertz.
    pub band: [f64; 2],
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            segment_length: 100_000,
            overlap_fraction: 0.5,
            window: Window::Hann,
            band: [1.0, 500.0],
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self, sample_rate: f64, record_len: usize) -> Result<()> {
        if self.segment_length < 2 {
            return Err(Error::InvalidConfig("segment_length must be at least 2".into()));
        }
        if self.segment_length > record_len {
            return Err(Error::InvalidConfig(format!(
                "segment_length {} exceeds record length {record_len}",
                self.segment_length
            )));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(Error::InvalidConfig("overlap_fraction must be in [0, 1)".into()));
        }
        let [lo, hi] = self.band;
        if !(lo > 0.0 && hi > lo && hi <= sample_rate / 2.0) {
            return Err(Error::InvalidConfig(format!(
                "band [{lo}, {hi}] Hz must lie in (0, {}] Hz",
                sample_rate / 2.0
            )));
        }
        Ok(())
    }

    pub fn segment_duration(&self, sample_rate: f64) -> f64 {
        self.segment_length as f64 / sample_rate
    }
}

/// Uniform frequency grid `f_i = (first_bin + i) * df`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub first_bin: usize,
    pub df: f64,
    pub len: usize,
}

impl FrequencyGrid {
    pub fn frequency(&self, index: usize) -> f64 {
        (self.first_bin + index) as f64 * self.df
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.len).map(|i| self.frequency(i)).collect()
    }

    /// Index of the bin nearest to `frequency`, if inside the grid.
    pub fn index_of(&self, frequency: f64) -> Option<usize> {
        let bin = (frequency / self.df).round();
        if bin < self.first_bin as f64 {
            return None;
        }
        let index = bin as usize - self.first_bin;
        (index < self.len).then_some(index)
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}
