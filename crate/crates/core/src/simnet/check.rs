use super::TimeSeriesRecord;
use crate::correlator::{welch_cross_spectrum, SpectralConfig, Window};
use crate::error::{Error, Result};

/// Shortest record accepted by the self-calibration checks.
pub const MIN_CHECK_SAMPLES: usize = 10_000;

fn check_config(record: &TimeSeriesRecord) -> Result<SpectralConfig> {
    let len = record.samples.len();
    if len < MIN_CHECK_SAMPLES {
        return Err(Error::TooShort {
            len,
            min: MIN_CHECK_SAMPLES,
        });
    }
    Ok(SpectralConfig {
        segment_length: len.min(10_000),
        overlap_fraction: 0.5,
        window: Window::Hann,
        band: [1.0, record.sample_rate / 2.0],
    })
}

/// Band-averaged Welch ASD of a noise-only record, T/sqrt(Hz).
pub fn white_noise_asd_check(record: &TimeSeriesRecord) -> Result<f64> {
    let cfg = check_config(record)?;
    let auto = welch_cross_spectrum(record, record, &cfg)?;
    let mean = auto.values.iter().map(|v| v.re).sum::<f64>() / auto.values.len() as f64;
    Ok(mean.max(0.0).sqrt())
}

/// Band-averaged cross ASD of two aligned records: the square root of the
/// mean real cross-power, clamped at zero.
pub fn cross_asd_check(a: &TimeSeriesRecord, b: &TimeSeriesRecord) -> Result<f64> {
    let cfg = check_config(a)?;
    let cross = welch_cross_spectrum(a, b, &cfg)?;
    let mean = cross.values.iter().map(|v| v.re).sum::<f64>() / cross.values.len() as f64;
    Ok(mean.max(0.0).sqrt())
}
