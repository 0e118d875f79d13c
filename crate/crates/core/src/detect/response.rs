use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::correlator::{welch_cross_spectrum, CrossSpectrum, Segmentation, SpectralConfig};
use crate::error::{Error, Result};
use crate::physics::{self, ShieldGeometry};
use crate::simnet::{add_tone, RunSpec, SensorKey, TimeSeriesRecord};

/// Peak-bin real cross-power per squared tone amplitude, (T^2/Hz) / T^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinResponse {
    /// Tone exactly at the bin center nearest the requested frequency.
    pub center: f64,
    /// Tone halfway between two bins: worst-case scalloping.
    pub edge: f64,
    /// Tone at the requested frequency, read at its nearest bin.
    pub at_frequency: f64,
    pub frequency: f64,
}

impl BinResponse {
    pub fn scalloping_loss(&self) -> f64 {
        self.edge / self.center
    }
}

fn tone_pair(cfg: &SpectralConfig, rate: f64, frequency: f64) -> (TimeSeriesRecord, TimeSeriesRecord) {
    let mut samples = vec![0.0; cfg.segment_length];
    add_tone(&mut samples, rate, 0.0, frequency, 1.0, 0.0);
    let a = TimeSeriesRecord {
        sensor_id: "cal-a".into(),
        station_id: "cal".into(),
        start_time: 0,
        sample_rate: rate,
        samples,
    };
    let b = TimeSeriesRecord {
        sensor_id: "cal-b".into(),
        ..a.clone()
    };
    (a, b)
}

fn measure(cfg: &SpectralConfig, rate: f64, tone: f64, bins: &[usize]) -> Result<f64> {
    let (a, b) = tone_pair(cfg, rate, tone);
    let spectrum = welch_cross_spectrum(&a, &b, cfg)?;
    Ok(bins
        .iter()
        .filter(|&&k| k < spectrum.values.len())
        .map(|&k| spectrum.values[k].re)
        .fold(0.0, f64::max))
}

/// Measure the tone response of the Welch estimator by pushing a noiseless
/// unit-amplitude cosine through it.
pub fn calibrate_bin_response(cfg: &SpectralConfig, sample_rate: f64, frequency: f64) -> Result<BinResponse> {
    let seg = Segmentation::new(cfg, sample_rate, cfg.segment_length)?;
    let k = seg
        .grid
        .index_of(frequency)
        .ok_or_else(|| Error::Domain(format!("{frequency} Hz is outside the analysis band")))?;
    let center_f = seg.grid.frequency(k);
    let center = measure(cfg, sample_rate, center_f, &[k])?;
    let edge = if k + 1 < seg.grid.len {
        measure(cfg, sample_rate, center_f + seg.grid.df / 2.0, &[k, k + 1])?
    } else {
        measure(cfg, sample_rate, center_f - seg.grid.df / 2.0, &[k.saturating_sub(1), k])?
    };
    let at_frequency = measure(cfg, sample_rate, frequency, &[k])?;
    Ok(BinResponse {
        center,
        edge,
        at_frequency,
        frequency,
    })
}

/// Closed-form one-sided tone response of a window at bin center:
/// `(sum w)^2 / (2 fs sum w^2)`.
pub fn analytic_bin_response(cfg: &SpectralConfig, sample_rate: f64) -> f64 {
    let w = cfg.window.coefficients(cfg.segment_length);
    let sum: f64 = w.iter().sum();
    let energy: f64 = w.iter().map(|x| x * x).sum();
    sum * sum / (2.0 * sample_rate * energy)
}

/// Conversion between averaged cross-power and kinetic mixing.
///
/// Every sensor has a relative gain `g_i` (its coupling factor times its
/// station's wall-field scale relative to `shield`); a common tone of wall
/// amplitude `B` puts `response * g_i g_j * B^2` into pair `(i, j)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCalibration {
    pub response: f64,
    pub shield: ShieldGeometry,
    /// Mean of `g_i g_j` over the averaged pairs.
    pub gain_sq: f64,
}

impl FieldCalibration {
    pub fn field_from_power(&self, power: f64) -> f64 {
        (power.max(0.0) / (self.response * self.gain_sq)).sqrt()
    }

    pub fn epsilon_from_power(&self, power: f64, frequency: f64) -> Result<f64> {
        physics::epsilon_from_field(self.field_from_power(power), frequency, &self.shield)
    }

    pub fn power_from_epsilon(&self, epsilon: f64, frequency: f64) -> Result<f64> {
        let b = physics::wall_field_amplitude(epsilon, frequency, &self.shield)?;
        Ok(self.response * self.gain_sq * b * b)
    }
}

/// Relative signal gain of every sensor in `spec`, against the first
/// station's shield.
pub fn sensor_gains(spec: &RunSpec) -> Result<(ShieldGeometry, BTreeMap<SensorKey, f64>)> {
    let reference = spec
        .stations
        .first()
        .ok_or_else(|| Error::InvalidConfig("run spec has no stations".into()))?
        .shield;
    let scale = |s: &ShieldGeometry| {
        s.edge_length * s.coupling_factor / (reference.edge_length * reference.coupling_factor)
    };
    let mut gains = BTreeMap::new();
    for sensor in &spec.sensors {
        let station = spec.station(&sensor.station_id).ok_or_else(|| {
            Error::InvalidConfig(format!("sensor {} has unknown station", sensor.sensor_id))
        })?;
        gains.insert(
            SensorKey {
                station_id: sensor.station_id.clone(),
                sensor_id: sensor.sensor_id.clone(),
            },
            sensor.coupling_factor * scale(&station.shield),
        );
    }
    Ok((reference, gains))
}

pub(crate) fn gain_of(gains: &BTreeMap<SensorKey, f64>, key: &SensorKey) -> Result<f64> {
    gains
        .get(key)
        .copied()
        .ok_or_else(|| Error::InvalidConfig(format!("sensor {key} is not described by the run spec")))
}

/// Calibration for a uniform average over `pairs`.
pub fn field_calibration(
    spec: &RunSpec,
    pairs: &[&CrossSpectrum],
    response: f64,
) -> Result<FieldCalibration> {
    if pairs.is_empty() {
        return Err(Error::EmptySubset("no pairs to calibrate".into()));
    }
    let (shield, gains) = sensor_gains(spec)?;
    let mut total = 0.0;
    for p in pairs {
        total += gain_of(&gains, &p.a)? * gain_of(&gains, &p.b)?;
    }
    Ok(FieldCalibration {
        response,
        shield,
        gain_sq: total / pairs.len() as f64,
    })
}

/// Scalloping of a tone `delta` bins from center for a periodic Hann
/// window, as a power ratio. Used only as an independent check.
pub fn hann_scalloping(delta: f64) -> f64 {
    if delta == 0.0 {
        return 1.0;
    }
    // Continuous-time Hann kernel: sinc(d) / (1 - d^2).
    let sinc = (PI * delta).sin() / (PI * delta);
    let amp = sinc / (1.0 - delta * delta);
    amp * amp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlator::Window;

    fn cfg(window: Window) -> SpectralConfig {
        SpectralConfig {
            segment_length: 100_000,
            overlap_fraction: 0.5,
            window,
            band: [1.0, 500.0],
        }
    }

    #[test]
    fn hann_center_matches_closed_form() {
        let c = cfg(Window::Hann);
        for f in [1.0, 10.1, 250.25, 499.99] {
            let r = calibrate_bin_response(&c, 1000.0, f).unwrap();
            // T_seg / 3 for a periodic Hann window, one-sided.
            assert!((r.center / (100.0 / 3.0) - 1.0).abs() < 1e-3, "{f}: {}", r.center);
            assert!((r.center / analytic_bin_response(&c, 1000.0) - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn rectangular_center_is_half_segment() {
        let r = calibrate_bin_response(&cfg(Window::Rectangular), 1000.0, 250.25).unwrap();
        assert!((r.center / 50.0 - 1.0).abs() < 1e-3, "{}", r.center);
    }

    #[test]
    fn edge_response_shows_scalloping() {
        let r = calibrate_bin_response(&cfg(Window::Hann), 1000.0, 100.0).unwrap();
        let expected = hann_scalloping(0.5);
        assert!((r.scalloping_loss() / expected - 1.0).abs() < 1e-3, "{}", r.scalloping_loss());
        let off = calibrate_bin_response(&cfg(Window::Hann), 1000.0, 100.0025).unwrap();
        assert!((off.at_frequency / off.center / hann_scalloping(0.25) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn response_is_quadratic_in_amplitude() {
        let c = SpectralConfig {
            segment_length: 10_000,
            ..cfg(Window::Hann)
        };
        let (mut a, mut b) = tone_pair(&c, 1000.0, 37.0);
        let one = welch_cross_spectrum(&a, &b, &c).unwrap();
        for x in a.samples.iter_mut().chain(b.samples.iter_mut()) {
            *x *= 2.0;
        }
        let two = welch_cross_spectrum(&a, &b, &c).unwrap();
        let k = one.grid.index_of(37.0).unwrap();
        assert!((two.values[k].re / one.values[k].re - 4.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_band_frequency_is_rejected() {
        assert!(calibrate_bin_response(&cfg(Window::Hann), 1000.0, 0.001).is_err());
    }

    #[test]
    fn calibration_roundtrips_epsilon() {
        let spec = RunSpec::two_station_default(0);
        let cal = FieldCalibration {
            response: 100.0 / 3.0,
            shield: ShieldGeometry::default(),
            gain_sq: 1.0,
        };
        let p = cal.power_from_epsilon(1e-5, 250.25).unwrap();
        assert!((cal.epsilon_from_power(p, 250.25).unwrap() / 1e-5 - 1.0).abs() < 1e-12);
        let (_, gains) = sensor_gains(&spec).unwrap();
        assert!(gains.values().all(|&g| g == 1.0));
    }
}
