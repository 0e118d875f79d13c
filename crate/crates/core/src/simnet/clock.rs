use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::TimeSeriesRecord;
use crate::error::{Error, Result};
use crate::rng::StreamKey;

/// Model a GPS-disciplined clock that is off by `offset` seconds and whose
/// sampling instants wander with rms `jitter_rms` seconds.
///
/// The offset moves the start stamp only (samples were taken at the true
/// instants). Jitter is applied to first order, `x(t + d) ~ x(t) + d x'(t)`,
/// with the derivative taken spectrally.
pub fn apply_clock_error(
    record: &TimeSeriesRecord,
    offset: f64,
    jitter_rms: f64,
    seed: u64,
) -> Result<TimeSeriesRecord> {
    if !(offset.abs() < 1.0) {
        return Err(Error::Domain(format!("|clock offset| must be below 1 s, got {offset}")));
    }
    if !(jitter_rms >= 0.0) {
        return Err(Error::Domain("clock jitter must be non-negative".into()));
    }
    let shift_ns = (offset * 1e9).round() as i128;
    let start = record.start_time as i128 + shift_ns;
    if start < 0 {
        return Err(Error::Domain("clock offset moves the record before GPS epoch".into()));
    }
    let mut out = record.clone();
    out.start_time = start as u64;
    if jitter_rms > 0.0 && !record.samples.is_empty() {
        let derivative = spectral_derivative(&record.samples, record.sample_rate);
        let key = StreamKey::new(seed, &["clock-jitter", &record.station_id, &record.sensor_id]);
        let jitter = key.gaussian(record.samples.len(), jitter_rms);
        for ((x, d), j) in out.samples.iter_mut().zip(&derivative).zip(&jitter) {
            *x += j * d;
        }
    }
    Ok(out)
}

fn spectral_derivative(samples: &[f64], rate: f64) -> Vec<f64> {
    let n = samples.len();
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    forward.process(&mut buf);
    for (k, v) in buf.iter_mut().enumerate() {
        // Signed frequency index; the Nyquist term of an even-length
        // transform has no well-defined derivative.
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        if n % 2 == 0 && k == n / 2 {
            *v = Complex64::new(0.0, 0.0);
            continue;
        }
        let omega = 2.0 * PI * signed * rate / n as f64;
        *v *= Complex64::new(0.0, omega);
    }
    inverse.process(&mut buf);
    buf.iter().map(|v| v.re / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone_record(frequency: f64, n: usize) -> TimeSeriesRecord {
        TimeSeriesRecord {
            sensor_id: "s".into(),
            station_id: "a".into(),
            start_time: 1_000_000_000,
            sample_rate: 1000.0,
            samples: (0..n)
                .map(|i| (2.0 * PI * frequency * i as f64 / 1000.0).cos())
                .collect(),
        }
    }

    #[test]
    fn zero_error_is_identity() {
        let r = tone_record(37.0, 1000);
        assert_eq!(apply_clock_error(&r, 0.0, 0.0, 9).unwrap(), r);
    }

    #[test]
    fn offset_moves_the_stamp_only() {
        let r = tone_record(37.0, 100);
        let shifted = apply_clock_error(&r, 1e-3, 0.0, 9).unwrap();
        assert_eq!(shifted.start_time, r.start_time + 1_000_000);
        assert_eq!(shifted.samples, r.samples);
        let back = apply_clock_error(&r, -0.5, 0.0, 9).unwrap();
        assert_eq!(back.start_time, r.start_time - 500_000_000);
        assert!(apply_clock_error(&r, 1.0, 0.0, 9).is_err());
    }

    #[test]
    fn derivative_of_periodic_tone_is_exact() {
        let r = tone_record(50.0, 1000);
        let d = spectral_derivative(&r.samples, 1000.0);
        for (i, v) in d.iter().enumerate() {
            let expected = -2.0 * PI * 50.0 * (2.0 * PI * 50.0 * i as f64 / 1000.0).sin();
            assert!((v - expected).abs() < 1e-9 * 2.0 * PI * 50.0);
        }
    }

    #[test]
    fn microsecond_jitter_barely_touches_tone_amplitude() {
        // Lock-in amplitude of a 400 Hz tone before and after 1 us rms jitter,
        // over several seeds.
        let f = 400.0;
        let r = tone_record(f, 100_000);
        for seed in 0..5 {
            let j = apply_clock_error(&r, 0.0, 1e-6, seed).unwrap();
            let (mut c, mut s) = (0.0, 0.0);
            for (i, x) in j.samples.iter().enumerate() {
                let ph = 2.0 * PI * f * i as f64 / 1000.0;
                c += x * ph.cos();
                s += x * ph.sin();
            }
            let amp = 2.0 * (c * c + s * s).sqrt() / j.samples.len() as f64;
            assert!((amp - 1.0).abs() < 1e-4, "seed {seed}: {amp}");
        }
    }

    #[test]
    fn millisecond_offset_is_a_phase_shift_after_alignment() {
        use crate::correlator::{welch_cross_spectrum, SpectralConfig, Window};
        let r = tone_record(100.0, 20_001);
        let shifted = apply_clock_error(&r, 1e-3, 0.0, 0).unwrap();
        // Align both records on their common GPS window: one sample at 1 kHz.
        let mut a = r.clone();
        a.samples = r.samples[1..].to_vec();
        a.start_time = shifted.start_time;
        let mut b = shifted.clone();
        b.samples.truncate(20_000);
        b.sensor_id = "t".into();
        let cfg = SpectralConfig {
            segment_length: 10_000,
            overlap_fraction: 0.5,
            window: Window::Hann,
            band: [1.0, 500.0],
        };
        let cs = welch_cross_spectrum(&a, &b, &cfg).unwrap();
        let k = cs.grid.index_of(100.0).unwrap();
        let phase = cs.values[k].arg().abs();
        assert!((phase - 2.0 * PI * 100.0 * 1e-3).abs() < 1e-9, "{phase}");
    }
}
