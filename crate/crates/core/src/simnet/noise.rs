use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::rng::StreamKey;

/// Spectral shape of a noise stream.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseShape {
    #[default]
    White,
    /// Approximately 1/f in power, scaled so the ASD equals the configured
    /// value at `reference_hz`.
    Pink { reference_hz: f64 },
}

// Corner frequencies of the first-order sections summed for the 1/f shape.
fn pink_corners(rate: f64) -> Vec<f64> {
    let mut corners = Vec::new();
    let mut fc = 1e-3;
    while fc < rate / 2.0 {
        corners.push(fc);
        fc *= 4.0;
    }
    corners
}

fn pink_response(corners: &[f64], rate: f64, frequency: f64) -> f64 {
    let z = Complex64::from_polar(1.0, -2.0 * PI * frequency / rate);
    corners
        .iter()
        .map(|&fc| {
            let a = (-2.0 * PI * fc / rate).exp();
            let gain = fc.powf(-0.5);
            Complex64::new(gain * (1.0 - a), 0.0) / (Complex64::new(1.0, 0.0) - z * a)
        })
        .sum::<Complex64>()
        .norm()
}

pub(crate) fn shaped_noise(key: &StreamKey, n: usize, rate: f64, asd: f64, shape: &NoiseShape) -> Vec<f64> {
    match *shape {
        NoiseShape::White => key.gaussian(n, asd * (rate / 2.0).sqrt()),
        NoiseShape::Pink { reference_hz } => {
            let white = key.gaussian(n, (rate / 2.0).sqrt());
            let corners = pink_corners(rate);
            let scale = asd / pink_response(&corners, rate, reference_hz);
            let mut out = vec![0.0; n];
            for &fc in &corners {
                let a = (-2.0 * PI * fc / rate).exp();
                let gain = scale * fc.powf(-0.5) * (1.0 - a);
                let mut state = 0.0;
                for (o, w) in out.iter_mut().zip(&white) {
                    state = a * state + w;
                    *o += gain * state;
                }
            }
            out
        }
    }
}
