use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::Serialize;

use super::engine::Segmentation;
use super::SpectralConfig;
use crate::error::{Error, Result};
use crate::simnet::TimeSeriesRecord;

/// Per-segment real cross-power, segment time by frequency.
#[derive(Debug, Clone, Serialize)]
pub struct Spectrogram {
    /// Segment centers, seconds from record start.
    pub times: Vec<f64>,
    pub frequencies: Vec<f64>,
    /// `re[segment][bin]`, T^2/Hz.
    pub re: Vec<Vec<f64>>,
}

/// Segment-resolved cross spectrum of two aligned records, keeping every
/// `decimate`-th bin of the band.
pub fn cross_spectrogram(
    x: &TimeSeriesRecord,
    y: &TimeSeriesRecord,
    cfg: &SpectralConfig,
    decimate: usize,
) -> Result<Spectrogram> {
    if !x.is_aligned_with(y) {
        return Err(Error::Misaligned(format!("{} vs {}", x.key(), y.key())));
    }
    let seg = Segmentation::new(cfg, x.sample_rate, x.samples.len())?;
    let step = decimate.max(1);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg.segment_length);
    let n = seg.segment_length;
    let mut buf = vec![Complex64::default(); n];
    let bins: Vec<usize> = (0..seg.grid.len).step_by(step).collect();
    let mut re = Vec::with_capacity(seg.n_segments);
    let mut times = Vec::with_capacity(seg.n_segments);
    for s in 0..seg.n_segments {
        let start = s * seg.hop;
        for i in 0..n {
            let w = seg.window[i];
            buf[i] = Complex64::new(w * x.samples[start + i], w * y.samples[start + i]);
        }
        fft.process(&mut buf);
        let row = bins
            .iter()
            .map(|&b| {
                let k = seg.grid.first_bin + b;
                let z = buf[k];
                let zc = buf[n - k].conj();
                let xk = (z + zc) * 0.5;
                let d = z - zc;
                let yk = Complex64::new(d.im, -d.re) * 0.5;
                (xk * yk.conj()).re * seg.psd_scale
            })
            .collect();
        re.push(row);
        times.push((start as f64 + n as f64 / 2.0) / x.sample_rate);
    }
    Ok(Spectrogram {
        times,
        frequencies: bins.iter().map(|&b| seg.grid.frequency(b)).collect(),
        re,
    })
}
