use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::{FrequencyGrid, SpectralConfig};
use crate::error::{Error, Result};
use crate::simnet::{SensorKey, TimeSeriesRecord};

/// How records are cut into windowed segments, and the resulting grid.
#[derive(Debug, Clone)]
pub struct Segmentation {
    pub sample_rate: f64,
    pub segment_length: usize,
    pub hop: usize,
    pub n_segments: usize,
    pub window: Vec<f64>,
    /// One-sided PSD normalization, 2 / (fs * sum w^2).
    pub psd_scale: f64,
    pub grid: FrequencyGrid,
    /// Variance inflation of a segment average caused by overlap (>= 1).
    pub overlap_factor: f64,
}

impl Segmentation {
    pub fn new(cfg: &SpectralConfig, sample_rate: f64, record_len: usize) -> Result<Self> {
        cfg.validate(sample_rate, record_len)?;
        let n = cfg.segment_length;
        let hop = ((n as f64 * (1.0 - cfg.overlap_fraction)).round() as usize).max(1);
        let n_segments = (record_len - n) / hop + 1;
        let window = cfg.window.coefficients(n);
        let energy: f64 = window.iter().map(|w| w * w).sum();
        let df = sample_rate / n as f64;

        let [lo, hi] = cfg.band;
        let first = ((lo / df) - 1e-9).ceil().max(1.0) as usize;
        let last_in_band = ((hi / df) + 1e-9).floor() as usize;
        // DC and Nyquist bins are excluded.
        let last = last_in_band.min((n - 1) / 2);
        let len = if last >= first { last - first + 1 } else { 0 };

        let mut inflation = 1.0;
        for j in 1..n_segments {
            let lag = j * hop;
            if lag >= n {
                break;
            }
            let rho: f64 = window[..n - lag]
                .iter()
                .zip(&window[lag..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / energy;
            inflation += 2.0 * (1.0 - j as f64 / n_segments as f64) * rho * rho;
        }

        Ok(Self {
            sample_rate,
            segment_length: n,
            hop,
            n_segments,
            psd_scale: 2.0 / (sample_rate * energy),
            window,
            grid: FrequencyGrid {
                first_bin: first,
                df,
                len,
            },
            overlap_factor: inflation,
        })
    }

    /// Number of independent segments with the same averaging power.
    pub fn effective_segments(&self) -> f64 {
        self.n_segments as f64 / self.overlap_factor
    }

    /// Amplitude correlation of the same bin in consecutive segments.
    pub fn adjacent_correlation(&self) -> f64 {
        let n = self.segment_length;
        if self.hop >= n {
            return 0.0;
        }
        let energy: f64 = self.window.iter().map(|w| w * w).sum();
        self.window[..n - self.hop]
            .iter()
            .zip(&self.window[self.hop..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / energy
    }
}

/// Complex cross-power spectral density of one sensor pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSpectrum {
    pub a: SensorKey,
    pub b: SensorKey,
    pub grid: FrequencyGrid,
    /// Segment-averaged `X_a conj(X_b)`, T^2/Hz.
    pub values: Vec<Complex64>,
    /// Variance of each bin's averaged real part, estimated from the
    /// segment-to-segment scatter and corrected for overlap.
    pub re_var: Vec<f64>,
    pub n_segments: usize,
    pub effective_segments: f64,
    pub same_station: bool,
}

impl CrossSpectrum {
    pub fn real(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.grid.frequencies()
    }

    pub fn conj(&self) -> CrossSpectrum {
        CrossSpectrum {
            a: self.b.clone(),
            b: self.a.clone(),
            values: self.values.iter().map(|v| v.conj()).collect(),
            ..self.clone()
        }
    }
}

struct SegmentTransform {
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl SegmentTransform {
    fn new(fft: Arc<dyn Fft<f64>>) -> Self {
        let n = fft.len();
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Self {
            fft,
            buf: vec![Complex64::default(); n],
            scratch,
        }
    }

    /// Band spectra of one or two real segments, scaled so that products are
    /// in PSD units.
    fn band_spectra(
        &mut self,
        seg: &Segmentation,
        x: &[f64],
        y: Option<&[f64]>,
        out_x: &mut [Complex64],
        out_y: Option<&mut [Complex64]>,
    ) {
        let n = seg.segment_length;
        match y {
            Some(y) => {
                for i in 0..n {
                    self.buf[i] = Complex64::new(seg.window[i] * x[i], seg.window[i] * y[i]);
                }
            }
            None => {
                for i in 0..n {
                    self.buf[i] = Complex64::new(seg.window[i] * x[i], 0.0);
                }
            }
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let amp = seg.psd_scale.sqrt();
        let first = seg.grid.first_bin;
        match out_y {
            Some(out_y) => {
                for (i, (ox, oy)) in out_x.iter_mut().zip(out_y.iter_mut()).enumerate() {
                    let k = first + i;
                    let z = self.buf[k];
                    let zc = self.buf[n - k].conj();
                    *ox = (z + zc) * (0.5 * amp);
                    // (z - zc) / 2i
                    let d = z - zc;
                    *oy = Complex64::new(d.im, -d.re) * (0.5 * amp);
                }
            }
            None => {
                for (i, ox) in out_x.iter_mut().enumerate() {
                    *ox = self.buf[first + i] * amp;
                }
            }
        }
    }
}

struct Accumulator {
    sum: Vec<Complex64>,
    shift: Vec<f64>,
    sum_d2: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![Complex64::default(); len],
            shift: vec![0.0; len],
            sum_d2: vec![0.0; len],
        }
    }

    fn add(&mut self, x: &[Complex64], y: &[Complex64], first: bool) {
        if first {
            for k in 0..x.len() {
                let p = x[k] * y[k].conj();
                self.sum[k] += p;
                self.shift[k] = p.re;
            }
        } else {
            for k in 0..x.len() {
                let p = x[k] * y[k].conj();
                self.sum[k] += p;
                let d = p.re - self.shift[k];
                self.sum_d2[k] += d * d;
            }
        }
    }

    fn finish(
        self,
        a: SensorKey,
        b: SensorKey,
        seg: &Segmentation,
    ) -> CrossSpectrum {
        let k_seg = seg.n_segments as f64;
        let values: Vec<Complex64> = self.sum.iter().map(|s| s / k_seg).collect();
        let re_var = if seg.n_segments > 1 {
            values
                .iter()
                .zip(&self.shift)
                .zip(&self.sum_d2)
                .map(|((v, shift), d2)| {
                    let mean_d = v.re - shift;
                    let var = (d2 - k_seg * mean_d * mean_d) / (k_seg - 1.0);
                    var.max(0.0) * seg.overlap_factor / k_seg
                })
                .collect()
        } else {
            values.iter().map(|v| v.norm_sqr() / 2.0).collect()
        };
        CrossSpectrum {
            same_station: a.station_id == b.station_id,
            a,
            b,
            grid: seg.grid,
            values,
            re_var,
            n_segments: seg.n_segments,
            effective_segments: seg.effective_segments(),
        }
    }
}

/// Cross spectra for the listed index pairs, plus auto-spectra for every
/// record when `with_autos` is set. Records must be aligned.
///
/// Accumulation runs in segment order for every pair, so results are the
/// same for any number of worker threads.
pub fn compute_spectra(
    records: &[&TimeSeriesRecord],
    pairs: &[(usize, usize)],
    with_autos: bool,
    cfg: &SpectralConfig,
) -> Result<(Vec<CrossSpectrum>, Vec<CrossSpectrum>)> {
    let (autos, cross, _) = compute_spectra_tracked(records, pairs, with_autos, false, cfg)?;
    Ok((autos, cross))
}

/// Variance of the uniform all-pair, same-station and cross-station means,
/// from the segment-to-segment scatter of the mean itself. Unlike a sum of
/// per-pair variances this keeps the covariance of pairs that share a
/// sensor or a station's common-mode noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetVariance {
    pub all: Vec<f64>,
    pub same_station: Option<Vec<f64>>,
    pub cross_station: Option<Vec<f64>>,
}

struct ScatterAcc {
    sum: Vec<f64>,
    shift: Vec<f64>,
    sum_d2: Vec<f64>,
}

impl ScatterAcc {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            shift: vec![0.0; len],
            sum_d2: vec![0.0; len],
        }
    }

    fn add(&mut self, k: usize, v: f64, first: bool) {
        self.sum[k] += v;
        if first {
            self.shift[k] = v;
        } else {
            let d = v - self.shift[k];
            self.sum_d2[k] += d * d;
        }
    }

    fn variance(&self, seg: &Segmentation) -> Vec<f64> {
        let k_seg = seg.n_segments as f64;
        (0..self.sum.len())
            .map(|k| {
                let mean = self.sum[k] / k_seg;
                if seg.n_segments > 1 {
                    let mean_d = mean - self.shift[k];
                    let var = (self.sum_d2[k] - k_seg * mean_d * mean_d) / (k_seg - 1.0);
                    var.max(0.0) * seg.overlap_factor / k_seg
                } else {
                    mean * mean / 2.0
                }
            })
            .collect()
    }
}

/// [`compute_spectra`] over every pair, also tracking the scatter of the
/// uniform subset means.
pub(crate) fn compute_spectra_tracked(
    records: &[&TimeSeriesRecord],
    pairs: &[(usize, usize)],
    with_autos: bool,
    track_subsets: bool,
    cfg: &SpectralConfig,
) -> Result<(Vec<CrossSpectrum>, Vec<CrossSpectrum>, Option<SubsetVariance>)> {
    let Some(first) = records.first() else {
        return Ok((Vec::new(), Vec::new(), None));
    };
    for r in records {
        if !r.is_aligned_with(first) {
            return Err(Error::Misaligned(format!(
                "{} and {} differ in start, rate or length",
                first.key(),
                r.key()
            )));
        }
    }
    let seg = Segmentation::new(cfg, first.sample_rate, first.samples.len())?;
    let nb = seg.grid.len;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(seg.segment_length);

    let mut pair_acc: Vec<Accumulator> = pairs.iter().map(|_| Accumulator::new(nb)).collect();
    let mut auto_acc: Vec<Accumulator> = if with_autos {
        records.iter().map(|_| Accumulator::new(nb)).collect()
    } else {
        Vec::new()
    };
    let mut spectra: Vec<Vec<Complex64>> = vec![vec![Complex64::default(); nb]; records.len()];

    let mut station_of = Vec::with_capacity(records.len());
    let mut stations: Vec<&str> = Vec::new();
    for r in records {
        match stations.iter().position(|s| *s == r.station_id) {
            Some(i) => station_of.push(i),
            None => {
                stations.push(&r.station_id);
                station_of.push(stations.len() - 1);
            }
        }
    }
    let n = records.len();
    let n_all = n * n.saturating_sub(1) / 2;
    let n_same: usize = (0..stations.len())
        .map(|st| {
            let m = station_of.iter().filter(|&&s| s == st).count();
            m * m.saturating_sub(1) / 2
        })
        .sum();
    let n_cross = n_all - n_same;
    let mut scatter = if track_subsets && n_all > 0 {
        Some([ScatterAcc::new(nb), ScatterAcc::new(nb), ScatterAcc::new(nb)])
    } else {
        None
    };

    for s in 0..seg.n_segments {
        let start = s * seg.hop;
        let end = start + seg.segment_length;
        spectra.par_chunks_mut(2).enumerate().for_each_init(
            || SegmentTransform::new(fft.clone()),
            |transform, (chunk, outs)| {
                let i = 2 * chunk;
                let x = &records[i].samples[start..end];
                match outs {
                    [ox, oy] => {
                        let y = &records[i + 1].samples[start..end];
                        transform.band_spectra(&seg, x, Some(y), ox, Some(oy));
                    }
                    [ox] => transform.band_spectra(&seg, x, None, ox, None),
                    _ => unreachable!(),
                }
            },
        );
        let spectra = &spectra;
        pair_acc
            .par_iter_mut()
            .zip(pairs.par_iter())
            .for_each(|(acc, &(i, j))| acc.add(&spectra[i], &spectra[j], s == 0));
        auto_acc
            .par_iter_mut()
            .enumerate()
            .for_each(|(i, acc)| acc.add(&spectra[i], &spectra[i], s == 0));
        if let Some([all, same, cross]) = scatter.as_mut() {
            let mut station_sum = vec![Complex64::default(); stations.len()];
            let mut station_power = vec![0.0; stations.len()];
            for k in 0..nb {
                station_sum.fill(Complex64::default());
                station_power.fill(0.0);
                for (i, sp) in spectra.iter().enumerate() {
                    station_sum[station_of[i]] += sp[k];
                    station_power[station_of[i]] += sp[k].norm_sqr();
                }
                let total: Complex64 = station_sum.iter().sum();
                let power: f64 = station_power.iter().sum();
                // sum_{i<j} Re X_i conj(X_j), overall and within stations.
                let all_sum = 0.5 * (total.norm_sqr() - power);
                let same_sum: f64 = station_sum
                    .iter()
                    .zip(&station_power)
                    .map(|(z, p)| 0.5 * (z.norm_sqr() - p))
                    .sum();
                all.add(k, all_sum / n_all as f64, s == 0);
                if n_same > 0 {
                    same.add(k, same_sum / n_same as f64, s == 0);
                }
                if n_cross > 0 {
                    cross.add(k, (all_sum - same_sum) / n_cross as f64, s == 0);
                }
            }
        }
    }
    let subset_variance = scatter.map(|[all, same, cross]| SubsetVariance {
        all: all.variance(&seg),
        same_station: (n_same > 0).then(|| same.variance(&seg)),
        cross_station: (n_cross > 0).then(|| cross.variance(&seg)),
    });

    let finish = |acc: Accumulator, i: usize, j: usize| acc.finish(records[i].key(), records[j].key(), &seg);
    let cross = pair_acc
        .into_iter()
        .zip(pairs)
        .map(|(acc, &(i, j))| finish(acc, i, j))
        .collect();
    let autos = auto_acc
        .into_iter()
        .enumerate()
        .map(|(i, acc)| {
            let mut spectrum = finish(acc, i, i);
            // X conj(X) is real up to rounding; make it exact.
            for v in &mut spectrum.values {
                v.im = 0.0;
            }
            spectrum
        })
        .collect();
    Ok((autos, cross, subset_variance))
}

/// Welch cross-spectral density of two aligned records.
pub fn welch_cross_spectrum(
    x: &TimeSeriesRecord,
    y: &TimeSeriesRecord,
    cfg: &SpectralConfig,
) -> Result<CrossSpectrum> {
    if !x.is_aligned_with(y) {
        return Err(Error::Misaligned(format!("{} vs {}", x.key(), y.key())));
    }
    if x.key() == y.key() && x.samples == y.samples {
        let (mut autos, _) = compute_spectra(&[x], &[], true, cfg)?;
        return Ok(autos.remove(0));
    }
    // Transforms are packed in pairs, so fix the packing order to make
    // swapped arguments give exactly conjugated results.
    if y.key() < x.key() {
        return Ok(welch_cross_spectrum(y, x, cfg)?.conj());
    }
    let (_, mut cross) = compute_spectra(&[x, y], &[(0, 1)], false, cfg)?;
    Ok(cross.remove(0))
}

#[cfg(test)]
mod tests {
    use super::super::Window;
    use super::*;
    use crate::rng::StreamKey;

    fn record(id: &str, station: &str, samples: Vec<f64>) -> TimeSeriesRecord {
        TimeSeriesRecord {
            sensor_id: id.into(),
            station_id: station.into(),
            start_time: 0,
            sample_rate: 1000.0,
            samples,
        }
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        StreamKey::new(seed, &["engine-test"]).gaussian(n, 1.0)
    }

    fn cfg(segment_length: usize, window: Window) -> SpectralConfig {
        SpectralConfig {
            segment_length,
            overlap_fraction: 0.5,
            window,
            band: [1.0, 500.0],
        }
    }

    #[test]
    fn segmentation_counts_and_grid() {
        let seg = Segmentation::new(&SpectralConfig::default(), 1000.0, 2_000_000).unwrap();
        assert_eq!(seg.n_segments, 39);
        assert_eq!(seg.grid.first_bin, 100);
        assert_eq!(seg.grid.len, 49_900);
        assert!((seg.grid.frequency(seg.grid.len - 1) - 499.99).abs() < 1e-9);
        // Hann at 50% overlap: adjacent amplitude correlation 1/6.
        let rho = seg.adjacent_correlation();
        assert!((rho - 1.0 / 6.0).abs() < 1e-9, "{rho}");
        let expected = 1.0 + 2.0 * (1.0 - 1.0 / 39.0) / 36.0;
        assert!((seg.overlap_factor - expected).abs() < 1e-9);
    }

    #[test]
    fn unit_white_noise_auto_psd_is_two_over_rate() {
        let x = record("x", "a", noise(1, 400_000));
        let s = welch_cross_spectrum(&x, &x, &cfg(2000, Window::Hann)).unwrap();
        let mean = s.values.iter().map(|v| v.re).sum::<f64>() / s.values.len() as f64;
        assert!((mean / 2e-3 - 1.0).abs() < 0.05, "mean {mean}");
        assert!(s.values.iter().all(|v| v.im == 0.0 && v.re >= 0.0));
    }

    #[test]
    fn independent_noise_cross_spectrum_has_zero_mean() {
        let x = record("x", "a", noise(1, 400_000));
        let y = record("y", "a", noise(2, 400_000));
        let s = welch_cross_spectrum(&x, &y, &cfg(2000, Window::Hann)).unwrap();
        let re = s.real();
        let n = re.len() as f64;
        let mean = re.iter().sum::<f64>() / n;
        let std = (re.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 3.0 * std / n.sqrt());
    }

    #[test]
    fn swapping_inputs_conjugates_exactly() {
        let x = record("x", "a", noise(3, 50_000));
        let y = record("y", "b", noise(4, 50_000));
        let c = cfg(5000, Window::Hann);
        let xy = welch_cross_spectrum(&x, &y, &c).unwrap();
        let yx = welch_cross_spectrum(&y, &x, &c).unwrap();
        for (a, b) in xy.values.iter().zip(&yx.values) {
            assert_eq!(*a, b.conj());
        }
        assert_eq!(xy.re_var, yx.re_var);
    }

    #[test]
    fn scaling_one_input_scales_spectrum() {
        let x = record("x", "a", noise(5, 50_000));
        let y = record("y", "b", noise(6, 50_000));
        let y2 = record("y", "b", y.samples.iter().map(|v| 2.0 * v).collect());
        let c = cfg(5000, Window::Rectangular);
        let a = welch_cross_spectrum(&x, &y, &c).unwrap();
        let b = welch_cross_spectrum(&x, &y2, &c).unwrap();
        for (p, q) in a.values.iter().zip(&b.values) {
            assert!((q - p * 2.0).norm() <= 1e-12 * p.norm().max(1e-300));
        }
    }

    #[test]
    fn packed_transform_matches_single_transforms() {
        let recs: Vec<TimeSeriesRecord> =
            (0..3).map(|i| record(&format!("s{i}"), "a", noise(10 + i, 20_000))).collect();
        let refs: Vec<&TimeSeriesRecord> = recs.iter().collect();
        let c = cfg(4000, Window::Hann);
        let (autos, cross) = compute_spectra(&refs, &[(0, 1), (0, 2), (1, 2)], true, &c).unwrap();
        let single = welch_cross_spectrum(&recs[1], &recs[2], &c).unwrap();
        for (a, b) in cross[2].values.iter().zip(&single.values) {
            assert!((a - b).norm() < 1e-12 * a.norm().max(1e-12));
        }
        let auto = welch_cross_spectrum(&recs[2], &recs[2], &c).unwrap();
        for (a, b) in autos[2].values.iter().zip(&auto.values) {
            assert!((a - b).norm() < 1e-12 * a.norm());
        }
    }

    #[test]
    fn scatter_variance_tracks_true_variance() {
        // Many realizations of the same pair: the spread of Re across
        // realizations should match the per-bin scatter estimate on average.
        let c = cfg(1000, Window::Hann);
        let mut values = Vec::new();
        let mut estimates = Vec::new();
        for seed in 0..40 {
            let x = record("x", "a", noise(100 + 2 * seed, 20_000));
            let y = record("y", "b", noise(101 + 2 * seed, 20_000));
            let s = welch_cross_spectrum(&x, &y, &c).unwrap();
            values.push(s.values[100].re);
            estimates.extend(s.re_var.iter().copied());
        }
        let mean_est = estimates.iter().sum::<f64>() / estimates.len() as f64;
        // Analytic: (S^2)^2 / 2 / K_eff with S^2 = 2e-3.
        let seg = Segmentation::new(&c, 1000.0, 20_000).unwrap();
        let analytic = 4e-6 / 2.0 / seg.effective_segments();
        assert!((mean_est / analytic - 1.0).abs() < 0.05, "{mean_est} vs {analytic}");
    }

    #[test]
    fn misaligned_inputs_are_rejected() {
        let x = record("x", "a", noise(1, 10_000));
        let mut y = record("y", "a", noise(2, 10_000));
        y.start_time = 1;
        assert!(matches!(
            welch_cross_spectrum(&x, &y, &cfg(1000, Window::Hann)),
            Err(Error::Misaligned(_))
        ));
    }
}
