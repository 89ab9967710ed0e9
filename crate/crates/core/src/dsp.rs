//! FFT-backed filtering, resampling and spectral estimation shared by the
//! transmitter and receiver chains.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub fn fft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    FftPlanner::new().plan_fft_forward(buf.len()).process(buf);
}

/// Inverse FFT normalised by 1/N.
pub fn ifft_in_place(buf: &mut [Complex64]) {
    if buf.is_empty() {
        return;
    }
    FftPlanner::new().plan_fft_inverse(buf.len()).process(buf);
    let scale = 1.0 / buf.len() as f64;
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Bin frequencies in FFT order.
pub fn fft_freqs(n: usize, sample_rate: f64) -> Vec<f64> {
    let df = sample_rate / n as f64;
    (0..n)
        .map(|k| {
            if k <= (n - 1) / 2 {
                k as f64 * df
            } else {
                (k as f64 - n as f64) * df
            }
        })
        .collect()
}

/// Anything with a complex frequency response.
pub trait FrequencyResponse {
    fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64;
}

impl<F: Fn(f64) -> Complex64> FrequencyResponse for F {
    fn response(&self, freq_hz: f64, _sample_rate: f64) -> Complex64 {
        self(freq_hz)
    }
}

/// Linear convolution, cropped so that tap `center` lands at zero delay.
pub fn convolve_centered(x: &[Complex64], taps: &[Complex64], center: usize) -> Vec<Complex64> {
    if x.is_empty() || taps.is_empty() {
        return vec![Complex64::new(0.0, 0.0); x.len()];
    }
    let full = convolve_full(x, taps);
    full[center..center + x.len()].to_vec()
}

/// 'same'-mode convolution for odd-length, centre-aligned taps.
pub fn convolve_same(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    convolve_centered(x, taps, (taps.len().saturating_sub(1)) / 2)
}

pub fn convolve_full(x: &[Complex64], taps: &[Complex64]) -> Vec<Complex64> {
    let n = x.len() + taps.len() - 1;
    if taps.len() <= 16 {
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (i, &xv) in x.iter().enumerate() {
            for (k, &h) in taps.iter().enumerate() {
                out[i + k] += xv * h;
            }
        }
        return out;
    }
    let nfft = n.next_power_of_two();
    let mut a = vec![Complex64::new(0.0, 0.0); nfft];
    let mut b = vec![Complex64::new(0.0, 0.0); nfft];
    a[..x.len()].copy_from_slice(x);
    b[..taps.len()].copy_from_slice(taps);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(nfft);
    fwd.process(&mut a);
    fwd.process(&mut b);
    a.iter_mut().zip(&b).for_each(|(u, v)| *u *= v);
    planner.plan_fft_inverse(nfft).process(&mut a);
    let scale = 1.0 / nfft as f64;
    a.truncate(n);
    a.iter_mut().for_each(|v| *v *= scale);
    a
}

pub fn real_taps(taps: &[f64]) -> Vec<Complex64> {
    taps.iter().map(|&t| Complex64::new(t, 0.0)).collect()
}

/// DTFT of centre-referenced taps at one frequency.
pub fn fir_response(taps: &[Complex64], center: usize, freq_hz: f64, sample_rate: f64) -> Complex64 {
    let w = 2.0 * PI * freq_hz / sample_rate;
    taps.iter()
        .enumerate()
        .map(|(k, &h)| h * Complex64::from_polar(1.0, -w * (k as f64 - center as f64)))
        .sum()
}

/// Frequency-sampling FIR design. `bins` is the desired response on an
/// `n`-point FFT grid (FFT order); returned taps are centred at `(n-1)/2`.
pub fn fir_from_bins(bins: &[Complex64]) -> Vec<Complex64> {
    let n = bins.len();
    let mut h = bins.to_vec();
    ifft_in_place(&mut h);
    let c = (n - 1) / 2;
    (0..n).map(|k| h[(k + n - c) % n]).collect()
}

/// Band-limited resampling through the DFT. The trace length must map to an
/// integer number of output samples. With `preserve_energy` the amplitude is
/// scaled by sqrt(in/out) so a pulse keeps its energy per sample-sum.
pub fn resample(
    x: &[Complex64],
    rate_in: f64,
    rate_out: f64,
    preserve_energy: bool,
) -> Result<Vec<Complex64>> {
    let n = x.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let m_f = n as f64 * rate_out / rate_in;
    let m = m_f.round() as usize;
    if (m_f - m as f64).abs() > 1e-6 || m == 0 {
        return Err(Error::param(
            "resample",
            format!("{n} samples at ratio {} is not an integer length", rate_out / rate_in),
        ));
    }
    if m == n {
        return Ok(x.to_vec());
    }
    let mut spec = x.to_vec();
    fft_in_place(&mut spec);
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let keep = n.min(m);
    let half = keep / 2;
    // Bins strictly inside (-keep/2, keep/2).
    let pos = if keep % 2 == 0 { half } else { half + 1 };
    let neg = if keep % 2 == 0 { half - 1 } else { half };
    out[..pos].copy_from_slice(&spec[..pos]);
    for k in 1..=neg {
        out[m - k] = spec[n - k];
    }
    if keep % 2 == 0 && half > 0 {
        // Nyquist bin of the shorter grid.
        if m > n {
            let v = spec[half] * 0.5;
            out[half] = v;
            out[m - half] = v;
        } else {
            out[half] = spec[half] + spec[n - half];
        }
    }
    ifft_in_place(&mut out);
    let mut scale = m as f64 / n as f64;
    if preserve_energy {
        scale *= (n as f64 / m as f64).sqrt();
    }
    out.iter_mut().for_each(|v| *v *= scale);
    Ok(out)
}

/// Welch PSD (Hann window, 50 % overlap), FFT order. Normalised so white
/// noise of total complex variance s2 gives a flat level of s2.
pub fn welch_psd(x: &[Complex64], nfft: usize) -> Vec<f64> {
    assert!(nfft >= 2 && x.len() >= nfft, "trace shorter than one segment");
    let window: Vec<f64> = (0..nfft)
        .map(|k| 0.5 - 0.5 * (2.0 * PI * k as f64 / nfft as f64).cos())
        .collect();
    let wpow: f64 = window.iter().map(|w| w * w).sum();
    let step = nfft / 2;
    let mut acc = vec![0.0; nfft];
    let mut segments = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let fwd = FftPlanner::new().plan_fft_forward(nfft);
    let mut start = 0;
    while start + nfft <= x.len() {
        for (k, b) in buf.iter_mut().enumerate() {
            *b = x[start + k] * window[k];
        }
        fwd.process(&mut buf);
        acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b.norm_sqr());
        segments += 1;
        start += step;
    }
    let norm = 1.0 / (segments as f64 * wpow);
    acc.iter_mut().for_each(|a| *a *= norm);
    acc
}

/// First-order recursive low-pass y[n] = (1-a) x[n] + a y[n-1]. Stateful, so a
/// trace can be streamed through in chunks.
#[derive(Debug, Clone)]
pub struct OnePole {
    pub a: f64,
    state: Complex64,
}

impl OnePole {
    pub fn new(a: f64) -> Self {
        assert!((0.0..1.0).contains(&a), "pole must lie in [0, 1)");
        Self {
            a,
            state: Complex64::new(0.0, 0.0),
        }
    }

    /// Pole placed so that |H(freq)| = magnitude.
    pub fn with_magnitude_at(freq_hz: f64, magnitude: f64, sample_rate: f64) -> Self {
        assert!(magnitude > 0.0 && magnitude < 1.0);
        // |H|^2 = (1-a)^2 / (1 - 2a cos w + a^2) = m^2, quadratic in a.
        let cw = (2.0 * PI * freq_hz / sample_rate).cos();
        let m2 = magnitude * magnitude;
        let qa = 1.0 - m2;
        let qb = -2.0 + 2.0 * m2 * cw;
        let qc = 1.0 - m2;
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
        let a = (-qb - disc) / (2.0 * qa);
        Self::new(a)
    }

    /// Pole placed at the 3 dB corner.
    pub fn with_corner(corner_hz: f64, sample_rate: f64) -> Self {
        Self::with_magnitude_at(corner_hz, std::f64::consts::FRAC_1_SQRT_2, sample_rate)
    }

    pub fn process(&mut self, x: &mut [Complex64]) {
        let b = 1.0 - self.a;
        for v in x.iter_mut() {
            self.state = *v * b + self.state * self.a;
            *v = self.state;
        }
    }

    pub fn reset(&mut self) {
        self.state = Complex64::new(0.0, 0.0);
    }
}

impl FrequencyResponse for OnePole {
    fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / sample_rate;
        let den = Complex64::new(1.0, 0.0) - Complex64::from_polar(self.a, -w);
        Complex64::new(1.0 - self.a, 0.0) / den
    }
}

pub fn mean_power(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v.norm_sqr()).sum::<f64>() / x.len() as f64
}

/// Pairwise summation, keeps accumulation order fixed and error O(log n).
pub fn pairwise_sum(x: &[f64]) -> f64 {
    if x.len() <= 64 {
        return x.iter().sum();
    }
    let (a, b) = x.split_at(x.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Unit-step mid-rise quantiser on both quadratures over [-full_scale, full_scale].
pub fn quantize(x: &mut [Complex64], bits: u32, full_scale: f64) {
    if full_scale <= 0.0 {
        return;
    }
    let levels = (1u64 << bits) as f64;
    let step = 2.0 * full_scale / levels;
    let max_code = levels / 2.0 - 0.5;
    let q = |v: f64| -> f64 {
        let code = (v / step - 0.5).round().clamp(-max_code - 0.5, max_code - 0.5);
        (code + 0.5) * step
    };
    for v in x.iter_mut() {
        *v = Complex64::new(q(v.re), q(v.im));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tone(n: usize, f: f64, fs: f64) -> Vec<Complex64> {
        (0..n)
            .map(|k| Complex64::from_polar(1.0, 2.0 * PI * f * k as f64 / fs))
            .collect()
    }

    #[test]
    fn convolution_fft_matches_direct() {
        let x: Vec<_> = (0..100).map(|k| Complex64::new((k as f64).sin(), 0.3 * k as f64 % 1.0)).collect();
        let h: Vec<_> = (0..33).map(|k| Complex64::new(1.0 / (1.0 + k as f64), 0.1)).collect();
        let fast = convolve_full(&x, &h);
        let mut slow = vec![Complex64::new(0.0, 0.0); x.len() + h.len() - 1];
        for i in 0..x.len() {
            for k in 0..h.len() {
                slow[i + k] += x[i] * h[k];
            }
        }
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn resample_preserves_tone() {
        let fs = 32e9;
        let x = tone(640, 3e9, fs);
        let y = resample(&x, fs, 80e9, false).unwrap();
        assert_eq!(y.len(), 1600);
        let expect = tone(1600, 3e9, 80e9);
        for (a, b) in y.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-9);
        }
        let ye = resample(&x, fs, 80e9, true).unwrap();
        assert_relative_eq!(mean_power(&ye) * 1600.0, mean_power(&x) * 640.0, max_relative = 1e-9);
    }

    #[test]
    fn resample_rejects_fractional_length() {
        assert!(resample(&tone(3, 1.0, 10.0), 32e9, 80e9, false).is_err());
    }

    #[test]
    fn one_pole_hits_requested_magnitude() {
        let p = OnePole::with_magnitude_at(13e9, 0.5, 32e9);
        assert_relative_eq!(p.response(13e9, 32e9).norm(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(p.response(0.0, 32e9).norm(), 1.0, epsilon = 1e-12);
        let c = OnePole::with_corner(20e9, 80e9);
        assert_relative_eq!(c.response(20e9, 80e9).norm_sqr(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn one_pole_streams() {
        let x: Vec<_> = (0..50).map(|k| Complex64::new(k as f64, -(k as f64))).collect();
        let mut whole = x.clone();
        OnePole::new(0.3).process(&mut whole);
        let mut f = OnePole::new(0.3);
        let (mut a, mut b) = (x[..20].to_vec(), x[20..].to_vec());
        f.process(&mut a);
        f.process(&mut b);
        a.extend(b);
        assert_eq!(a, whole);
    }

    #[test]
    fn welch_white_level() {
        let mut rng = crate::rng::stream(1, 0);
        let x: Vec<_> = (0..1 << 16).map(|_| crate::rng::complex_normal(&mut rng, 0.5)).collect();
        let p = welch_psd(&x, 256);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert_relative_eq!(mean, 1.0, max_relative = 0.02);
    }

    #[test]
    fn quantizer_error_bounded() {
        let mut x: Vec<_> = (0..1000).map(|k| Complex64::new((k as f64 * 0.01).sin(), (k as f64 * 0.013).cos())).collect();
        let orig = x.clone();
        quantize(&mut x, 8, 1.0);
        let step = 2.0 / 256.0;
        for (a, b) in x.iter().zip(&orig) {
            assert!((a.re - b.re).abs() <= step / 2.0 + 1e-12);
            assert!((a.im - b.im).abs() <= step / 2.0 + 1e-12);
        }
    }
}
