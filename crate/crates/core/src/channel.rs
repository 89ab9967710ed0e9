//! Physical-layer impairments and coherent detection.
//!
//! Noise conventions (per quadrature, symbol domain, SNU):
//! - excess noise is parameterised at the channel input (`eps_in`); the
//!   channel adds white noise of variance `T eps_in / 2` to the field, which
//!   after detection shows up as `eta_d T eps_in / 2`;
//! - the detector adds shot noise of variance 1 (heterodyne vacuum, already
//!   including the extra vacuum unit) and electronic noise `v_el`.
//!
//! Both stages are stateful simulators so a trace can be streamed in chunks
//! with identical results.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::dsp::{self, OnePole};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};
use crate::trace::{Role, WaveformTrace};

/// `eps_out = T eps_in`.
pub fn excess_out_from_in(eps_in: f64, transmittance: f64) -> f64 {
    transmittance * eps_in
}

/// `eps_in = eps_out / T`.
pub fn excess_in_from_out(eps_out: f64, transmittance: f64) -> f64 {
    eps_out / transmittance
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelParams {
    pub transmittance: f64,
    /// Excess noise referred to the channel input, SNU.
    pub excess_noise_in: f64,
    pub length_km: f64,
    pub freq_offset: f64,
    /// Combined transmitter + LO Lorentzian linewidth.
    pub linewidth_sum: f64,
    /// One-sided bandwidth of the quantum signal; bounds `|freq_offset|`.
    pub signal_half_band: f64,
    /// Propagation delay, in output samples, inserted ahead of the frame.
    pub delay_samples: usize,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            transmittance: 1.0,
            excess_noise_in: 0.0,
            length_km: 0.0,
            freq_offset: 2e9,
            linewidth_sum: 200.0,
            signal_half_band: 9.6e9,
            delay_samples: 0,
        }
    }
}

impl ChannelParams {
    pub fn ideal() -> Self {
        Self {
            freq_offset: 0.0,
            linewidth_sum: 0.0,
            ..Self::default()
        }
    }

    pub fn excess_noise_out(&self) -> f64 {
        excess_out_from_in(self.excess_noise_in, self.transmittance)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.transmittance > 0.0 && self.transmittance <= 1.0) {
            return Err(Error::param("transmittance", format!("{} not in (0, 1]", self.transmittance)));
        }
        if !(self.excess_noise_in >= 0.0) {
            return Err(Error::param("excess_noise_in", "must be >= 0"));
        }
        if !(self.linewidth_sum >= 0.0) {
            return Err(Error::param("linewidth_sum", "must be >= 0"));
        }
        if self.freq_offset.abs() >= self.signal_half_band {
            return Err(Error::FrequencyOffset {
                offset_hz: self.freq_offset,
                limit_hz: self.signal_half_band,
            });
        }
        Ok(())
    }
}

/// Streaming channel: loss, excess noise, LO frequency offset and Wiener phase noise.
#[derive(Debug, Clone)]
pub struct ChannelSim {
    params: ChannelParams,
    sample_rate: f64,
    rng: SimRng,
    phase_noise: f64,
    n: u64,
    delay_pending: usize,
}

impl ChannelSim {
    pub fn new(params: &ChannelParams, sample_rate: f64, seed: u64) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params: params.clone(),
            sample_rate,
            rng: rng::stream(seed, rng::streams::CHANNEL),
            phase_noise: 0.0,
            n: 0,
            delay_pending: params.delay_samples,
        })
    }

    /// Current Wiener phase, for ground-truth comparisons.
    pub fn phase_noise(&self) -> f64 {
        self.phase_noise
    }

    fn step(&mut self, x: Complex64) -> Complex64 {
        let p = &self.params;
        let noise_var = p.transmittance * p.excess_noise_in / 2.0;
        let noise = if noise_var > 0.0 {
            rng::complex_normal(&mut self.rng, noise_var)
        } else {
            Complex64::new(0.0, 0.0)
        };
        let t = self.n as f64 / self.sample_rate;
        let carrier = Complex64::from_polar(p.transmittance.sqrt(), 2.0 * PI * p.freq_offset * t + self.phase_noise);
        let out = x * carrier + noise;
        if p.linewidth_sum > 0.0 {
            let d: f64 = self.rng.sample(StandardNormal);
            self.phase_noise += d * (2.0 * PI * p.linewidth_sum / self.sample_rate).sqrt();
        }
        self.n += 1;
        out
    }

    pub fn process(&mut self, x: &[Complex64]) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(x.len() + self.delay_pending);
        while self.delay_pending > 0 {
            self.delay_pending -= 1;
            out.push(self.step(Complex64::new(0.0, 0.0)));
        }
        out.extend(x.iter().map(|&v| self.step(v)));
        out
    }

    /// Like [`process`](Self::process) but records the phase-noise path.
    pub fn process_with_phase(&mut self, x: &[Complex64]) -> (Vec<Complex64>, Vec<f64>) {
        let mut out = Vec::with_capacity(x.len());
        let mut phase = Vec::with_capacity(x.len());
        let zeros = self.delay_pending;
        self.delay_pending = 0;
        for v in std::iter::repeat(Complex64::new(0.0, 0.0)).take(zeros).chain(x.iter().copied()) {
            phase.push(self.phase_noise);
            out.push(self.step(v));
        }
        (out, phase)
    }
}

pub fn apply_channel(tx: &WaveformTrace, ch: &ChannelParams, seed: u64) -> Result<WaveformTrace> {
    tx.expect_role(&[Role::Signal], "signal")?;
    let mut sim = ChannelSim::new(ch, tx.sample_rate(), seed)?;
    let out = sim.process(&tx.samples);
    Ok(tx.with_samples(
        out,
        format!(
            "{} | channel: T={} eps_in={} df={:.3e} linewidth={} delay={}",
            tx.origin, ch.transmittance, ch.excess_noise_in, ch.freq_offset, ch.linewidth_sum, ch.delay_samples
        ),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    pub efficiency: f64,
    /// Electronic noise, SNU per quadrature.
    pub v_el: f64,
    pub adc_bits: u32,
    pub adc_rate: f64,
    pub rx_3db: f64,
    /// ADC range; `None` sets it to 4x the RMS of the trace being digitised.
    pub full_scale: Option<f64>,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            efficiency: 0.44,
            v_el: 0.15,
            adc_bits: 8,
            adc_rate: 80e9,
            rx_3db: 20e9,
            full_scale: None,
        }
    }
}

pub const ADC_FULL_SCALE_RMS: f64 = 4.0;

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(Error::param("efficiency", format!("{} not in (0, 1]", self.efficiency)));
        }
        if !(self.v_el >= 0.0) {
            return Err(Error::param("v_el", "must be >= 0"));
        }
        if !(4..=16).contains(&self.adc_bits) {
            return Err(Error::param("adc_bits", format!("{} not in [4, 16]", self.adc_bits)));
        }
        if !(self.rx_3db > 0.0 && self.rx_3db < self.adc_rate / 2.0) {
            return Err(Error::param("rx_3db", "must lie inside the ADC band"));
        }
        Ok(())
    }

    pub fn rx_response(&self) -> OnePole {
        OnePole::with_corner(self.rx_3db, self.adc_rate)
    }
}

/// Streaming intradyne front end: efficiency, shot noise, electronic noise,
/// receiver low-pass and ADC.
#[derive(Debug, Clone)]
pub struct Detector {
    params: DetectorParams,
    rng: SimRng,
    filter: OnePole,
    optical: bool,
}

impl Detector {
    /// `optical = false` models the LO-off acquisition (electronic noise only).
    pub fn new(params: &DetectorParams, seed: u64, stream: u64, optical: bool) -> Result<Self> {
        params.validate()?;
        Ok(Self {
            params: params.clone(),
            rng: rng::stream(seed, stream),
            filter: params.rx_response(),
            optical,
        })
    }

    /// Analogue front end, before the ADC.
    pub fn front_end(&mut self, x: &[Complex64]) -> Vec<Complex64> {
        let p = &self.params;
        let amp = p.efficiency.sqrt();
        let mut y: Vec<Complex64> = x
            .iter()
            .map(|&v| {
                let mut s = Complex64::new(0.0, 0.0);
                if self.optical {
                    s = v * amp + rng::complex_normal(&mut self.rng, 1.0);
                }
                if p.v_el > 0.0 {
                    s += rng::complex_normal(&mut self.rng, p.v_el);
                }
                s
            })
            .collect();
        self.filter.process(&mut y);
        y
    }

    pub fn process(&mut self, x: &[Complex64], full_scale: f64) -> Vec<Complex64> {
        let mut y = self.front_end(x);
        dsp::quantize(&mut y, self.params.adc_bits, full_scale);
        y
    }
}

fn adc_full_scale(det: &DetectorParams, y: &[Complex64]) -> f64 {
    det.full_scale
        .unwrap_or_else(|| ADC_FULL_SCALE_RMS * dsp::mean_power(y).sqrt())
}

fn to_adc_rate(rx: &WaveformTrace, det: &DetectorParams) -> Result<Vec<Complex64>> {
    if (rx.sample_rate() - det.adc_rate).abs() <= 1e-9 * det.adc_rate {
        return Ok(rx.samples.clone());
    }
    // Zero-pad so the trace maps onto an integer number of ADC samples.
    let mut x = rx.samples.clone();
    let ratio = det.adc_rate / rx.sample_rate();
    while ((x.len() as f64 * ratio) - (x.len() as f64 * ratio).round()).abs() > 1e-6 {
        x.push(Complex64::new(0.0, 0.0));
    }
    dsp::resample(&x, rx.sample_rate(), det.adc_rate, true)
}

/// Detect an optical trace (signal, or vacuum for the blocked-signal calibration).
pub fn detect(rx_optical: &WaveformTrace, det: &DetectorParams, seed: u64) -> Result<WaveformTrace> {
    detect_with_full_scale(rx_optical, det, seed).map(|(t, _)| t)
}

/// [`detect`], also returning the ADC full scale used, so later
/// acquisitions can share the same range.
pub fn detect_with_full_scale(rx_optical: &WaveformTrace, det: &DetectorParams, seed: u64) -> Result<(WaveformTrace, f64)> {
    rx_optical.expect_role(&[Role::Signal, Role::Vacuum], "signal or vacuum")?;
    let stream = match rx_optical.role() {
        Role::Vacuum => rng::streams::DETECT_VACUUM,
        _ => rng::streams::DETECT_SIGNAL,
    };
    let x = to_adc_rate(rx_optical, det)?;
    let mut d = Detector::new(det, seed, stream, true)?;
    let mut y = d.front_end(&x);
    let fs = adc_full_scale(det, &y);
    dsp::quantize(&mut y, det.adc_bits, fs);
    let origin = format!(
        "{} | detect: eta_d={} v_el={} adc={}b fs={:.6e}",
        rx_optical.origin, det.efficiency, det.v_el, det.adc_bits, fs
    );
    Ok((rx_optical.with_samples(y, origin).with_rate(det.adc_rate), fs))
}

/// Vacuum acquisition: signal path blocked, LO on.
pub fn vacuum_only(det: &DetectorParams, n_samples: usize, seed: u64) -> Result<WaveformTrace> {
    let zeros = WaveformTrace::new(vec![Complex64::new(0.0, 0.0); n_samples], det.adc_rate, Role::Vacuum, "vacuum")?;
    detect(&zeros, det, seed)
}

/// Electronic-noise acquisition: LO and signal blocked.
pub fn electronic_only(det: &DetectorParams, n_samples: usize, seed: u64) -> Result<WaveformTrace> {
    if n_samples == 0 {
        return Err(Error::param("n_samples", "must be positive"));
    }
    let mut d = Detector::new(det, seed, rng::streams::DETECT_ELECTRONIC, false)?;
    let mut y = d.front_end(&vec![Complex64::new(0.0, 0.0); n_samples]);
    let fs = adc_full_scale(det, &y);
    dsp::quantize(&mut y, det.adc_bits, fs);
    WaveformTrace::new(
        y,
        det.adc_rate,
        Role::Electronic,
        format!("electronic: v_el={} adc={}b fs={fs:.6e}", det.v_el, det.adc_bits),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::FrequencyResponse;
    use approx::assert_relative_eq;

    fn tone(n: usize, f: f64, fs: f64, amp: f64) -> WaveformTrace {
        let s = (0..n).map(|k| Complex64::from_polar(amp, 2.0 * PI * f * k as f64 / fs)).collect();
        WaveformTrace::new(s, fs, Role::Signal, "tone").unwrap()
    }

    #[test]
    fn ideal_channel_is_identity() {
        let t = tone(1000, 1e9, 80e9, 0.7);
        let out = apply_channel(&t, &ChannelParams::ideal(), 1).unwrap();
        assert_eq!(out.samples, t.samples);
    }

    #[test]
    fn attenuation_scales_power() {
        let t = tone(1000, 1e9, 80e9, 1.0);
        let ch = ChannelParams {
            transmittance: 0.25,
            ..ChannelParams::ideal()
        };
        let out = apply_channel(&t, &ch, 1).unwrap();
        assert_relative_eq!(dsp::mean_power(&out.samples), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn offset_beyond_half_band_rejected() {
        let ch = ChannelParams {
            freq_offset: 10e9,
            ..ChannelParams::default()
        };
        assert!(matches!(ch.validate(), Err(Error::FrequencyOffset { .. })));
        let t = tone(10, 1e9, 80e9, 1.0);
        assert!(apply_channel(&t, &ch, 0).is_err());
    }

    #[test]
    fn channel_rejects_vacuum_input() {
        let t = WaveformTrace::new(vec![Complex64::new(0.0, 0.0); 4], 1e9, Role::Vacuum, "").unwrap();
        assert!(matches!(apply_channel(&t, &ChannelParams::ideal(), 0), Err(Error::RoleMismatch { .. })));
    }

    #[test]
    fn variance_bookkeeping() {
        // Gaussian input of per-quadrature variance v_in; output variance
        // T v_in + T eps_in / 2 per quadrature.
        let n = 1_000_000;
        let v_in = 0.4;
        let mut r = rng::stream(9, 100);
        let x: Vec<_> = (0..n).map(|_| rng::complex_normal(&mut r, v_in)).collect();
        let t = WaveformTrace::new(x, 80e9, Role::Signal, "").unwrap();
        let ch = ChannelParams {
            transmittance: 0.346,
            excess_noise_in: 0.2,
            ..ChannelParams::default()
        };
        let out = apply_channel(&t, &ch, 4).unwrap();
        let var = dsp::mean_power(&out.samples) / 2.0;
        let expect = 0.346 * v_in + 0.346 * 0.2 / 2.0;
        let sigma = expect * (2.0 / (2.0 * n as f64)).sqrt();
        assert!((var - expect).abs() < 3.0 * sigma, "{var} vs {expect}");
    }

    #[test]
    fn phase_noise_increment_variance_scales_with_rate() {
        for fs in [1e9, 4e9] {
            let n = 200_000;
            let ch = ChannelParams {
                freq_offset: 0.0,
                linewidth_sum: 1e6,
                ..ChannelParams::default()
            };
            let mut sim = ChannelSim::new(&ch, fs, 2).unwrap();
            let (_, phase) = sim.process_with_phase(&vec![Complex64::new(1.0, 0.0); n]);
            let incs: Vec<f64> = phase.windows(2).map(|w| w[1] - w[0]).collect();
            let var = incs.iter().map(|d| d * d).sum::<f64>() / incs.len() as f64;
            let expect = 2.0 * PI * 1e6 / fs;
            assert!((var / expect - 1.0).abs() < 3.0 * (2.0 / incs.len() as f64).sqrt() * 1.5);
            // Independent increments: lag-1 correlation ~ 0.
            let c1 = incs.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (incs.len() - 1) as f64;
            assert!(c1.abs() / var < 0.02);
        }
    }

    #[test]
    fn streaming_matches_whole_trace() {
        let t = tone(4001, 2e9, 80e9, 0.5);
        let ch = ChannelParams {
            transmittance: 0.5,
            excess_noise_in: 0.1,
            delay_samples: 17,
            ..ChannelParams::default()
        };
        let det = DetectorParams {
            full_scale: Some(8.0),
            ..DetectorParams::default()
        };
        let whole = {
            let mut c = ChannelSim::new(&ch, 80e9, 5).unwrap();
            let mut d = Detector::new(&det, 5, 3, true).unwrap();
            d.process(&c.process(&t.samples), 8.0)
        };
        let chunked = {
            let mut c = ChannelSim::new(&ch, 80e9, 5).unwrap();
            let mut d = Detector::new(&det, 5, 3, true).unwrap();
            let mut out = d.process(&c.process(&t.samples[..1500]), 8.0);
            out.extend(d.process(&c.process(&t.samples[1500..]), 8.0));
            out
        };
        assert_eq!(whole, chunked);
    }

    #[test]
    fn detector_efficiency_scales_amplitude() {
        // Noise-free front end: compare the filtered tone against sqrt(eta) x H(f).
        let det = DetectorParams {
            efficiency: 0.44,
            v_el: 0.0,
            adc_bits: 16,
            ..DetectorParams::default()
        };
        let t = tone(20_000, 1e9, 80e9, 1.0);
        let mut d = Detector::new(&det, 0, 0, true).unwrap();
        // Subtract the noise-only response from the same RNG stream.
        let mut d0 = d.clone();
        let y = d.front_end(&t.samples);
        let n0 = d0.front_end(&vec![Complex64::new(0.0, 0.0); t.len()]);
        let sig: Vec<Complex64> = y.iter().zip(&n0).map(|(a, b)| a - b).collect();
        let h = det.rx_response().response(1e9, 80e9).norm();
        let amp = sig[10_000..].iter().map(|v| v.norm()).sum::<f64>() / 10_000.0;
        assert_relative_eq!(amp, 0.44f64.sqrt() * h, max_relative = 1e-9);
    }

    #[test]
    fn electronic_trace_zero_and_linear() {
        let det0 = DetectorParams {
            v_el: 0.0,
            ..DetectorParams::default()
        };
        let e0 = electronic_only(&det0, 1000, 1).unwrap();
        assert!(e0.samples.iter().all(|v| v.norm() == 0.0));
        assert_eq!(e0.role(), Role::Electronic);

        let var = |v_el: f64| {
            let det = DetectorParams {
                v_el,
                adc_bits: 16,
                ..DetectorParams::default()
            };
            dsp::mean_power(&electronic_only(&det, 200_000, 3).unwrap().samples)
        };
        // Same seed, so the ratio is exact up to quantisation.
        assert_relative_eq!(var(0.3) / var(0.1), 3.0, max_relative = 1e-4);
    }

    #[test]
    fn electronic_psd_follows_receiver_model() {
        let det = DetectorParams {
            v_el: 0.2,
            adc_bits: 16,
            ..DetectorParams::default()
        };
        let e = electronic_only(&det, 1 << 20, 11).unwrap();
        let nfft = 256;
        let psd = dsp::welch_psd(&e.samples, nfft);
        let freqs = dsp::fft_freqs(nfft, det.adc_rate);
        let h = det.rx_response();
        // ~8000 averaged segments -> relative std ~1.1 %, allow 5 %.
        for (p, &f) in psd.iter().zip(&freqs) {
            let model = 2.0 * 0.2 * h.response(f, det.adc_rate).norm_sqr();
            assert!((p / model - 1.0).abs() < 0.05, "f={f}: {p} vs {model}");
        }
    }
}
