//! Transmitter chain: upsampling, RRC pulse shaping, pre-emphasis, pilot
//! multiplexing, DAC quantisation and the modulator's low-pass response.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use num_complex::Complex64;

use crate::dsp::{self, FrequencyResponse, OnePole};
use crate::error::{Error, Result};
use crate::trace::{Role, WaveformTrace};

/// Spacing between the quantum band edge and the pilot.
pub const PILOT_GUARD_HZ: f64 = 0.5e9;
/// DAC full scale as a multiple of the combined RMS.
pub const DAC_FULL_SCALE_RMS: f64 = 4.0;
pub const PREEMPHASIS_TAPS: usize = 33;

#[derive(Debug, Clone, PartialEq)]
pub struct TxConfig {
    pub symbol_rate: f64,
    pub dac_rate: f64,
    pub rrc_rolloff: f64,
    pub rrc_span_symbols: usize,
    pub pilot_freq: f64,
    /// Pilot amplitude relative to the RMS of the shaped quantum signal.
    pub pilot_amp_ratio: f64,
    pub dac_bits: u32,
    /// Frequency at which the modulator response is down 6 dB.
    pub tx_6db: f64,
    pub iq_amp_ratio: f64,
    pub iq_phase_err: f64,
    pub preemphasis: bool,
}

impl Default for TxConfig {
    fn default() -> Self {
        Self {
            symbol_rate: 16e9,
            dac_rate: 32e9,
            rrc_rolloff: 0.2,
            rrc_span_symbols: 40,
            pilot_freq: 15e9,
            pilot_amp_ratio: 10.0,
            dac_bits: 8,
            tx_6db: 13e9,
            iq_amp_ratio: 1.0,
            iq_phase_err: 0.0,
            preemphasis: true,
        }
    }
}

impl TxConfig {
    pub fn samples_per_symbol(&self) -> Result<usize> {
        let r = self.dac_rate / self.symbol_rate;
        let sps = r.round() as usize;
        if (r - sps as f64).abs() > 1e-9 {
            return Err(Error::param("dac_rate", format!("must be an integer multiple of the symbol rate (ratio {r})")));
        }
        Ok(sps)
    }

    /// One-sided quantum band edge `R_s (1 + rolloff) / 2`.
    pub fn quantum_half_band(&self) -> f64 {
        self.symbol_rate * (1.0 + self.rrc_rolloff) / 2.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.symbol_rate > 0.0) {
            return Err(Error::param("symbol_rate", "must be positive"));
        }
        if self.dac_rate < 2.0 * self.symbol_rate {
            return Err(Error::param("dac_rate", "must be at least twice the symbol rate"));
        }
        self.samples_per_symbol()?;
        if !(self.rrc_rolloff > 0.0 && self.rrc_rolloff <= 1.0) {
            return Err(Error::param("rrc_rolloff", format!("{} not in (0, 1]", self.rrc_rolloff)));
        }
        if self.rrc_span_symbols == 0 || self.rrc_span_symbols % 2 != 0 {
            return Err(Error::param("rrc_span_symbols", "must be a positive even number"));
        }
        if !(4..=16).contains(&self.dac_bits) {
            return Err(Error::param("dac_bits", format!("{} not in [4, 16]", self.dac_bits)));
        }
        if self.pilot_freq >= self.dac_rate / 2.0 {
            return Err(Error::param("pilot_freq", "must be below the DAC Nyquist frequency"));
        }
        let edge = self.quantum_half_band();
        if self.pilot_freq < edge + PILOT_GUARD_HZ {
            return Err(Error::PilotOverlap {
                pilot_hz: self.pilot_freq,
                edge_hz: edge,
            });
        }
        if !(self.pilot_amp_ratio >= 0.0) {
            return Err(Error::param("pilot_amp_ratio", "must be >= 0"));
        }
        if !(self.tx_6db > 0.0 && self.tx_6db < self.dac_rate / 2.0) {
            return Err(Error::param("tx_6db", "must lie inside the DAC band"));
        }
        if !(self.iq_amp_ratio > 0.0) {
            return Err(Error::param("iq_amp_ratio", "must be positive"));
        }
        Ok(())
    }

    /// Modulator low-pass, modelled as a single pole through the 6 dB point.
    pub fn tx_response(&self) -> OnePole {
        OnePole::with_magnitude_at(self.tx_6db, 0.5, self.dac_rate)
    }
}

/// Root-raised-cosine taps, unit energy, length `span * sps + 1`.
pub fn rrc_taps(rolloff: f64, span_symbols: usize, samples_per_symbol: usize) -> Result<Vec<f64>> {
    if !(rolloff > 0.0 && rolloff <= 1.0) {
        return Err(Error::param("rolloff", format!("{rolloff} not in (0, 1]")));
    }
    if samples_per_symbol < 2 {
        return Err(Error::param("samples_per_symbol", "must be at least 2"));
    }
    if span_symbols == 0 {
        return Err(Error::param("span_symbols", "must be positive"));
    }
    let len = span_symbols * samples_per_symbol + 1;
    if len % 2 == 0 {
        return Err(Error::param("span_symbols", "span * sps + 1 must be odd"));
    }
    let c = (len - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..len)
        .map(|k| rrc_value((k as f64 - c) / samples_per_symbol as f64, rolloff))
        .collect();
    let energy: f64 = h.iter().map(|v| v * v).sum();
    let norm = energy.sqrt();
    h.iter_mut().for_each(|v| *v /= norm);
    Ok(h)
}

/// Continuous RRC impulse response at `t` symbol periods (unnormalised).
pub fn rrc_value(t: f64, beta: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if t.abs() < EPS {
        return 1.0 - beta + 4.0 * beta / PI;
    }
    let t4b = 1.0 / (4.0 * beta);
    if (t.abs() - t4b).abs() < EPS {
        let a = PI / (4.0 * beta);
        return beta * FRAC_1_SQRT_2 * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos());
    }
    let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
    let den = PI * t * (1.0 - (4.0 * beta * t).powi(2));
    num / den
}

/// Regularised inverse of a transfer function as centred FIR taps.
#[derive(Debug, Clone)]
pub struct PreEmphasis {
    pub taps: Vec<Complex64>,
    /// Bins (anywhere) where |H|^2 sat below the regularisation floor.
    pub floored_bins: usize,
}

impl PreEmphasis {
    pub fn center(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn response(&self, freq_hz: f64, sample_rate: f64) -> Complex64 {
        dsp::fir_response(&self.taps, self.center(), freq_hz, sample_rate)
    }
}

/// Relative Tikhonov weight: `H^-1 = H* / (|H|^2 + lambda)`, `lambda = 1e-4 max|H|^2`.
pub const PREEMPHASIS_LAMBDA: f64 = 1e-4;

pub fn preemphasis_taps(
    tx_response: &impl FrequencyResponse,
    sample_rate: f64,
    band_hz: f64,
    n_taps: usize,
) -> Result<PreEmphasis> {
    if n_taps == 0 || n_taps % 2 == 0 {
        return Err(Error::param("n_taps", "must be odd"));
    }
    let freqs = dsp::fft_freqs(n_taps, sample_rate);
    let h: Vec<Complex64> = freqs.iter().map(|&f| tx_response.response(f, sample_rate)).collect();
    let hmax = h.iter().map(|v| v.norm_sqr()).fold(0.0, f64::max);
    if hmax == 0.0 {
        return Err(Error::InBandNull { bins: n_taps });
    }
    let lambda = PREEMPHASIS_LAMBDA * hmax;
    let mut floored = 0;
    let mut in_band_floored = 0;
    let inv: Vec<Complex64> = h
        .iter()
        .zip(&freqs)
        .map(|(v, &f)| {
            if v.norm_sqr() <= lambda {
                floored += 1;
                if f.abs() <= band_hz {
                    in_band_floored += 1;
                }
            }
            v.conj() / (v.norm_sqr() + lambda)
        })
        .collect();
    if in_band_floored > 0 {
        return Err(Error::InBandNull { bins: in_band_floored });
    }
    Ok(PreEmphasis {
        taps: dsp::fir_from_bins(&inv),
        floored_bins: floored,
    })
}

/// Frame produced by [`modulate_frame`].
#[derive(Debug, Clone)]
pub struct TxFrame {
    pub trace: WaveformTrace,
    /// Samples from trace start to the centre of symbol 0.
    pub group_delay: usize,
    pub samples_per_symbol: usize,
    pub pilot_amplitude: f64,
    pub full_scale: f64,
}

/// Shape `symbols` (heterodyne quadrature units) into a DAC-rate waveform.
pub fn modulate_frame(symbols: &[Complex64], cfg: &TxConfig) -> Result<TxFrame> {
    if symbols.is_empty() {
        return Err(Error::param("symbols", "empty symbol sequence"));
    }
    cfg.validate()?;
    let sps = cfg.samples_per_symbol()?;
    let taps = dsp::real_taps(&rrc_taps(cfg.rrc_rolloff, cfg.rrc_span_symbols, sps)?);
    let mut up = vec![Complex64::new(0.0, 0.0); symbols.len() * sps];
    for (k, s) in symbols.iter().enumerate() {
        up[k * sps] = *s;
    }
    let mut x = dsp::convolve_full(&up, &taps);
    // Full convolution has length n*sps + span*sps; trim the trailing zero-stuffing tail.
    x.truncate(symbols.len() * sps + cfg.rrc_span_symbols * sps);
    let group_delay = (taps.len() - 1) / 2;

    let response = cfg.tx_response();
    if cfg.preemphasis {
        let pe = preemphasis_taps(&response, cfg.dac_rate, cfg.quantum_half_band(), PREEMPHASIS_TAPS)?;
        x = dsp::convolve_centered(&x, &pe.taps, pe.center());
    }

    // The pilot is added after pre-emphasis so it does not eat DAC range.
    // Its amplitude is referenced to the ideal shaped-signal RMS; an all-zero
    // symbol stream falls back to the bare ratio as absolute amplitude.
    let mean_sym_energy = symbols.iter().map(|s| s.norm_sqr()).sum::<f64>() / symbols.len() as f64;
    let quantum_rms = (mean_sym_energy / sps as f64).sqrt();
    let pilot_amplitude = if quantum_rms > 0.0 {
        cfg.pilot_amp_ratio * quantum_rms
    } else {
        cfg.pilot_amp_ratio
    };
    let w = 2.0 * PI * cfg.pilot_freq / cfg.dac_rate;
    for (n, v) in x.iter_mut().enumerate() {
        *v += Complex64::from_polar(pilot_amplitude, w * n as f64);
    }

    let rms = dsp::mean_power(&x).sqrt();
    let full_scale = DAC_FULL_SCALE_RMS * rms;
    dsp::quantize(&mut x, cfg.dac_bits, full_scale);

    apply_iq_imbalance(&mut x, cfg.iq_amp_ratio, cfg.iq_phase_err);
    let mut modulator = response;
    modulator.process(&mut x);

    let origin = format!(
        "tx: rrc(beta={}, span={}, sps={sps}) preemphasis={} pilot={:.3e}Hz dac_bits={} group_delay={group_delay}",
        cfg.rrc_rolloff, cfg.rrc_span_symbols, cfg.preemphasis, cfg.pilot_freq, cfg.dac_bits
    );
    Ok(TxFrame {
        trace: WaveformTrace::new(x, cfg.dac_rate, Role::Signal, origin)?,
        group_delay,
        samples_per_symbol: sps,
        pilot_amplitude,
        full_scale,
    })
}

/// `I' = I`, `Q' = g (Q cos phi + I sin phi)`.
pub fn apply_iq_imbalance(x: &mut [Complex64], g: f64, phi: f64) {
    if g == 1.0 && phi == 0.0 {
        return;
    }
    let (s, c) = phi.sin_cos();
    for v in x.iter_mut() {
        let (i, q) = (v.re, v.im);
        *v = Complex64::new(i, g * (q * c + i * s));
    }
}

/// Desired-to-image power ratio of the IQ-imbalance model, in dB.
pub fn image_rejection_ratio_db(g: f64, phi: f64) -> f64 {
    let c = phi.cos();
    let num = 1.0 + 2.0 * g * c + g * g;
    let den = 1.0 - 2.0 * g * c + g * g;
    10.0 * (num / den).log10()
}

/// Tone-based sideband-suppression measurement.
#[derive(Debug, Clone)]
pub struct SidebandProbe {
    pub sample_rate: f64,
    pub tone_freq: f64,
    pub n_samples: usize,
    pub dac_bits: u32,
}

impl Default for SidebandProbe {
    fn default() -> Self {
        // 2^16 samples at 32 GSa/s puts 500 MHz exactly on bin 1024.
        Self {
            sample_rate: 32e9,
            tone_freq: 500e6,
            n_samples: 1 << 16,
            dac_bits: 16,
        }
    }
}

impl SidebandProbe {
    pub fn measure(&self, g: f64, phi: f64) -> Result<f64> {
        if !(g > 0.0) {
            return Err(Error::param("iq_amp_ratio", "must be positive"));
        }
        let n = self.n_samples;
        let bin = (self.tone_freq * n as f64 / self.sample_rate).round() as usize;
        if bin == 0 || bin >= n / 2 {
            return Err(Error::param("tone_freq", "must fall strictly inside the positive band"));
        }
        let w = 2.0 * PI * bin as f64 / n as f64;
        let mut x: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(1.0, w * k as f64)).collect();
        apply_iq_imbalance(&mut x, g, phi);
        let fs = DAC_FULL_SCALE_RMS * dsp::mean_power(&x).sqrt();
        dsp::quantize(&mut x, self.dac_bits, fs);
        dsp::fft_in_place(&mut x);
        let desired = x[bin].norm_sqr();
        let image = x[n - bin].norm_sqr().max(f64::MIN_POSITIVE);
        Ok(10.0 * (desired / image).log10())
    }
}

/// Sideband suppression (dB) of the IQ model measured on a 500 MHz tone.
pub fn sideband_suppression(iq_amp_ratio: f64, iq_phase_err: f64) -> Result<f64> {
    SidebandProbe::default().measure(iq_amp_ratio, iq_phase_err)
}
