//! Receiver chain: noise whitening, pilot-tone carrier recovery, matched
//! filtering, timing and frame synchronisation.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;

use crate::dsp;
use crate::error::{Error, Result};
use crate::trace::{self, Role, WaveformTrace};
use crate::txdsp::rrc_taps;

#[derive(Debug, Clone, PartialEq)]
pub struct RxConfig {
    pub symbol_rate: f64,
    pub rrc_rolloff: f64,
    pub rrc_span_symbols: usize,
    /// Nominal pilot frequency relative to the LO.
    pub pilot_freq: f64,
    /// Two-sided width of the pilot band-pass.
    pub pilot_bandwidth: f64,
    /// Half-width of the coarse pilot search around the nominal frequency.
    pub pilot_search_span: f64,
    /// Cutoff of the low-pass applied to the residual pilot phase.
    pub phase_lpf: f64,
    pub whitening_taps: usize,
    /// Leading symbols disclosed for cross-correlation sync.
    pub sync_reference: usize,
    /// Minimum correlation peak over RMS sidelobe.
    pub sync_threshold: f64,
}

impl Default for RxConfig {
    fn default() -> Self {
        Self {
            symbol_rate: 16e9,
            rrc_rolloff: 0.2,
            rrc_span_symbols: 40,
            pilot_freq: 15e9,
            pilot_bandwidth: 200e6,
            pilot_search_span: 9.6e9,
            phase_lpf: 100e6,
            whitening_taps: 255,
            sync_reference: 4096,
            sync_threshold: 5.0,
        }
    }
}

impl RxConfig {
    pub fn samples_per_symbol(&self, sample_rate: f64) -> Result<usize> {
        let r = sample_rate / self.symbol_rate;
        let sps = r.round() as usize;
        if (r - sps as f64).abs() > 1e-9 || sps < 2 {
            return Err(Error::param(
                "symbol_rate",
                format!("ADC rate {sample_rate:e} is not an integer multiple (>= 2) of {:e}", self.symbol_rate),
            ));
        }
        Ok(sps)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pilot_bandwidth > 0.0) || !(self.phase_lpf > 0.0) {
            return Err(Error::param("pilot_bandwidth", "pilot filters need positive widths"));
        }
        if self.sync_reference < 1000 {
            return Err(Error::param("sync_reference", "need at least 1000 reference symbols"));
        }
        if self.whitening_taps < 8 {
            return Err(Error::param("whitening_taps", "need at least 8 taps"));
        }
        Ok(())
    }
}

/// Minimum-phase whitening filter from a vacuum acquisition.
///
/// The magnitude is the inverse square root of the Welch vacuum PSD. The
/// phase is reconstructed from it through the folded cepstrum, which inverts
/// minimum-phase front-end responses exactly (magnitude and phase), so the
/// whitened signal path is also free of the receiver's phase distortion.
/// Taps are causal: tap 0 is the zero-delay tap.
pub fn whitening_taps(vacuum: &WaveformTrace, n_taps: usize) -> Result<Vec<Complex64>> {
    vacuum.expect_role(&[Role::Vacuum], "vacuum")?;
    if n_taps < 8 {
        return Err(Error::param("n_taps", "need at least 8 taps"));
    }
    let need = 64 * n_taps;
    if vacuum.len() < need {
        return Err(Error::TraceTooShort { len: vacuum.len(), need });
    }
    let psd = dsp::welch_psd(&vacuum.samples, n_taps);
    let max = psd.iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::param("vacuum", "trace has no power"));
    }
    let floor = 1e-3 * max;
    let p_ref = psd.iter().sum::<f64>() / psd.len() as f64;
    let mut cep: Vec<Complex64> = psd
        .iter()
        .map(|&p| Complex64::new(-0.5 * (p.max(floor) / p_ref).ln(), 0.0))
        .collect();
    dsp::ifft_in_place(&mut cep);
    let n = n_taps;
    for (k, c) in cep.iter_mut().enumerate() {
        let causal = k > 0 && 2 * k < n;
        let edge = k == 0 || 2 * k == n;
        if causal {
            *c *= 2.0;
        } else if !edge {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    dsp::fft_in_place(&mut cep);
    let mut w: Vec<Complex64> = cep.iter().map(|l| l.exp()).collect();
    dsp::ifft_in_place(&mut w);
    Ok(w)
}

/// Apply causal whitening taps, keeping length and metadata.
pub fn apply_whitening(trace: &WaveformTrace, taps: &[Complex64]) -> WaveformTrace {
    let y = dsp::convolve_centered(&trace.samples, taps, 0);
    trace.with_samples(y, format!("{} | whitened({} taps)", trace.origin, taps.len()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotEstimate {
    /// Carrier offset relative to the nominal pilot frequency, Hz.
    pub freq_offset: f64,
    pub pilot_freq_nominal: f64,
    /// Intercept of the linear phase fit at sample 0.
    pub phase_offset: f64,
    /// Low-passed residual phase after removing the linear fit, per sample.
    pub phase_track: Vec<f64>,
    pub fit_residual_rms: f64,
    pub amplitude: f64,
    pub sample_rate: f64,
}

impl PilotEstimate {
    /// Full carrier phase model at sample `n`, without the nominal pilot term.
    pub fn carrier_phase(&self, n: usize) -> f64 {
        2.0 * PI * self.freq_offset * n as f64 / self.sample_rate + self.phase_offset + self.phase_track[n]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PilotSearch {
    pub nominal: f64,
    pub bandwidth: f64,
    pub search_span: f64,
    pub phase_lpf: f64,
}

impl PilotSearch {
    pub fn from_config(cfg: &RxConfig) -> Self {
        Self {
            nominal: cfg.pilot_freq,
            bandwidth: cfg.pilot_bandwidth,
            search_span: cfg.pilot_search_span,
            phase_lpf: cfg.phase_lpf,
        }
    }
}

pub const PILOT_MAX_RESIDUAL: f64 = 1.0;

/// Pilot recovery with default search span and phase low-pass.
pub fn recover_pilot(trace: &WaveformTrace, pilot_freq_nominal: f64, bandwidth: f64) -> Result<PilotEstimate> {
    let d = RxConfig::default();
    recover_pilot_with(
        trace,
        &PilotSearch {
            nominal: pilot_freq_nominal,
            bandwidth,
            search_span: d.pilot_search_span,
            phase_lpf: d.phase_lpf,
        },
    )
}

/// Locate the pilot, isolate it, unwrap its phase and fit a line.
///
/// The trace is complex baseband, so the one-sided band-pass output is
/// already the analytic pilot signal.
pub fn recover_pilot_with(trace: &WaveformTrace, s: &PilotSearch) -> Result<PilotEstimate> {
    trace.expect_role(&[Role::Signal], "signal")?;
    let n = trace.len();
    if n < 1024 {
        return Err(Error::TraceTooShort { len: n, need: 1024 });
    }
    let fs = trace.sample_rate();
    let mut spec = trace.samples.clone();
    dsp::fft_in_place(&mut spec);
    let freqs = dsp::fft_freqs(n, fs);

    let peak = (0..n)
        .filter(|&k| (freqs[k] - s.nominal).abs() <= s.search_span)
        .max_by(|&a, &b| spec[a].norm_sqr().total_cmp(&spec[b].norm_sqr()))
        .ok_or(Error::PilotFailure { residual_rms: f64::INFINITY })?;
    let f_peak = freqs[peak];
    for (v, &f) in spec.iter_mut().zip(&freqs) {
        if (f - f_peak).abs() > s.bandwidth / 2.0 {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    dsp::ifft_in_place(&mut spec);
    let pilot = spec;
    let amplitude = pilot.iter().map(|v| v.norm()).sum::<f64>() / n as f64;

    let phase = unwrap(&pilot.iter().map(|v| v.arg()).collect::<Vec<_>>());
    // Band-pass edge transients are excluded from the fit.
    let edge = ((2.0 * fs / s.bandwidth).ceil() as usize).min(n / 10);
    let (slope, intercept) = linear_fit(&phase, edge, n - edge);
    let mut resid: Vec<f64> = phase.iter().enumerate().map(|(k, p)| p - (intercept + slope * k as f64)).collect();
    let interior = &resid[edge..n - edge];
    let fit_residual_rms = (interior.iter().map(|r| r * r).sum::<f64>() / interior.len() as f64).sqrt();
    if !(fit_residual_rms <= PILOT_MAX_RESIDUAL) {
        return Err(Error::PilotFailure { residual_rms: fit_residual_rms });
    }
    lowpass_real(&mut resid, s.phase_lpf, fs);

    Ok(PilotEstimate {
        freq_offset: slope * fs / (2.0 * PI) - s.nominal,
        pilot_freq_nominal: s.nominal,
        phase_offset: intercept,
        phase_track: resid,
        fit_residual_rms,
        amplitude,
        sample_rate: fs,
    })
}

pub fn unwrap(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    let mut prev: Option<f64> = None;
    for &p in phase {
        if let Some(q) = prev {
            let d = p - q;
            if d > PI {
                offset -= 2.0 * PI * ((d + PI) / (2.0 * PI)).floor();
            } else if d < -PI {
                offset += 2.0 * PI * ((-d + PI) / (2.0 * PI)).floor();
            }
        }
        prev = Some(p);
        out.push(p + offset);
    }
    out
}

/// Least-squares line through `y[lo..hi]` against the sample index.
fn linear_fit(y: &[f64], lo: usize, hi: usize) -> (f64, f64) {
    let m = (hi - lo) as f64;
    let xm = (lo + hi - 1) as f64 / 2.0;
    let ym = y[lo..hi].iter().sum::<f64>() / m;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, &v) in y[lo..hi].iter().enumerate() {
        let dx = (lo + k) as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    (slope, ym - slope * xm)
}

/// Brick-wall low-pass of a real sequence. The endpoint chord is removed
/// first so the circular FFT does not see a jump.
fn lowpass_real(x: &mut [f64], cutoff: f64, fs: f64) {
    let n = x.len();
    if cutoff >= fs / 2.0 || n < 2 {
        return;
    }
    let (a, b) = (x[0], x[n - 1]);
    let chord = |k: usize| a + (b - a) * k as f64 / (n - 1) as f64;
    let mut buf: Vec<Complex64> = x.iter().enumerate().map(|(k, &v)| Complex64::new(v - chord(k), 0.0)).collect();
    dsp::fft_in_place(&mut buf);
    for (v, f) in buf.iter_mut().zip(dsp::fft_freqs(n, fs)) {
        if f.abs() > cutoff {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    dsp::ifft_in_place(&mut buf);
    for (k, (o, v)) in x.iter_mut().zip(&buf).enumerate() {
        *o = v.re + chord(k);
    }
}

/// Matched-filtered, downsampled symbol stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolFrame {
    pub symbols: Vec<Complex64>,
    pub symbol_rate: f64,
    /// Trace sample index of symbol 0.
    pub alignment_offset: usize,
    /// Multiplicative SNU conversion already applied (1 for raw frames).
    pub scale: f64,
}

impl SymbolFrame {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    /// Cut `n` symbols starting at the sync delay and derotate by its phase.
    pub fn aligned(&self, sync: &SyncResult, n: usize, samples_per_symbol: usize) -> Result<Self> {
        if sync.delay + n > self.symbols.len() {
            return Err(Error::TooFewSymbols {
                got: self.symbols.len().saturating_sub(sync.delay),
                need: n,
            });
        }
        let rot = Complex64::from_polar(1.0, -sync.phase);
        Ok(Self {
            symbols: self.symbols[sync.delay..sync.delay + n].iter().map(|s| s * rot).collect(),
            symbol_rate: self.symbol_rate,
            alignment_offset: self.alignment_offset + sync.delay * samples_per_symbol,
            scale: self.scale,
        })
    }

    pub fn rotated(&self, phase: f64) -> Self {
        let rot = Complex64::from_polar(1.0, phase);
        Self {
            symbols: self.symbols.iter().map(|s| s * rot).collect(),
            ..self.clone()
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "index,re,im")?;
        for (k, s) in self.symbols.iter().enumerate() {
            writeln!(w, "{k},{:.9e},{:.9e}", s.re, s.im)?;
        }
        Ok(())
    }

    /// CVQT container with the symbols role; the rate field holds the symbol rate.
    pub fn write_binary<W: Write>(&self, w: W) -> Result<()> {
        trace::write_cvqt(w, Role::Symbols, self.symbol_rate, &self.symbols)
    }
}

/// RRC matched filter followed by max-energy timing and decimation.
/// `timing` forces a sampling phase (used for the calibration acquisitions).
pub fn matched_filter(
    x: &[Complex64],
    sps: usize,
    rolloff: f64,
    span: usize,
    timing: Option<usize>,
) -> Result<(Vec<Complex64>, usize)> {
    let taps = dsp::real_taps(&rrc_taps(rolloff, span, sps)?);
    let y = dsp::convolve_same(x, &taps);
    let phase = match timing {
        Some(p) if p < sps => p,
        Some(p) => return Err(Error::param("timing", format!("phase {p} >= {sps}"))),
        None => (0..sps)
            .max_by(|&a, &b| {
                let e = |p: usize| y.iter().skip(p).step_by(sps).map(|v| v.norm_sqr()).sum::<f64>();
                e(a).total_cmp(&e(b))
            })
            .unwrap_or(0),
    };
    Ok((y.iter().skip(phase).step_by(sps).copied().collect(), phase))
}

/// Carrier correction and pilot removal of a whitened signal trace,
/// followed by the matched filter at full rate.
fn corrected_filtered(trace: &WaveformTrace, pilot: &PilotEstimate, cfg: &RxConfig) -> Result<(Vec<Complex64>, usize)> {
    trace.expect_role(&[Role::Signal], "signal")?;
    if pilot.phase_track.len() != trace.len() {
        return Err(Error::param("pilot", "phase track length differs from trace"));
    }
    let fs = trace.sample_rate();
    let sps = cfg.samples_per_symbol(fs)?;
    let mut y: Vec<Complex64> = trace
        .samples
        .iter()
        .enumerate()
        .map(|(n, v)| v * Complex64::from_polar(1.0, -pilot.carrier_phase(n)))
        .collect();
    // After correction the pilot sits at its nominal frequency; clear it.
    dsp::fft_in_place(&mut y);
    for (v, f) in y.iter_mut().zip(dsp::fft_freqs(trace.len(), fs)) {
        if (f - pilot.pilot_freq_nominal).abs() <= cfg.pilot_bandwidth {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    dsp::ifft_in_place(&mut y);
    let taps = dsp::real_taps(&rrc_taps(cfg.rrc_rolloff, cfg.rrc_span_symbols, sps)?);
    Ok((dsp::convolve_same(&y, &taps), sps))
}

fn decimate(y: &[Complex64], phase: usize, sps: usize, cfg: &RxConfig) -> SymbolFrame {
    SymbolFrame {
        symbols: y.iter().skip(phase).step_by(sps).copied().collect(),
        symbol_rate: cfg.symbol_rate,
        alignment_offset: phase,
        scale: 1.0,
    }
}

/// Carrier correction, pilot removal, matched filter and downsampling of a
/// whitened signal trace, with blind max-energy timing.
pub fn demodulate(trace: &WaveformTrace, pilot: &PilotEstimate, cfg: &RxConfig) -> Result<SymbolFrame> {
    let (y, sps) = corrected_filtered(trace, pilot, cfg)?;
    let energy = |p: usize| y.iter().skip(p).step_by(sps).map(|v| v.norm_sqr()).sum::<f64>();
    let phase = (0..sps).max_by(|&a, &b| energy(a).total_cmp(&energy(b))).unwrap_or(0);
    Ok(decimate(&y, phase, sps, cfg))
}

/// Like [`demodulate`], but the sampling phase is the one whose symbols
/// correlate best with the disclosed `reference`. Blind max-energy timing
/// is unreliable at low SNR, where the noise energy hides the eye opening.
pub fn demodulate_aided(
    trace: &WaveformTrace,
    pilot: &PilotEstimate,
    cfg: &RxConfig,
    reference: &[Complex64],
) -> Result<(SymbolFrame, SyncResult)> {
    let (y, sps) = corrected_filtered(trace, pilot, cfg)?;
    let mut best: Option<(SymbolFrame, SyncResult)> = None;
    let mut last_err = None;
    for phase in 0..sps {
        let f = decimate(&y, phase, sps, cfg);
        match synchronize(reference, &f.symbols, cfg.sync_threshold) {
            Ok(s) => {
                if best.as_ref().is_none_or(|b| s.peak_to_sidelobe > b.1.peak_to_sidelobe) {
                    best = Some((f, s));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.expect("at least one sampling phase"))
}

/// Matched filter and downsampling of a whitened noise-only acquisition.
pub fn demodulate_noise(trace: &WaveformTrace, cfg: &RxConfig, timing: usize) -> Result<SymbolFrame> {
    trace.expect_role(&[Role::Vacuum, Role::Electronic], "vacuum or electronic")?;
    let sps = cfg.samples_per_symbol(trace.sample_rate())?;
    let (symbols, phase) = matched_filter(&trace.samples, sps, cfg.rrc_rolloff, cfg.rrc_span_symbols, Some(timing % sps))?;
    Ok(SymbolFrame {
        symbols,
        symbol_rate: cfg.symbol_rate,
        alignment_offset: phase,
        scale: 1.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyncResult {
    /// Index in the received stream of the first reference symbol.
    pub delay: usize,
    /// Phase of the correlation peak.
    pub phase: f64,
    pub peak_to_sidelobe: f64,
}

/// Cross-correlate the disclosed reference against the received stream.
pub fn synchronize(reference: &[Complex64], rx: &[Complex64], threshold: f64) -> Result<SyncResult> {
    if reference.len() < 1000 {
        return Err(Error::TooFewSymbols {
            got: reference.len(),
            need: 1000,
        });
    }
    if rx.len() < reference.len() {
        return Err(Error::TooFewSymbols {
            got: rx.len(),
            need: reference.len(),
        });
    }
    let lags = rx.len() - reference.len() + 1;
    let nfft = (rx.len() + reference.len()).next_power_of_two();
    let mut a = vec![Complex64::new(0.0, 0.0); nfft];
    let mut b = vec![Complex64::new(0.0, 0.0); nfft];
    a[..rx.len()].copy_from_slice(rx);
    b[..reference.len()].copy_from_slice(reference);
    dsp::fft_in_place(&mut a);
    dsp::fft_in_place(&mut b);
    a.iter_mut().zip(&b).for_each(|(u, v)| *u *= v.conj());
    dsp::ifft_in_place(&mut a);
    let corr = &a[..lags];

    let (delay, peak) = corr
        .iter()
        .enumerate()
        .map(|(k, c)| (k, c.norm_sqr()))
        .max_by(|x, y| x.1.total_cmp(&y.1))
        .expect("at least one lag");
    let side = if lags > 1 {
        ((corr.iter().map(|c| c.norm_sqr()).sum::<f64>() - peak) / (lags - 1) as f64).sqrt()
    } else {
        // A single admissible lag: compare against the reference noise floor.
        let e: f64 = reference.iter().map(|r| r.norm_sqr()).sum();
        let r: f64 = rx.iter().map(|r| r.norm_sqr()).sum();
        (e * r / reference.len() as f64).sqrt()
    };
    let ratio = if side > 0.0 { peak.sqrt() / side } else { f64::INFINITY };
    if !(ratio >= threshold) {
        return Err(Error::SyncFailure { ratio, threshold });
    }
    Ok(SyncResult {
        delay,
        phase: corr[delay].arg(),
        peak_to_sidelobe: ratio,
    })
}

/// Phase of `sum conj(a) b`, used to refine the constant carrier phase over
/// the full aligned frame.
pub fn common_phase(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().arg()
}
