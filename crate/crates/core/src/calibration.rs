//! Shot-noise-unit calibration from blocked-signal (vacuum) and blocked-LO
//! (electronic) acquisitions.
//!
//! Variances are measured in the symbol domain, after whitening and the
//! matched filter, so the SNU scale applies directly to the estimated
//! excess noise and electronic noise.

use num_complex::Complex64;

use crate::dsp;
use crate::error::{Error, Result};
use crate::rxdsp::{self, RxConfig, SymbolFrame};
use crate::trace::{Role, WaveformTrace};

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationRecord {
    /// Raw per-quadrature variance corresponding to 1 SNU.
    pub shot_unit: f64,
    pub v_el_snu: f64,
    pub vacuum_var_raw: f64,
    pub elec_var_raw: f64,
    /// Frequency range the variances refer to, Hz.
    pub band: (f64, f64),
    pub n_vacuum: usize,
    pub n_electronic: usize,
}

impl CalibrationRecord {
    pub fn from_variances(vacuum_var_raw: f64, elec_var_raw: f64, band: (f64, f64)) -> Result<Self> {
        let shot_unit = vacuum_var_raw - elec_var_raw;
        if !(shot_unit > 0.0) || !(elec_var_raw >= 0.0) {
            return Err(Error::Calibration { shot_unit });
        }
        Ok(Self {
            shot_unit,
            v_el_snu: elec_var_raw / shot_unit,
            vacuum_var_raw,
            elec_var_raw,
            band,
            n_vacuum: 0,
            n_electronic: 0,
        })
    }

    pub fn to_report_lines(&self) -> Vec<(String, String)> {
        vec![
            ("calibration.shot_unit".into(), format!("{:.9e}", self.shot_unit)),
            ("calibration.v_el_snu".into(), format!("{:.9e}", self.v_el_snu)),
            ("calibration.vacuum_var_raw".into(), format!("{:.9e}", self.vacuum_var_raw)),
            ("calibration.elec_var_raw".into(), format!("{:.9e}", self.elec_var_raw)),
            ("calibration.band_lo".into(), format!("{:.6e}", self.band.0)),
            ("calibration.band_hi".into(), format!("{:.6e}", self.band.1)),
            ("calibration.n_vacuum".into(), self.n_vacuum.to_string()),
            ("calibration.n_electronic".into(), self.n_electronic.to_string()),
        ]
    }
}

/// Mean-removed variance per quadrature.
pub fn quadrature_variance(x: &[Complex64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<Complex64>() / n;
    let dev: Vec<f64> = x.iter().map(|v| (v - mean).norm_sqr()).collect();
    dsp::pairwise_sum(&dev) / (2.0 * n)
}

/// Calibrate from symbol-domain noise frames.
pub fn calibrate_frames(vacuum: &SymbolFrame, electronic: &SymbolFrame, band: (f64, f64)) -> Result<CalibrationRecord> {
    let mut rec = CalibrationRecord::from_variances(
        quadrature_variance(&vacuum.symbols),
        quadrature_variance(&electronic.symbols),
        band,
    )?;
    rec.n_vacuum = vacuum.len();
    rec.n_electronic = electronic.len();
    Ok(rec)
}

/// Whiten, matched-filter and measure both calibration acquisitions.
///
/// The whitening taps should come from a separate vacuum acquisition: a
/// trace whitened by its own PSD estimate comes out flatter (and weaker in
/// band) than any other trace, which would bias the shot-noise unit.
pub fn calibrate(
    vacuum: &WaveformTrace,
    electronic: &WaveformTrace,
    whitening: &[Complex64],
    cfg: &RxConfig,
) -> Result<CalibrationRecord> {
    vacuum.expect_role(&[Role::Vacuum], "vacuum")?;
    electronic.expect_role(&[Role::Electronic], "electronic")?;
    if vacuum.sample_rate() != electronic.sample_rate() {
        return Err(Error::param("electronic", "sample rate differs from the vacuum trace"));
    }
    let v = rxdsp::demodulate_noise(&rxdsp::apply_whitening(vacuum, whitening), cfg, 0)?;
    let e = rxdsp::demodulate_noise(&rxdsp::apply_whitening(electronic, whitening), cfg, 0)?;
    let half = cfg.symbol_rate * (1.0 + cfg.rrc_rolloff) / 2.0;
    calibrate_frames(&trim(v, cfg), &trim(e, cfg), (-half, half))
}

/// Drop the matched-filter edge transients.
fn trim(mut f: SymbolFrame, cfg: &RxConfig) -> SymbolFrame {
    let edge = cfg.rrc_span_symbols.min(f.symbols.len() / 4);
    let end = f.symbols.len() - edge;
    f.symbols = f.symbols[edge..end].to_vec();
    f
}

/// Scale a raw frame so vacuum corresponds to unit variance per quadrature.
pub fn to_snu(frame: &SymbolFrame, cal: &CalibrationRecord) -> SymbolFrame {
    let k = 1.0 / cal.shot_unit.sqrt();
    SymbolFrame {
        symbols: frame.symbols.iter().map(|s| s * k).collect(),
        symbol_rate: frame.symbol_rate,
        alignment_offset: frame.alignment_offset,
        scale: frame.scale * k,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{electronic_only, vacuum_only, DetectorParams};
    use approx::assert_relative_eq;

    #[test]
    fn table_arithmetic() {
        let r = CalibrationRecord::from_variances(1.15, 0.15, (0.0, 1.0)).unwrap();
        assert_relative_eq!(r.v_el_snu, 0.150, epsilon = 1e-12);
        assert_relative_eq!(r.shot_unit, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn mislabelled_traces_fail() {
        assert!(matches!(
            CalibrationRecord::from_variances(0.1, 0.2, (0.0, 1.0)),
            Err(Error::Calibration { .. })
        ));
    }

    fn frame(symbols: Vec<Complex64>) -> SymbolFrame {
        SymbolFrame {
            symbols,
            symbol_rate: 16e9,
            alignment_offset: 0,
            scale: 1.0,
        }
    }

    #[test]
    fn zero_electronic_gives_zero_vel() {
        let mut r = crate::rng::stream(1, 1);
        let v = frame((0..10_000).map(|_| crate::rng::complex_normal(&mut r, 2.0)).collect());
        let e = frame(vec![Complex64::new(0.0, 0.0); 10_000]);
        let rec = calibrate_frames(&v, &e, (0.0, 1.0)).unwrap();
        assert_eq!(rec.v_el_snu, 0.0);
        let snu = to_snu(&v, &rec);
        assert_relative_eq!(quadrature_variance(&snu.symbols), 1.0, epsilon = 1e-12);
    }

    fn simulated(v_el: f64, n: usize, seed: u64, gain: f64) -> (f64, SymbolFrame, CalibrationRecord) {
        let det = DetectorParams {
            v_el,
            adc_bits: 12,
            ..DetectorParams::default()
        };
        let cfg = RxConfig::default();
        let vac = vacuum_only(&det, n, seed).unwrap();
        let ele = electronic_only(&det, n, seed).unwrap();
        let scale = |t: &WaveformTrace| t.with_samples(t.samples.iter().map(|s| s * gain).collect(), "");
        let (vac, ele) = (scale(&vac), scale(&ele));
        // Taps from an independent acquisition, so calibration and test
        // traces see the same estimation error.
        let w = rxdsp::whitening_taps(&scale(&vacuum_only(&det, n, seed + 500).unwrap()), cfg.whitening_taps).unwrap();
        let rec = calibrate(&vac, &ele, &w, &cfg).unwrap();
        let other = vacuum_only(&det, n, seed + 1000).unwrap();
        let f = rxdsp::demodulate_noise(&rxdsp::apply_whitening(&scale(&other), &w), &cfg, 0).unwrap();
        (rec.v_el_snu, to_snu(&f, &rec), rec)
    }

    #[test]
    fn closed_loop_recovers_vel() {
        let n = 1 << 20;
        let (v, frame, _) = simulated(0.081, n, 3, 1.0);
        // Symbol-domain sample count n/5; the ratio estimator has
        // relative std ~ sqrt(2/m) (1 + 1/v_el) over m = 2 n/5 quadratures.
        let m = 2.0 * n as f64 / 5.0;
        let sigma = 0.081 * (2.0 / m).sqrt() * (1.0 + 1.0 / 0.081);
        assert!((v - 0.081).abs() < 3.0 * sigma + 5e-4, "{v}");
        // A vacuum acquisition carries shot plus electronic noise.
        let var = quadrature_variance(&frame.symbols);
        assert!((var - 1.081).abs() < 3.0 * (2.0 / m).sqrt() * 1.1, "{var}");
    }

    #[test]
    fn noiseless_electronics_vacuum_is_one_snu() {
        let n = 1 << 19;
        let (_, frame, _) = simulated(0.0, n, 11, 1.0);
        let m = 2.0 * n as f64 / 5.0;
        let var = quadrature_variance(&frame.symbols);
        assert!((var - 1.0).abs() < 3.0 * (2.0 / m).sqrt(), "{var}");
    }

    #[test]
    fn common_gain_cancels() {
        let (a, fa, _) = simulated(0.15, 1 << 17, 5, 1.0);
        let (b, fb, _) = simulated(0.15, 1 << 17, 5, 37.0);
        assert_relative_eq!(a, b, max_relative = 1e-6);
        for (x, y) in fa.symbols.iter().zip(&fb.symbols).take(100) {
            assert!((x - y).norm() < 1e-6 * (1.0 + x.norm()));
        }
    }
}
