//! End-to-end experiment runs, theory evaluation, sweeps and report files.

mod config;
pub mod plot;
mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;

pub use config::{dac_rate_for, ConstellationSpec, ExperimentConfig, OutputSettings, SecuritySettings, PRESET_NAMES, ROW_RESULTS};
pub use sweep::{parse_grid, sweep, Axis, PointOutcome, SweepMode, SweepPoint, SweepReport, SWEEP_HEADER};

use crate::calibration::{self, CalibrationRecord};
use crate::channel::{self, DetectorParams};
use crate::constellation::quadrature_symbols;
use crate::dsp;
use crate::error::{Error, Result, ResultExt, Stage};
use crate::estimation::{empirical_mi, estimate_channel, worst_case_bounds, ChannelEstimate, MutualInfoEstimate};
use crate::rng::{self, streams};
use crate::rxdsp::{self, PilotSearch, SymbolFrame};
use crate::security::{asymptotic_skr, finite_size_skr, SecurityParams, SecurityResult};
use crate::trace::{Role, WaveformTrace};
use crate::txdsp;

/// Theory-only evaluation of a configuration: the channel, detector and
/// constellation values are taken as exact.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryReport {
    pub params: SecurityParams,
    pub mi: MutualInfoEstimate,
    pub estimate: ChannelEstimate,
    pub result: SecurityResult,
}

pub fn security_params(cfg: &ExperimentConfig) -> Result<SecurityParams> {
    let c = cfg.constellation.build()?;
    Ok(SecurityParams {
        vm: cfg.constellation.vm,
        z_star: c.effective_correlation(&cfg.security.fock())?,
        transmittance: cfg.channel.transmittance,
        eps_in: cfg.channel.excess_noise_in,
        eta_d: cfg.detector.efficiency,
        v_el: cfg.detector.v_el,
        beta: cfg.security.beta,
        detector: cfg.security.detector,
        symbol_rate: cfg.tx.symbol_rate,
        overhead: 0.0,
    })
}

/// Asymptotic and finite-size rates from the nominal parameters, with the
/// model mutual information and bounds over `security.key_block` symbols.
pub fn keyrate(cfg: &ExperimentConfig) -> Result<TheoryReport> {
    cfg.validate()?;
    keyrate_from(cfg, security_params(cfg).stage(Stage::Config)?)
}

/// [`keyrate`] for explicit security parameters (e.g. a Gaussian baseline).
pub fn keyrate_from(cfg: &ExperimentConfig, p: SecurityParams) -> Result<TheoryReport> {
    let mi = p.model_mi();
    let est = ChannelEstimate::from_model(
        p.transmittance,
        p.eps_out(),
        p.vm,
        p.eta_d,
        p.v_el,
        cfg.key_block(),
    )
    .with_width(cfg.security.width);
    let est = worst_case_bounds(&est, cfg.security.eps_pe).stage(Stage::Estimation)?;
    let result = finite_size_skr(&p, &est, mi.mi).stage(Stage::Security)?;
    Ok(TheoryReport {
        params: p,
        mi,
        estimate: est,
        result,
    })
}

/// Wall-clock timings, kept out of the report file so it stays byte-stable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Timing {
    pub stages: Vec<(&'static str, f64)>,
}

impl Timing {
    fn lap(&mut self, name: &'static str, t: &mut Instant) {
        self.stages.push((name, t.elapsed().as_secs_f64()));
        *t = Instant::now();
    }

    pub fn total(&self) -> f64 {
        self.stages.iter().map(|s| s.1).sum()
    }
}

/// Everything an end-to-end run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub calibration: CalibrationRecord,
    /// Estimate over the simulated symbols (bounds at that length).
    pub estimate: ChannelEstimate,
    /// Same point estimate with bounds at `security.key_block`.
    pub estimate_block: ChannelEstimate,
    pub mi: MutualInfoEstimate,
    pub params: SecurityParams,
    pub security: SecurityResult,
    pub pilot_freq_offset: f64,
    pub sync_delay: usize,
    pub sync_peak_to_sidelobe: f64,
    pub timing: Timing,
    /// Alice's reference quadratures and Bob's SNU symbols, aligned.
    pub alice: Vec<Complex64>,
    pub bob: Vec<Complex64>,
    pub traces: Option<Acquisitions>,
}

#[derive(Debug, Clone)]
pub struct Acquisitions {
    pub signal: WaveformTrace,
    pub vacuum: WaveformTrace,
    pub electronic: WaveformTrace,
}

pub const REPORT_HEADER: &str = "config_hash,seed,order,dispersion,vm,symbol_rate,n_symbols,key_block,\
shot_unit,v_el_snu,freq_offset_hat,sync_delay,\
t_hat,eta_hat,eps_out_hat,t_low,eps_out_up,eps_out_up_block,\
mi,holevo,skr_asym,skr_asym_bps,skr_finite,skr_finite_bps";

impl RunReport {
    pub fn csv_row(&self) -> String {
        let c = &self.config;
        let e = &self.estimate;
        let s = &self.security;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        format!(
            "{},{},{},{:?},{:?},{:?},{},{},{:.9e},{:.9e},{:.9e},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{},{}",
            self.config_hash,
            c.seed,
            c.constellation.order,
            c.constellation.dispersion,
            c.constellation.vm,
            c.tx.symbol_rate,
            c.n_symbols,
            c.key_block(),
            self.calibration.shot_unit,
            self.calibration.v_el_snu,
            self.pilot_freq_offset,
            self.sync_delay,
            e.t_hat,
            e.eta_hat,
            e.eps_out_hat,
            e.t_low,
            e.eps_out_up,
            self.estimate_block.eps_out_up,
            s.mi,
            s.holevo,
            s.skr_asym,
            s.skr_asym_bps,
            opt(s.skr_finite),
            opt(s.skr_finite_bps),
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{REPORT_HEADER}\n{}\n", self.csv_row())
    }

    /// Write `report.csv` and `config.txt`, plus traces and symbol files
    /// when the output settings ask for them. Returns the files written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::new();
        let mut put = |name: &str, data: &[u8]| -> Result<()> {
            let p = dir.join(name);
            fs::write(&p, data)?;
            out.push(p);
            Ok(())
        };
        put("report.csv", self.to_csv().as_bytes())?;
        put("config.txt", self.config.to_text().as_bytes())?;
        if self.config.output.symbols {
            put("alice.csv", &symbols_csv(&self.alice)?)?;
            put("bob.csv", &symbols_csv(&self.bob)?)?;
        }
        if let Some(a) = &self.traces {
            for (name, t) in [("signal.cvqt", &a.signal), ("vacuum.cvqt", &a.vacuum), ("electronic.cvqt", &a.electronic)] {
                let mut buf = Vec::new();
                t.write_to(&mut buf)?;
                put(name, &buf)?;
            }
        }
        Ok(out)
    }
}

fn symbols_csv(s: &[Complex64]) -> Result<Vec<u8>> {
    let f = SymbolFrame {
        symbols: s.to_vec(),
        symbol_rate: 0.0,
        alignment_offset: 0,
        scale: 1.0,
    };
    let mut buf = Vec::new();
    f.write_csv(&mut buf)?;
    Ok(buf)
}

/// Read an `index,re,im` symbol file.
pub fn read_symbols_csv(text: &str) -> Result<Vec<Complex64>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "index,re,im" => {}
        _ => return Err(Error::param("symbols", "missing `index,re,im` header")),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let parts: Vec<&str> = l.split(',').collect();
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::param("symbols", format!("row {}: bad number `{s}`", i + 1)))
            };
            if parts.len() != 3 {
                return Err(Error::param("symbols", format!("row {}: expected 3 fields", i + 1)));
            }
            Ok(Complex64::new(num(parts[1])?, num(parts[2])?))
        })
        .collect()
}

/// Save a trace (CVQT).
pub fn write_trace(path: impl AsRef<Path>, trace: &WaveformTrace) -> Result<()> {
    trace.save(path).stage(Stage::Io)
}

/// Load a trace (CVQT).
pub fn read_trace(path: impl AsRef<Path>) -> Result<WaveformTrace> {
    WaveformTrace::load(path).stage(Stage::Io)
}

/// Resample a transmitter trace to the channel/ADC rate, zero-padding so
/// the length maps onto an integer number of output samples. Energy is
/// preserved, so per-symbol amplitudes stay in SNU quadrature units.
fn to_rate(t: &WaveformTrace, rate: f64) -> Result<WaveformTrace> {
    if t.sample_rate() == rate {
        return Ok(t.clone());
    }
    let q = config::rate_denominator(rate / t.sample_rate())
        .ok_or_else(|| Error::ConfigInvalid("sample-rate ratio is not a simple fraction".into()))?;
    let mut x = t.samples.clone();
    x.resize(x.len().div_ceil(q) * q, Complex64::new(0.0, 0.0));
    let y = dsp::resample(&x, t.sample_rate(), rate, true)?;
    Ok(t.with_samples(y, format!("{} | resampled to {rate:e}", t.origin)).with_rate(rate))
}

/// Full pipeline: transmitter, channel, detector, three acquisitions
/// (signal, vacuum, electronic) plus a separate vacuum capture for the
/// whitening filter, receiver DSP, calibration, estimation and security.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let mut timing = Timing::default();
    let mut clock = Instant::now();
    let seed = cfg.seed;
    let n = cfg.n_symbols;

    let constellation = cfg.constellation.build().stage(Stage::Constellation)?;
    let alphas = constellation.sample(n, rng::derive_seed(seed, streams::SYMBOLS));
    let alice = quadrature_symbols(&alphas);
    let frame = txdsp::modulate_frame(&alice, &cfg.tx).stage(Stage::Transmitter)?;
    timing.lap("tx", &mut clock);

    let fs = cfg.detector.adc_rate;
    let optical = to_rate(&frame.trace, fs)
        .and_then(|t| channel::apply_channel(&t, &cfg.channel, seed))
        .stage(Stage::Channel)?;
    timing.lap("channel", &mut clock);

    let (signal, full_scale) =
        channel::detect_with_full_scale(&optical, &cfg.detector, seed).stage(Stage::Detector)?;
    // Calibration captures share the signal's ADC range, so quantisation
    // noise is common to all acquisitions and lands in v_el.
    let det = DetectorParams {
        full_scale: Some(full_scale),
        ..cfg.detector.clone()
    };
    let len = signal.len();
    let acquire = || -> Result<(WaveformTrace, WaveformTrace, WaveformTrace)> {
        Ok((
            channel::vacuum_only(&det, len, seed)?,
            channel::electronic_only(&det, len, seed)?,
            channel::vacuum_only(&det, len, rng::derive_seed(seed, streams::WHITENING))?,
        ))
    };
    let (vacuum, electronic, whitening_capture) = acquire().stage(Stage::Detector)?;
    timing.lap("detector", &mut clock);

    let rx = &cfg.rx;
    let taps = rxdsp::whitening_taps(&whitening_capture, rx.whitening_taps).stage(Stage::Calibration)?;
    let cal = calibration::calibrate(&vacuum, &electronic, &taps, rx).stage(Stage::Calibration)?;
    timing.lap("calibration", &mut clock);

    let sps = rx.samples_per_symbol(fs).stage(Stage::Receiver)?;
    let receive = || -> Result<(SymbolFrame, f64, rxdsp::SyncResult)> {
        let white = rxdsp::apply_whitening(&signal, &taps);
        let pilot = rxdsp::recover_pilot_with(&white, &PilotSearch::from_config(rx))?;
        let (raw, sync) = rxdsp::demodulate_aided(&white, &pilot, rx, &alice[..rx.sync_reference])?;
        let aligned = raw.aligned(&sync, n, sps)?;
        let refine = rxdsp::common_phase(&alice, &aligned.symbols);
        Ok((aligned.rotated(-refine), pilot.freq_offset, sync))
    };
    let (aligned, freq_offset, sync) = receive().stage(Stage::Receiver)?;
    let bob = calibration::to_snu(&aligned, &cal).symbols;
    timing.lap("rx", &mut clock);

    let eta_d = cfg.detector.efficiency;
    let estimate_stage = || -> Result<(ChannelEstimate, ChannelEstimate, MutualInfoEstimate)> {
        let point = estimate_channel(&alice, &bob, cal.v_el_snu, eta_d)?.with_width(cfg.security.width);
        let here = worst_case_bounds(&point, cfg.security.eps_pe)?;
        let block = worst_case_bounds(&point.with_n(cfg.key_block()), cfg.security.eps_pe)?;
        Ok((here, block, empirical_mi(&alice, &bob)?))
    };
    let (estimate, estimate_block, mi) = estimate_stage().stage(Stage::Estimation)?;
    timing.lap("estimation", &mut clock);

    let security_stage = || -> Result<(SecurityParams, SecurityResult)> {
        let t = estimate.eta_hat.min(1.0);
        let p = SecurityParams {
            vm: cfg.constellation.vm,
            z_star: constellation.effective_correlation(&cfg.security.fock())?,
            transmittance: t,
            eps_in: estimate.eps_out_hat / t,
            eta_d,
            v_el: cal.v_el_snu,
            beta: cfg.security.beta,
            detector: cfg.security.detector,
            symbol_rate: cfg.tx.symbol_rate,
            overhead: 0.0,
        };
        let r = match finite_size_skr(&p, &estimate_block, mi.mi) {
            Ok(r) => r,
            // No positive lower transmittance bound: report asymptotics only.
            Err(Error::NegativeTransmittance(_)) => asymptotic_skr(&p, mi.mi)?,
            Err(e) => return Err(e),
        };
        Ok((p, r))
    };
    let (params, security) = security_stage().stage(Stage::Security)?;
    timing.lap("security", &mut clock);

    let traces = cfg.output.traces.then(|| Acquisitions {
        signal: signal.clone(),
        vacuum: vacuum.clone(),
        electronic: electronic.clone(),
    });
    debug_assert_eq!(signal.role(), Role::Signal);
    Ok(RunReport {
        config: cfg.clone(),
        config_hash: cfg.hash(),
        calibration: cal,
        estimate,
        estimate_block,
        mi,
        params,
        security,
        pilot_freq_offset: freq_offset,
        sync_delay: sync.delay,
        sync_peak_to_sidelobe: sync.peak_to_sidelobe,
        timing,
        alice,
        bob,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyrate_rows_near_reference_rates() {
        for (i, name) in PRESET_NAMES.iter().enumerate() {
            let r = keyrate(&ExperimentConfig::preset(name).unwrap()).unwrap();
            let (asym, fin) = ROW_RESULTS[i];
            assert!((r.result.skr_asym / asym - 1.0).abs() < 0.15, "{name} {}", r.result.skr_asym);
            let gbps = r.result.skr_finite_bps.unwrap() / 1e9;
            if *name == "row1" || *name == "row4" {
                assert!((gbps / fin - 1.0).abs() < 0.15, "{name} {gbps}");
            }
        }
    }
}
