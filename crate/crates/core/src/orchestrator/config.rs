//! Experiment configuration: `key = value` lines, `#` comments, dotted
//! section prefixes (`tx.pilot_freq = 15e9`).

use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::channel::{ChannelParams, DetectorParams};
use crate::constellation::{Constellation, FockWorkspace};
use crate::error::{Error, Result, ResultExt, Stage};
use crate::estimation::{WidthReferral, MIN_SYMBOLS};
use crate::rxdsp::RxConfig;
use crate::security::DetectorModel;
use crate::txdsp::TxConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstellationSpec {
    pub order: usize,
    pub dispersion: f64,
    pub vm: f64,
}

impl ConstellationSpec {
    pub fn build(&self) -> Result<Constellation> {
        Constellation::build(self.order, self.dispersion, Some(self.vm))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecuritySettings {
    pub beta: f64,
    pub eps_pe: f64,
    pub detector: DetectorModel,
    pub width: WidthReferral,
    /// Block length for the finite-size rate; `None` uses the simulated length.
    pub key_block: Option<usize>,
    pub fock_cutoff: usize,
}

impl Default for SecuritySettings {
    fn default() -> Self {
        Self {
            beta: 0.95,
            eps_pe: 1e-10,
            detector: DetectorModel::Trusted,
            width: WidthReferral::Detector,
            key_block: None,
            fock_cutoff: 40,
        }
    }
}

impl SecuritySettings {
    pub fn fock(&self) -> FockWorkspace {
        FockWorkspace::auto(self.fock_cutoff)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    pub traces: bool,
    pub symbols: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub constellation: ConstellationSpec,
    pub tx: TxConfig,
    pub channel: ChannelParams,
    pub detector: DetectorParams,
    /// Symbol rate, roll-off, span and pilot frequency mirror `tx`.
    pub rx: RxConfig,
    pub security: SecuritySettings,
    pub n_symbols: usize,
    pub seed: u64,
    /// Sweep worker threads; 0 uses every core.
    pub workers: usize,
    /// Fibre attenuation used by distance sweeps.
    pub loss_db_per_km: f64,
    pub output: OutputSettings,
}

/// Reference operating points: M, nu, symbol rate, T, vm, v_el, eps_out, key block.
const ROWS: [(usize, f64, f64, f64, f64, f64, f64, usize); 4] = [
    (16, 0.215, 16e9, 0.519, 0.667, 0.150, 7.3e-3, 2_000_000),
    (64, 0.129, 10e9, 0.514, 0.703, 0.112, 8.0e-3, 2_000_000),
    (16, 0.215, 8e9, 0.512, 1.01, 0.081, 3.7e-3, 2_000_000),
    (16, 0.215, 16e9, 0.346, 0.513, 0.151, 5.7e-3, 20_000_000),
];

/// Target key rates for the preset rows: asymptotic bits/use and
/// finite-size Gb/s.
pub const ROW_RESULTS: [(f64, f64); 4] = [(0.0425, 0.534), (0.0486, 0.400), (0.0669, 0.438), (0.0181, 0.246)];

pub const PRESET_NAMES: [&str; 4] = ["row1", "row2", "row3", "row4"];

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::preset("row1").expect("built-in preset")
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let idx = PRESET_NAMES
            .iter()
            .position(|&p| p == name)
            .ok_or_else(|| Error::ConfigInvalid(format!("unknown preset `{name}` (expected one of {})", PRESET_NAMES.join(", "))))?;
        let (order, nu, rate, t, vm, v_el, eps_out, block) = ROWS[idx];
        let tx = TxConfig {
            symbol_rate: rate,
            dac_rate: dac_rate_for(rate, 15e9),
            ..TxConfig::default()
        };
        let mut cfg = Self {
            constellation: ConstellationSpec {
                order,
                dispersion: nu,
                vm,
            },
            channel: ChannelParams {
                transmittance: t,
                excess_noise_in: eps_out / t,
                ..ChannelParams::default()
            },
            detector: DetectorParams {
                v_el,
                ..DetectorParams::default()
            },
            rx: RxConfig::default(),
            tx,
            security: SecuritySettings {
                key_block: Some(block),
                ..SecuritySettings::default()
            },
            n_symbols: 100_000,
            seed: 1,
            workers: 0,
            loss_db_per_km: 0.2,
            output: OutputSettings::default(),
        };
        cfg.sync_derived();
        Ok(cfg)
    }

    /// Copy the fields other modules derive from the transmitter.
    pub fn sync_derived(&mut self) {
        self.rx.symbol_rate = self.tx.symbol_rate;
        self.rx.rrc_rolloff = self.tx.rrc_rolloff;
        self.rx.rrc_span_symbols = self.tx.rrc_span_symbols;
        self.rx.pilot_freq = self.tx.pilot_freq;
        self.channel.signal_half_band = self.tx.quantum_half_band();
    }

    /// Excess noise at the channel output, SNU.
    pub fn eps_out(&self) -> f64 {
        self.channel.excess_noise_out()
    }

    pub fn key_block(&self) -> usize {
        self.security.key_block.unwrap_or(self.n_symbols)
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_inner().stage(Stage::Config)
    }

    fn validate_inner(&self) -> Result<()> {
        self.tx.validate()?;
        self.channel.validate()?;
        self.detector.validate()?;
        self.rx.validate()?;
        self.constellation.build()?;
        let rx_mismatch = self.rx.symbol_rate != self.tx.symbol_rate
            || self.rx.rrc_rolloff != self.tx.rrc_rolloff
            || self.rx.rrc_span_symbols != self.tx.rrc_span_symbols
            || self.rx.pilot_freq != self.tx.pilot_freq;
        if rx_mismatch {
            return Err(Error::ConfigInvalid("receiver pulse/pilot settings differ from the transmitter".into()));
        }
        if (self.channel.signal_half_band - self.tx.quantum_half_band()).abs() > 1e-6 * self.tx.quantum_half_band() {
            return Err(Error::ConfigInvalid("channel signal band differs from the transmitter quantum band".into()));
        }
        self.rx.samples_per_symbol(self.detector.adc_rate).map_err(|_| {
            Error::ConfigInvalid(format!(
                "detector.adc_rate {:e} is not an integer multiple (>= 2) of tx.symbol_rate {:e}",
                self.detector.adc_rate, self.tx.symbol_rate
            ))
        })?;
        if rate_denominator(self.detector.adc_rate / self.tx.dac_rate).is_none() {
            return Err(Error::ConfigInvalid(format!(
                "detector.adc_rate / tx.dac_rate = {} is not a simple ratio",
                self.detector.adc_rate / self.tx.dac_rate
            )));
        }
        let pilot_rx = self.tx.pilot_freq + self.channel.freq_offset.abs() + self.rx.pilot_bandwidth;
        if pilot_rx >= self.detector.adc_rate / 2.0 {
            return Err(Error::ConfigInvalid(format!(
                "offset pilot at {pilot_rx:e} Hz falls outside the ADC band"
            )));
        }
        if self.channel.freq_offset.abs() + self.rx.pilot_bandwidth > self.rx.pilot_search_span {
            return Err(Error::ConfigInvalid("rx.pilot_search_span does not cover channel.freq_offset".into()));
        }
        if self.n_symbols < MIN_SYMBOLS {
            return Err(Error::ConfigInvalid(format!("run.n_symbols must be at least {MIN_SYMBOLS}")));
        }
        if self.rx.sync_reference > self.n_symbols {
            return Err(Error::ConfigInvalid("rx.sync_reference exceeds run.n_symbols".into()));
        }
        let sps_rx = self.rx.samples_per_symbol(self.detector.adc_rate)?;
        if self.n_symbols * sps_rx < 64 * self.rx.whitening_taps {
            return Err(Error::ConfigInvalid("run.n_symbols too small to estimate the whitening filter".into()));
        }
        let s = &self.security;
        if !(0.0..=1.0).contains(&s.beta) {
            return Err(Error::ConfigInvalid(format!("security.beta {} not in [0, 1]", s.beta)));
        }
        if !(s.eps_pe > 0.0 && s.eps_pe < 1.0) {
            return Err(Error::ConfigInvalid(format!("security.eps_pe {} not in (0, 1)", s.eps_pe)));
        }
        if s.key_block.is_some_and(|n| n < MIN_SYMBOLS) {
            return Err(Error::ConfigInvalid(format!("security.key_block must be at least {MIN_SYMBOLS}")));
        }
        if !(self.loss_db_per_km > 0.0) {
            return Err(Error::ConfigInvalid("channel.loss_db_per_km must be positive".into()));
        }
        Ok(())
    }

    /// Parse config text on top of defaults (or of `preset = ...`, which is
    /// applied first wherever it appears).
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigParse {
                line: i + 1,
                reason: format!("expected `key = value`, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() || v.is_empty() {
                return Err(Error::ConfigParse {
                    line: i + 1,
                    reason: "empty key or value".into(),
                });
            }
            entries.push((i + 1, k.to_string(), v.to_string()));
        }
        let mut cfg = match entries.iter().find(|e| e.1 == "preset") {
            Some((line, _, v)) => Self::preset(v).map_err(|e| Error::ConfigParse {
                line: *line,
                reason: e.to_string(),
            })?,
            None => Self::default(),
        };
        let mut seen = std::collections::HashSet::new();
        for (line, k, v) in &entries {
            if !seen.insert(k.as_str()) {
                return Err(Error::ConfigParse {
                    line: *line,
                    reason: format!("duplicate key `{k}`"),
                });
            }
            if k == "preset" {
                continue;
            }
            cfg.set(k, v).map_err(|reason| Error::ConfigParse { line: *line, reason })?;
        }
        if seen.contains("channel.excess_noise_in") && seen.contains("channel.excess_noise_out") {
            return Err(Error::ConfigInvalid(
                "set only one of channel.excess_noise_in and channel.excess_noise_out".into(),
            ));
        }
        // Output-referred noise depends on the final transmittance.
        if let Some((_, _, v)) = entries.iter().find(|e| e.1 == "channel.excess_noise_out") {
            let eps_out: f64 = v.parse().expect("checked by set");
            cfg.channel.excess_noise_in = eps_out / cfg.channel.transmittance;
        }
        cfg.sync_derived();
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Set one key. Errors are plain messages, placed on a line by the caller.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn f(v: &str) -> std::result::Result<f64, String> {
            let x: f64 = v.parse().map_err(|_| format!("`{v}` is not a number"))?;
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("`{v}` is not finite"))
            }
        }
        fn u(v: &str) -> std::result::Result<usize, String> {
            let x = f(v)?;
            if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
                Ok(x as usize)
            } else {
                Err(format!("`{v}` is not a non-negative integer"))
            }
        }
        fn b(v: &str) -> std::result::Result<bool, String> {
            match v {
                "true" | "yes" | "1" => Ok(true),
                "false" | "no" | "0" => Ok(false),
                _ => Err(format!("`{v}` is not a boolean")),
            }
        }
        match key {
            "constellation.order" => self.constellation.order = u(value)?,
            "constellation.dispersion" => self.constellation.dispersion = f(value)?,
            "constellation.vm" => self.constellation.vm = f(value)?,
            "tx.symbol_rate" => self.tx.symbol_rate = f(value)?,
            "tx.dac_rate" => self.tx.dac_rate = f(value)?,
            "tx.rrc_rolloff" => self.tx.rrc_rolloff = f(value)?,
            "tx.rrc_span_symbols" => self.tx.rrc_span_symbols = u(value)?,
            "tx.pilot_freq" => self.tx.pilot_freq = f(value)?,
            "tx.pilot_amp_ratio" => self.tx.pilot_amp_ratio = f(value)?,
            "tx.dac_bits" => self.tx.dac_bits = u(value)? as u32,
            "tx.tx_6db" => self.tx.tx_6db = f(value)?,
            "tx.iq_amp_ratio" => self.tx.iq_amp_ratio = f(value)?,
            "tx.iq_phase_err" => self.tx.iq_phase_err = f(value)?,
            "tx.preemphasis" => self.tx.preemphasis = b(value)?,
            "channel.transmittance" => self.channel.transmittance = f(value)?,
            "channel.excess_noise_in" => self.channel.excess_noise_in = f(value)?,
            "channel.excess_noise_out" => {
                f(value)?;
            }
            "channel.length_km" => self.channel.length_km = f(value)?,
            "channel.loss_db_per_km" => self.loss_db_per_km = f(value)?,
            "channel.freq_offset" => self.channel.freq_offset = f(value)?,
            "channel.linewidth_sum" => self.channel.linewidth_sum = f(value)?,
            "channel.delay_samples" => self.channel.delay_samples = u(value)?,
            "detector.efficiency" => self.detector.efficiency = f(value)?,
            "detector.v_el" => self.detector.v_el = f(value)?,
            "detector.adc_bits" => self.detector.adc_bits = u(value)? as u32,
            "detector.adc_rate" => self.detector.adc_rate = f(value)?,
            "detector.rx_3db" => self.detector.rx_3db = f(value)?,
            "rx.pilot_bandwidth" => self.rx.pilot_bandwidth = f(value)?,
            "rx.pilot_search_span" => self.rx.pilot_search_span = f(value)?,
            "rx.phase_lpf" => self.rx.phase_lpf = f(value)?,
            "rx.whitening_taps" => self.rx.whitening_taps = u(value)?,
            "rx.sync_reference" => self.rx.sync_reference = u(value)?,
            "rx.sync_threshold" => self.rx.sync_threshold = f(value)?,
            "security.beta" => self.security.beta = f(value)?,
            "security.eps_pe" => self.security.eps_pe = f(value)?,
            "security.detector" => {
                self.security.detector =
                    DetectorModel::parse(value).ok_or_else(|| format!("`{value}` is not trusted|untrusted"))?
            }
            "security.width" => {
                self.security.width =
                    WidthReferral::parse(value).ok_or_else(|| format!("`{value}` is not detector|channel-output"))?
            }
            "security.key_block" => {
                self.security.key_block = if value == "none" { None } else { Some(u(value)?) }
            }
            "security.fock_cutoff" => self.security.fock_cutoff = u(value)?,
            "run.n_symbols" => self.n_symbols = u(value)?,
            "run.seed" => {
                self.seed = value
                    .parse::<u64>()
                    .map_err(|_| format!("`{value}` is not a 64-bit unsigned integer"))?
            }
            "run.workers" => self.workers = u(value)?,
            "output.dir" => self.output.dir = Some(PathBuf::from(value)),
            "output.traces" => self.output.traces = b(value)?,
            "output.symbols" => self.output.symbols = b(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Canonical text: every key, fixed order, round-trip exact numbers.
    /// Output paths are excluded so the hash only covers the experiment.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let c = &self.constellation;
        kv("constellation.order", c.order.to_string());
        kv("constellation.dispersion", format!("{:?}", c.dispersion));
        kv("constellation.vm", format!("{:?}", c.vm));
        let t = &self.tx;
        kv("tx.symbol_rate", format!("{:?}", t.symbol_rate));
        kv("tx.dac_rate", format!("{:?}", t.dac_rate));
        kv("tx.rrc_rolloff", format!("{:?}", t.rrc_rolloff));
        kv("tx.rrc_span_symbols", t.rrc_span_symbols.to_string());
        kv("tx.pilot_freq", format!("{:?}", t.pilot_freq));
        kv("tx.pilot_amp_ratio", format!("{:?}", t.pilot_amp_ratio));
        kv("tx.dac_bits", t.dac_bits.to_string());
        kv("tx.tx_6db", format!("{:?}", t.tx_6db));
        kv("tx.iq_amp_ratio", format!("{:?}", t.iq_amp_ratio));
        kv("tx.iq_phase_err", format!("{:?}", t.iq_phase_err));
        kv("tx.preemphasis", t.preemphasis.to_string());
        let ch = &self.channel;
        kv("channel.transmittance", format!("{:?}", ch.transmittance));
        kv("channel.excess_noise_in", format!("{:?}", ch.excess_noise_in));
        kv("channel.length_km", format!("{:?}", ch.length_km));
        kv("channel.loss_db_per_km", format!("{:?}", self.loss_db_per_km));
        kv("channel.freq_offset", format!("{:?}", ch.freq_offset));
        kv("channel.linewidth_sum", format!("{:?}", ch.linewidth_sum));
        kv("channel.delay_samples", ch.delay_samples.to_string());
        let d = &self.detector;
        kv("detector.efficiency", format!("{:?}", d.efficiency));
        kv("detector.v_el", format!("{:?}", d.v_el));
        kv("detector.adc_bits", d.adc_bits.to_string());
        kv("detector.adc_rate", format!("{:?}", d.adc_rate));
        kv("detector.rx_3db", format!("{:?}", d.rx_3db));
        let r = &self.rx;
        kv("rx.pilot_bandwidth", format!("{:?}", r.pilot_bandwidth));
        kv("rx.pilot_search_span", format!("{:?}", r.pilot_search_span));
        kv("rx.phase_lpf", format!("{:?}", r.phase_lpf));
        kv("rx.whitening_taps", r.whitening_taps.to_string());
        kv("rx.sync_reference", r.sync_reference.to_string());
        kv("rx.sync_threshold", format!("{:?}", r.sync_threshold));
        let sec = &self.security;
        kv("security.beta", format!("{:?}", sec.beta));
        kv("security.eps_pe", format!("{:?}", sec.eps_pe));
        kv("security.detector", sec.detector.name().into());
        kv("security.width", sec.width.name().into());
        kv("security.key_block", sec.key_block.map_or("none".into(), |n| n.to_string()));
        kv("security.fock_cutoff", sec.fock_cutoff.to_string());
        kv("run.n_symbols", self.n_symbols.to_string());
        kv("run.seed", self.seed.to_string());
        kv("run.workers", self.workers.to_string());
        s
    }

    /// SHA-256 of the canonical text, hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

/// Smallest DAC rate that is an integer multiple (>= 2) of the symbol rate
/// and puts the pilot below Nyquist with a 0.5 GHz margin.
pub fn dac_rate_for(symbol_rate: f64, pilot_freq: f64) -> f64 {
    let k = ((2.0 * pilot_freq + 1e9) / symbol_rate).ceil().max(2.0);
    k * symbol_rate
}

/// `q` such that `r * q` is an integer, for `q <= 64`.
pub(crate) fn rate_denominator(r: f64) -> Option<usize> {
    (1..=64).find(|&q| {
        let x = r * q as f64;
        (x - x.round()).abs() < 1e-9 * x.max(1.0) && x.round() >= 1.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in PRESET_NAMES {
            ExperimentConfig::preset(name).unwrap().validate().unwrap();
        }
        assert_eq!(ExperimentConfig::preset("row2").unwrap().tx.dac_rate, 40e9);
        assert_eq!(ExperimentConfig::preset("row3").unwrap().tx.dac_rate, 32e9);
    }

    #[test]
    fn canonical_text_round_trips() {
        let mut cfg = ExperimentConfig::preset("row4").unwrap();
        cfg.channel.freq_offset = -1.234_567_890_123e9;
        cfg.security.width = WidthReferral::ChannelOutput;
        cfg.security.key_block = None;
        let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn comments_sections_and_preset() {
        let cfg = ExperimentConfig::parse(
            "# comment\nrun.seed = 9   # trailing\n\npreset = row3\nchannel.excess_noise_out = 2e-3\nchannel.transmittance=0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.tx.symbol_rate, 8e9);
        assert!((cfg.eps_out() - 2e-3).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let e = ExperimentConfig::parse("run.seed = 1\nbogus.key = 3\n").unwrap_err();
        assert!(matches!(e, Error::ConfigParse { line: 2, .. }), "{e}");
        let e = ExperimentConfig::parse("tx.symbol_rate = fast\n").unwrap_err();
        assert!(matches!(e, Error::ConfigParse { line: 1, .. }));
        let e = ExperimentConfig::parse("run.seed = 1\nrun.seed = 2\n").unwrap_err();
        assert!(matches!(e, Error::ConfigParse { line: 2, .. }));
        assert!(ExperimentConfig::parse("no equals sign\n").is_err());
        assert_eq!(e.exit_code(), 2);
    }

    fn invalid(text: &str) -> Error {
        ExperimentConfig::parse(text).unwrap().validate().unwrap_err()
    }

    #[test]
    fn cross_module_inconsistencies_rejected() {
        // Pilot inside the quantum band.
        assert!(matches!(invalid("tx.pilot_freq = 9e9\ntx.dac_rate = 32e9\n").root(), Error::PilotOverlap { .. }));
        // Offset beyond the signal band.
        assert!(matches!(invalid("channel.freq_offset = 10e9\n").root(), Error::FrequencyOffset { .. }));
        // ADC not an integer multiple of the symbol rate.
        assert!(matches!(invalid("detector.adc_rate = 84e9\n").root(), Error::ConfigInvalid(_)));
        // DAC not an integer multiple of the symbol rate.
        assert!(invalid("tx.dac_rate = 33e9\n").exit_code() == 2);
        // Search span narrower than the offset.
        assert!(matches!(invalid("rx.pilot_search_span = 1e9\n").root(), Error::ConfigInvalid(_)));
        assert!(matches!(invalid("run.n_symbols = 5000\n").root(), Error::ConfigInvalid(_)));
        assert!(matches!(invalid("security.eps_pe = 0\n").root(), Error::ConfigInvalid(_)));
        for e in [invalid("tx.pilot_freq = 9e9\n"), invalid("detector.adc_rate = 84e9\n")] {
            assert_eq!(e.stage(), Some(Stage::Config));
            assert_eq!(e.exit_code(), 2);
        }
    }

    #[test]
    fn both_noise_referrals_rejected() {
        assert!(ExperimentConfig::parse("channel.excess_noise_in = 0.01\nchannel.excess_noise_out = 0.01\n").is_err());
    }

    #[test]
    fn dac_rate_rule() {
        assert_eq!(dac_rate_for(16e9, 15e9), 32e9);
        assert_eq!(dac_rate_for(10e9, 15e9), 40e9);
        assert_eq!(dac_rate_for(8e9, 15e9), 32e9);
        assert_eq!(rate_denominator(2.5), Some(2));
        assert_eq!(rate_denominator(std::f64::consts::PI), None);
    }
}
