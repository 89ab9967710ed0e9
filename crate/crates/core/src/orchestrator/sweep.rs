//! Parameter sweeps in theory or full-simulation mode.

use std::fmt::Write as _;

use rayon::prelude::*;

use super::plot::{line_plot, Series};
use super::{dac_rate_for, keyrate_from, run_experiment, security_params, ExperimentConfig};
use crate::error::{Error, Result, ResultExt, Stage};
use crate::rng::{derive_seed, streams};
use crate::security::{NoiseModel, Protocol, VmSweep};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Vm,
    SymbolRate,
    Constellation,
    Distance,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Vm => "vm",
            Axis::SymbolRate => "symbol_rate",
            Axis::Constellation => "constellation",
            Axis::Distance => "distance",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vm" => Some(Axis::Vm),
            "symbol_rate" | "symbol-rate" | "rate" => Some(Axis::SymbolRate),
            "constellation" => Some(Axis::Constellation),
            "distance" => Some(Axis::Distance),
            _ => None,
        }
    }

    fn unit(self) -> &'static str {
        match self {
            Axis::Vm => "V_M (SNU)",
            Axis::SymbolRate => "symbol rate (Baud)",
            Axis::Constellation => "constellation order",
            Axis::Distance => "distance (km)",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepMode {
    /// Key-rate formulas on the nominal parameters.
    Theory,
    /// Full `run_experiment` per point.
    Simulate,
}

impl SweepMode {
    pub fn name(self) -> &'static str {
        match self {
            SweepMode::Theory => "theory",
            SweepMode::Simulate => "simulate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "theory" => Some(SweepMode::Theory),
            "simulate" | "sim" => Some(SweepMode::Simulate),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointOutcome {
    pub transmittance: f64,
    pub eps_out: f64,
    /// Simulation mode only.
    pub t_hat: Option<f64>,
    pub eps_out_hat: Option<f64>,
    pub mi: f64,
    pub holevo: f64,
    pub skr_asym: f64,
    pub skr_asym_bps: f64,
    pub skr_finite: Option<f64>,
    pub skr_finite_bps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub index: usize,
    pub label: String,
    pub x: f64,
    pub outcome: std::result::Result<PointOutcome, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub axis: Axis,
    pub mode: SweepMode,
    pub config_hash: String,
    pub points: Vec<SweepPoint>,
}

pub const SWEEP_HEADER: &str = "index,axis,mode,label,x,status,transmittance,eps_out,t_hat,eps_out_hat,\
mi,holevo,skr_asym,skr_asym_bps,skr_finite,skr_finite_bps,error";

enum Value {
    Number(f64),
    Discrete(usize, f64),
    Gaussian,
}

fn parse_value(axis: Axis, s: &str, cfg: &ExperimentConfig) -> Result<(Value, f64)> {
    let bad = || Error::ConfigInvalid(format!("bad {} grid value `{s}`", axis.name()));
    match axis {
        Axis::Constellation => {
            if s == "gaussian" {
                return Ok((Value::Gaussian, 0.0));
            }
            let (o, nu) = match s.split_once(':') {
                Some((o, nu)) => (o, nu.parse::<f64>().map_err(|_| bad())?),
                None => (s, cfg.constellation.dispersion),
            };
            let o: usize = o.parse().map_err(|_| bad())?;
            Ok((Value::Discrete(o, nu), o as f64))
        }
        _ => {
            let x: f64 = s.parse().map_err(|_| bad())?;
            if !x.is_finite() {
                return Err(bad());
            }
            Ok((Value::Number(x), x))
        }
    }
}

/// Expand `start:stop:count` (inclusive, linear) or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<String>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 && !s.contains(',') {
        let num = |p: &str| p.trim().parse::<f64>().map_err(|_| Error::ConfigInvalid(format!("bad grid `{s}`")));
        let (a, b) = (num(parts[0])?, num(parts[1])?);
        let n: usize = parts[2]
            .trim()
            .parse()
            .map_err(|_| Error::ConfigInvalid(format!("bad grid count in `{s}`")))?;
        if n < 2 {
            return Err(Error::ConfigInvalid("grid count must be at least 2".into()));
        }
        return Ok((0..n).map(|k| format!("{:?}", a + (b - a) * k as f64 / (n - 1) as f64)).collect());
    }
    let v: Vec<String> = s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect();
    if v.is_empty() {
        return Err(Error::ConfigInvalid("empty grid".into()));
    }
    Ok(v)
}

/// Configuration for one point. The Gaussian baseline keeps the base config.
fn point_config(base: &ExperimentConfig, axis: Axis, value: &Value) -> Result<ExperimentConfig> {
    let mut c = base.clone();
    match (axis, value) {
        (Axis::Vm, Value::Number(v)) => c.constellation.vm = *v,
        (Axis::SymbolRate, Value::Number(r)) => {
            c.tx.symbol_rate = *r;
            c.tx.dac_rate = dac_rate_for(*r, c.tx.pilot_freq);
        }
        (Axis::Distance, Value::Number(l)) => {
            if *l < 0.0 {
                return Err(Error::ConfigInvalid("distance must be >= 0".into()));
            }
            c.channel.length_km = *l;
            c.channel.transmittance = 10f64.powf(-c.loss_db_per_km * l / 10.0);
        }
        (Axis::Constellation, Value::Discrete(o, nu)) => {
            c.constellation.order = *o;
            c.constellation.dispersion = *nu;
        }
        (Axis::Constellation, Value::Gaussian) => {}
        _ => unreachable!("value kind follows the axis"),
    }
    c.sync_derived();
    Ok(c)
}

fn theory_point(c: &ExperimentConfig, axis: Axis, value: &Value) -> Result<PointOutcome> {
    c.validate()?;
    let p = match (axis, value) {
        // The V_M axis goes through the modulation-variance sweep helper.
        (Axis::Vm, Value::Number(vm)) => {
            let base = security_params(c)?;
            VmSweep {
                protocol: Protocol::Discrete {
                    order: c.constellation.order,
                    dispersion: c.constellation.dispersion,
                },
                noise: NoiseModel::constant(c.channel.excess_noise_in),
                base,
                fock: c.security.fock(),
            }
            .params_at(*vm)?
        }
        (Axis::Constellation, Value::Gaussian) => security_params(c)?.gaussian(),
        _ => security_params(c)?,
    };
    let r = keyrate_from(c, p)?;
    Ok(PointOutcome {
        transmittance: r.params.transmittance,
        eps_out: r.params.eps_out(),
        t_hat: None,
        eps_out_hat: None,
        mi: r.result.mi,
        holevo: r.result.holevo,
        skr_asym: r.result.skr_asym,
        skr_asym_bps: r.result.skr_asym_bps,
        skr_finite: r.result.skr_finite,
        skr_finite_bps: r.result.skr_finite_bps,
    })
}

fn simulate_point(c: &ExperimentConfig, value: &Value) -> Result<PointOutcome> {
    if matches!(value, Value::Gaussian) {
        return Err(Error::ConfigInvalid("the Gaussian baseline is theory-only".into()).at(Stage::Config));
    }
    let r = run_experiment(c)?;
    Ok(PointOutcome {
        transmittance: c.channel.transmittance,
        eps_out: c.eps_out(),
        t_hat: Some(r.estimate.t_hat),
        eps_out_hat: Some(r.estimate.eps_out_hat),
        mi: r.security.mi,
        holevo: r.security.holevo,
        skr_asym: r.security.skr_asym,
        skr_asym_bps: r.security.skr_asym_bps,
        skr_finite: r.security.skr_finite,
        skr_finite_bps: r.security.skr_finite_bps,
    })
}

/// Evaluate `grid` along `axis`. Point failures are recorded, not fatal.
/// Points run on a pool of `cfg.workers` threads; simulated points get the
/// seed `derive_seed(cfg.seed, SWEEP_BASE + index)`.
pub fn sweep(cfg: &ExperimentConfig, axis: Axis, mode: SweepMode, grid: &[String]) -> Result<SweepReport> {
    if grid.is_empty() {
        return Err(Error::ConfigInvalid("empty sweep grid".into()).at(Stage::Config));
    }
    let parsed = grid
        .iter()
        .map(|s| parse_value(axis, s, cfg))
        .collect::<Result<Vec<_>>>()
        .stage(Stage::Config)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("worker pool: {e}")))?;
    let points = pool.install(|| {
        parsed
            .par_iter()
            .enumerate()
            .map(|(index, (value, x))| {
                let outcome = point_config(cfg, axis, value).and_then(|mut c| match mode {
                    SweepMode::Theory => theory_point(&c, axis, value),
                    SweepMode::Simulate => {
                        c.seed = derive_seed(cfg.seed, streams::SWEEP_BASE + index as u64);
                        simulate_point(&c, value)
                    }
                });
                SweepPoint {
                    index,
                    label: grid[index].clone(),
                    x: *x,
                    outcome: outcome.map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    Ok(SweepReport {
        axis,
        mode,
        config_hash: cfg.hash(),
        points,
    })
}

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{SWEEP_HEADER}");
        let e = |v: f64| format!("{v:.9e}");
        let o = |v: Option<f64>| v.map(e).unwrap_or_default();
        for p in &self.points {
            let head = format!(
                "{},{},{},{},{}",
                p.index,
                self.axis.name(),
                self.mode.name(),
                p.label.replace(',', ";"),
                e(p.x)
            );
            match &p.outcome {
                Ok(r) => {
                    let _ = writeln!(
                        s,
                        "{head},ok,{},{},{},{},{},{},{},{},{},{},",
                        e(r.transmittance),
                        e(r.eps_out),
                        o(r.t_hat),
                        o(r.eps_out_hat),
                        e(r.mi),
                        e(r.holevo),
                        e(r.skr_asym),
                        e(r.skr_asym_bps),
                        o(r.skr_finite),
                        o(r.skr_finite_bps)
                    );
                }
                Err(msg) => {
                    let _ = writeln!(s, "{head},error,,,,,,,,,,,{}", msg.replace([',', '\n'], ";"));
                }
            }
        }
        s
    }

    /// Parse a file written by [`to_csv`](Self::to_csv). The config hash
    /// is not part of the file and comes back empty.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, why: &str| Error::ConfigParse {
            line,
            reason: format!("sweep csv: {why}"),
        };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(SWEEP_HEADER) {
            return Err(bad(1, "unexpected header"));
        }
        let mut axis = None;
        let mut mode = None;
        let mut points = Vec::new();
        for (i, l) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let line = i + 2;
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != SWEEP_HEADER.split(',').count() {
                return Err(bad(line, "wrong column count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line, "bad number"));
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            axis = Some(Axis::parse(f[1]).ok_or_else(|| bad(line, "unknown axis"))?);
            mode = Some(SweepMode::parse(f[2]).ok_or_else(|| bad(line, "unknown mode"))?);
            let outcome = match f[5] {
                "ok" => Ok(PointOutcome {
                    transmittance: num(f[6])?,
                    eps_out: num(f[7])?,
                    t_hat: opt(f[8])?,
                    eps_out_hat: opt(f[9])?,
                    mi: num(f[10])?,
                    holevo: num(f[11])?,
                    skr_asym: num(f[12])?,
                    skr_asym_bps: num(f[13])?,
                    skr_finite: opt(f[14])?,
                    skr_finite_bps: opt(f[15])?,
                }),
                "error" => Err(f[16].to_string()),
                _ => return Err(bad(line, "status must be ok or error")),
            };
            points.push(SweepPoint {
                index: f[0].parse().map_err(|_| bad(line, "bad index"))?,
                label: f[3].to_string(),
                x: num(f[4])?,
                outcome,
            });
        }
        Ok(Self {
            axis: axis.ok_or_else(|| bad(2, "no rows"))?,
            mode: mode.expect("set with axis"),
            config_hash: String::new(),
            points,
        })
    }

    /// Key rate against the swept value. Rates are in bits/use, except
    /// along the symbol-rate axis, where they are in Gb/s.
    pub fn to_svg(&self) -> String {
        let per_second = self.axis == Axis::SymbolRate;
        let ok: Vec<(f64, &PointOutcome)> = self
            .points
            .iter()
            .filter_map(|p| p.outcome.as_ref().ok().map(|r| (p.x, r)))
            .collect();
        let pick = |f: &dyn Fn(&PointOutcome) -> Option<f64>| -> Vec<(f64, f64)> {
            ok.iter().filter_map(|(x, r)| f(r).map(|y| (*x, y))).collect()
        };
        let series = if per_second {
            vec![
                Series {
                    name: "asymptotic".into(),
                    points: pick(&|r| Some(r.skr_asym_bps / 1e9)),
                },
                Series {
                    name: "finite-size".into(),
                    points: pick(&|r| r.skr_finite_bps.map(|v| v / 1e9)),
                },
            ]
        } else {
            vec![
                Series {
                    name: "asymptotic".into(),
                    points: pick(&|r| Some(r.skr_asym)),
                },
                Series {
                    name: "finite-size".into(),
                    points: pick(&|r| r.skr_finite),
                },
            ]
        };
        let y = if per_second { "secret key rate (Gb/s)" } else { "secret key rate (bits/use)" };
        line_plot(
            &format!("{} sweep ({})", self.axis.name(), self.mode.name()),
            self.axis.unit(),
            y,
            &series,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::security::sweep_vm;

    fn strings(v: &[f64]) -> Vec<String> {
        v.iter().map(|x| format!("{x:?}")).collect()
    }

    #[test]
    fn header_is_stable() {
        assert_eq!(
            SWEEP_HEADER,
            "index,axis,mode,label,x,status,transmittance,eps_out,t_hat,eps_out_hat,mi,holevo,skr_asym,skr_asym_bps,skr_finite,skr_finite_bps,error"
        );
    }

    #[test]
    fn grid_syntax() {
        assert_eq!(parse_grid("0:10:3").unwrap(), vec!["0.0", "5.0", "10.0"]);
        assert_eq!(parse_grid("16, 64:0.129,gaussian").unwrap(), vec!["16", "64:0.129", "gaussian"]);
        assert!(parse_grid("1:2:1").is_err());
        assert!(parse_grid(" , ").is_err());
    }

    #[test]
    fn vm_theory_matches_sweep_helper() {
        let cfg = ExperimentConfig::preset("row1").unwrap();
        let grid = [0.3, 0.667, 1.2];
        let rep = sweep(&cfg, Axis::Vm, SweepMode::Theory, &strings(&grid)).unwrap();
        let spec = VmSweep {
            protocol: Protocol::Discrete {
                order: 16,
                dispersion: 0.215,
            },
            noise: NoiseModel::constant(cfg.channel.excess_noise_in),
            base: security_params(&cfg).unwrap(),
            fock: cfg.security.fock(),
        };
        let curve = sweep_vm(&spec, &grid).unwrap();
        for (p, q) in rep.points.iter().zip(&curve.points) {
            let r = p.outcome.as_ref().unwrap();
            assert_eq!(r.skr_asym, q.result.skr_asym);
            assert_eq!(r.holevo, q.result.holevo);
            assert_eq!(r.mi, q.result.mi);
        }
    }

    #[test]
    fn symbol_rate_scales_bits_per_second() {
        let cfg = ExperimentConfig::preset("row4").unwrap();
        let rep = sweep(&cfg, Axis::SymbolRate, SweepMode::Theory, &strings(&[8e9, 10e9, 16e9])).unwrap();
        let r: Vec<&PointOutcome> = rep.points.iter().map(|p| p.outcome.as_ref().unwrap()).collect();
        for (p, x) in r.iter().zip([8e9, 10e9, 16e9]) {
            assert_eq!(p.skr_asym, r[0].skr_asym);
            assert!((p.skr_asym_bps / x - r[0].skr_asym).abs() < 1e-15);
        }
    }

    #[test]
    fn distance_sweep_is_monotone() {
        let cfg = ExperimentConfig::preset("row4").unwrap();
        let grid = parse_grid("0:40:9").unwrap();
        let rep = sweep(&cfg, Axis::Distance, SweepMode::Theory, &grid).unwrap();
        let k: Vec<f64> = rep.points.iter().map(|p| p.outcome.as_ref().unwrap().skr_asym).collect();
        assert!(k.windows(2).all(|w| w[1] < w[0]), "{k:?}");
        assert!(rep.to_svg().contains("<polyline"));
    }

    #[test]
    fn failures_are_recorded_and_sweep_continues() {
        let cfg = ExperimentConfig::preset("row1").unwrap();
        let grid: Vec<String> = ["16", "15", "gaussian", "64:0.129"].iter().map(|s| s.to_string()).collect();
        let rep = sweep(&cfg, Axis::Constellation, SweepMode::Theory, &grid).unwrap();
        assert!(rep.points[0].outcome.is_ok());
        assert!(rep.points[1].outcome.is_err());
        let g = rep.points[2].outcome.as_ref().unwrap();
        assert!(g.skr_asym >= rep.points[0].outcome.as_ref().unwrap().skr_asym);
        assert!(rep.points[3].outcome.is_ok());
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 5);
        assert!(csv.lines().nth(2).unwrap().contains(",error,"));
        // Every row has the header's column count.
        let cols = SWEEP_HEADER.split(',').count();
        assert!(csv.lines().all(|l| l.split(',').count() == cols));
        let back = SweepReport::from_csv(&csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        assert!(SweepReport::from_csv("nope\n").is_err());
    }

    #[test]
    fn simulated_gaussian_point_is_an_error() {
        let cfg = ExperimentConfig::preset("row1").unwrap();
        let rep = sweep(&cfg, Axis::Constellation, SweepMode::Simulate, &["gaussian".to_string()]).unwrap();
        assert!(rep.points[0].outcome.is_err());
    }
}
