use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvqkd::calibration::{self, CalibrationRecord};
use cvqkd::channel::{self, DetectorParams, ADC_FULL_SCALE_RMS};
use cvqkd::estimation::{estimate_channel, worst_case_bounds, ChannelEstimate, WidthReferral};
use cvqkd::orchestrator::{
    self, keyrate, parse_grid, read_symbols_csv, run_experiment, sweep, Axis, ExperimentConfig, SweepMode,
    SweepReport, REPORT_HEADER, SWEEP_HEADER,
};
use cvqkd::rng;
use cvqkd::rxdsp;
use cvqkd::security::SecurityResult;
use cvqkd::{Error, Result};

#[derive(Parser)]
#[command(name = "cvqkd", version, about = "Discrete-modulated CV-QKD link simulator and key-rate calculator")]
struct Cli {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports, plots and traces.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print timings and diagnostics.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Overrides {
    /// Start from a built-in operating point (row1..row4).
    #[arg(long)]
    preset: Option<String>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full simulated link and estimate the key rate.
    Simulate {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        n_symbols: Option<usize>,
        /// Also write the three acquisitions as CVQT traces.
        #[arg(long)]
        traces: bool,
        /// Also write Alice's and Bob's aligned symbols.
        #[arg(long)]
        symbols: bool,
    },
    /// Key rate from nominal parameters (no simulation).
    Keyrate {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        dispersion: Option<f64>,
        #[arg(long)]
        vm: Option<f64>,
        #[arg(long)]
        transmittance: Option<f64>,
        /// Excess noise at the channel output, SNU.
        #[arg(long)]
        eps_out: Option<f64>,
        #[arg(long)]
        v_el: Option<f64>,
        #[arg(long)]
        eta_d: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        symbol_rate: Option<f64>,
        /// Block length for the finite-size rate.
        #[arg(long)]
        key_block: Option<usize>,
        /// trusted | untrusted
        #[arg(long)]
        detector: Option<String>,
    },
    /// Sweep one parameter and write a CSV and an SVG plot.
    Sweep {
        #[command(flatten)]
        o: Overrides,
        /// vm | symbol_rate | constellation | distance
        #[arg(long)]
        axis: String,
        /// `start:stop:count` or a comma-separated list (constellation: `16`, `64:0.129`, `gaussian`).
        #[arg(long)]
        grid: String,
        /// theory | simulate
        #[arg(long, default_value = "theory")]
        mode: String,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Shot-noise calibration from vacuum and electronic-noise traces.
    /// Without trace files the acquisitions are simulated from the config.
    Calibrate {
        #[command(flatten)]
        o: Overrides,
        #[arg(long, requires = "electronic")]
        vacuum: Option<PathBuf>,
        #[arg(long, requires = "vacuum")]
        electronic: Option<PathBuf>,
        /// Separate vacuum capture for the whitening filter.
        #[arg(long, requires = "vacuum")]
        whitening: Option<PathBuf>,
    },
    /// Channel estimate and worst-case bounds from aligned symbol files.
    Estimate {
        #[command(flatten)]
        o: Overrides,
        /// Alice's quadratures (`index,re,im`).
        #[arg(long)]
        alice: PathBuf,
        /// Bob's symbols in SNU (`index,re,im`).
        #[arg(long)]
        bob: PathBuf,
        #[arg(long)]
        v_el: Option<f64>,
        #[arg(long)]
        eta_d: Option<f64>,
        #[arg(long)]
        eps_pe: Option<f64>,
        /// detector | channel-output
        #[arg(long)]
        width: Option<String>,
    },
    /// Summarise a run or sweep CSV; sweeps also get their plot redrawn.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::ConfigInvalid(msg.into())
}

fn load_config(cli: &Cli, o: &Overrides) -> Result<ExperimentConfig> {
    let mut text = String::new();
    if let Some(p) = &o.preset {
        text.push_str(&format!("preset = {p}\n"));
    }
    if let Some(path) = &cli.config {
        text.push_str(&fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?);
        text.push('\n');
    }
    for kv in &o.set {
        text.push_str(kv);
        text.push('\n');
    }
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out {
        cfg.output.dir = Some(d.clone());
    }
    Ok(cfg)
}

fn set(cfg: &mut ExperimentConfig, key: &str, value: Option<String>) -> Result<()> {
    if let Some(v) = value {
        cfg.set(key, &v).map_err(|r| config_error(format!("--{}: {r}", key.rsplit('.').next().unwrap_or(key))))?;
    }
    Ok(())
}

fn write_file(dir: &Path, name: &str, data: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let p = dir.join(name);
    fs::write(&p, data)?;
    Ok(p)
}

fn print_security(r: &SecurityResult, verbose: bool) {
    println!("mi_bits_per_use      {:.6}", r.mi);
    println!("holevo_bits_per_use  {:.6}", r.holevo);
    println!("skr_asym_bits_per_use {:.6}", r.skr_asym);
    println!("skr_asym_gbps        {:.6}", r.skr_asym_bps / 1e9);
    if let (Some(f), Some(b)) = (r.skr_finite, r.skr_finite_bps) {
        println!("skr_finite_bits_per_use {:.6}", f);
        println!("skr_finite_gbps      {:.6}", b / 1e9);
    }
    if verbose {
        let e: Vec<String> = r.symplectic_eigs.iter().map(|v| format!("{v:.9}")).collect();
        println!("symplectic_eigenvalues {}", e.join(" "));
    }
}

fn print_estimate(e: &ChannelEstimate) {
    println!("n_used               {}", e.n_used);
    println!("t_hat                {:.6}", e.t_hat);
    println!("transmittance_hat    {:.6}", e.eta_hat);
    println!("eps_out_hat_snu      {:.6e}", e.eps_out_hat);
    println!("t_low                {:.6}", e.t_low);
    println!("eps_out_up_snu       {:.6e}", e.eps_out_up);
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Simulate {
            o,
            n_symbols,
            traces,
            symbols,
        } => {
            let mut cfg = load_config(cli, o)?;
            set(&mut cfg, "run.n_symbols", n_symbols.map(|n| n.to_string()))?;
            cfg.output.traces |= traces;
            cfg.output.symbols |= symbols;
            let r = run_experiment(&cfg)?;
            println!("config_hash          {}", r.config_hash);
            println!("seed                 {}", cfg.seed);
            println!("v_el_snu             {:.6}", r.calibration.v_el_snu);
            println!("freq_offset_hat_hz   {:.6e}", r.pilot_freq_offset);
            println!("sync_delay           {}", r.sync_delay);
            print_estimate(&r.estimate);
            println!("eps_out_up_block_snu {:.6e}", r.estimate_block.eps_out_up);
            print_security(&r.security, cli.verbose);
            if cli.verbose {
                for (stage, t) in &r.timing.stages {
                    eprintln!("timing {stage:<12} {t:.3} s");
                }
            }
            match &cfg.output.dir {
                Some(dir) => {
                    for p in r.write(dir)? {
                        eprintln!("wrote {}", p.display());
                    }
                }
                None => print!("{}", r.to_csv()),
            }
        }
        Command::Keyrate {
            o,
            order,
            dispersion,
            vm,
            transmittance,
            eps_out,
            v_el,
            eta_d,
            beta,
            symbol_rate,
            key_block,
            detector,
        } => {
            let mut cfg = load_config(cli, o)?;
            let s = |v: Option<f64>| v.map(|x| format!("{x:?}"));
            set(&mut cfg, "constellation.order", order.map(|v| v.to_string()))?;
            set(&mut cfg, "constellation.dispersion", s(*dispersion))?;
            set(&mut cfg, "constellation.vm", s(*vm))?;
            let eps_out_now = cfg.eps_out();
            set(&mut cfg, "channel.transmittance", s(*transmittance))?;
            // Output-referred excess noise is held fixed when only T changes.
            let eps = eps_out.unwrap_or(eps_out_now);
            cfg.channel.excess_noise_in = eps / cfg.channel.transmittance;
            set(&mut cfg, "detector.v_el", s(*v_el))?;
            set(&mut cfg, "detector.efficiency", s(*eta_d))?;
            set(&mut cfg, "security.beta", s(*beta))?;
            set(&mut cfg, "security.key_block", key_block.map(|v| v.to_string()))?;
            set(&mut cfg, "security.detector", detector.clone())?;
            if let Some(r) = symbol_rate {
                cfg.tx.symbol_rate = *r;
                cfg.tx.dac_rate = orchestrator::dac_rate_for(*r, cfg.tx.pilot_freq);
            }
            cfg.sync_derived();
            let r = keyrate(&cfg)?;
            println!("z_star               {:.12}", r.params.z_star);
            println!("transmittance        {:.6}", r.params.transmittance);
            println!("eps_out_snu          {:.6e}", r.params.eps_out());
            println!("key_block            {}", r.estimate.n_used);
            print_security(&r.result, cli.verbose);
            if let Some(dir) = &cfg.output.dir {
                let csv = format!("{}\n{}\n", SecurityResult::CSV_HEADER, r.result.csv_fields());
                eprintln!("wrote {}", write_file(dir, "keyrate.csv", &csv)?.display());
            }
        }
        Command::Sweep {
            o,
            axis,
            grid,
            mode,
            workers,
        } => {
            let mut cfg = load_config(cli, o)?;
            set(&mut cfg, "run.workers", workers.map(|v| v.to_string()))?;
            let axis = Axis::parse(axis).ok_or_else(|| config_error(format!("unknown axis `{axis}`")))?;
            let mode = SweepMode::parse(mode).ok_or_else(|| config_error(format!("unknown mode `{mode}`")))?;
            let grid = parse_grid(grid)?;
            let rep = sweep(&cfg, axis, mode, &grid)?;
            let failed = rep.points.iter().filter(|p| p.outcome.is_err()).count();
            match &cfg.output.dir {
                Some(dir) => {
                    eprintln!("wrote {}", write_file(dir, "sweep.csv", &rep.to_csv())?.display());
                    eprintln!("wrote {}", write_file(dir, "sweep.svg", &rep.to_svg())?.display());
                }
                None => print!("{}", rep.to_csv()),
            }
            if failed > 0 {
                eprintln!("{failed} of {} points failed (see the error column)", rep.points.len());
            }
        }
        Command::Calibrate {
            o,
            vacuum,
            electronic,
            whitening,
        } => {
            let cfg = load_config(cli, o)?;
            cfg.validate()?;
            let (vac, ele, white) = match (vacuum, electronic) {
                (Some(v), Some(e)) => {
                    let vac = orchestrator::read_trace(v)?;
                    let ele = orchestrator::read_trace(e)?;
                    let white = match whitening {
                        Some(w) => orchestrator::read_trace(w)?,
                        None => {
                            eprintln!("note: no --whitening capture; the whitening filter is estimated from the vacuum trace itself");
                            vac.clone()
                        }
                    };
                    (vac, ele, white)
                }
                _ => simulate_acquisitions(&cfg)?,
            };
            let taps = rxdsp::whitening_taps(&white, cfg.rx.whitening_taps)?;
            let rec = calibration::calibrate(&vac, &ele, &taps, &cfg.rx)?;
            print_calibration(&rec);
            if let Some(dir) = &cfg.output.dir {
                let mut csv = String::from("key,value\n");
                for (k, v) in rec.to_report_lines() {
                    csv.push_str(&format!("{k},{v}\n"));
                }
                eprintln!("wrote {}", write_file(dir, "calibration.csv", &csv)?.display());
                if vacuum.is_none() {
                    for (name, t) in [("vacuum.cvqt", &vac), ("electronic.cvqt", &ele), ("whitening.cvqt", &white)] {
                        let p = dir.join(name);
                        orchestrator::write_trace(&p, t)?;
                        eprintln!("wrote {}", p.display());
                    }
                }
            }
        }
        Command::Estimate {
            o,
            alice,
            bob,
            v_el,
            eta_d,
            eps_pe,
            width,
        } => {
            let cfg = load_config(cli, o)?;
            let read = |p: &PathBuf| -> Result<_> { read_symbols_csv(&fs::read_to_string(p)?) };
            let (a, b) = (read(alice)?, read(bob)?);
            let width = match width {
                Some(w) => WidthReferral::parse(w).ok_or_else(|| config_error(format!("unknown width `{w}`")))?,
                None => cfg.security.width,
            };
            let est = estimate_channel(
                &a,
                &b,
                v_el.unwrap_or(cfg.detector.v_el),
                eta_d.unwrap_or(cfg.detector.efficiency),
            )?
            .with_width(width);
            let est = worst_case_bounds(&est, eps_pe.unwrap_or(cfg.security.eps_pe))?;
            print_estimate(&est);
            if let Some(dir) = &cfg.output.dir {
                let csv = format!("{}\n{}\n", ChannelEstimate::CSV_HEADER, est.csv_fields());
                eprintln!("wrote {}", write_file(dir, "estimate.csv", &csv)?.display());
            }
        }
        Command::Report { input } => {
            let text = fs::read_to_string(input)?;
            let header = text.lines().next().unwrap_or("").trim();
            if header == REPORT_HEADER {
                let row = text.lines().nth(1).ok_or_else(|| config_error("run report has no data row"))?;
                for (k, v) in REPORT_HEADER.split(',').zip(row.split(',')) {
                    println!("{k:<20} {v}");
                }
            } else if header == SWEEP_HEADER {
                let rep = SweepReport::from_csv(&text)?;
                println!("axis {} mode {} points {}", rep.axis.name(), rep.mode.name(), rep.points.len());
                for p in &rep.points {
                    match &p.outcome {
                        Ok(r) => println!("{:<12} skr_asym {:.6} skr_finite {}", p.label, r.skr_asym, r.skr_finite.map_or("-".into(), |v| format!("{v:.6}"))),
                        Err(e) => println!("{:<12} error: {e}", p.label),
                    }
                }
                let dir = cli.out.clone().unwrap_or_else(|| input.parent().map(Path::to_path_buf).unwrap_or_default());
                let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
                eprintln!("wrote {}", write_file(&dir, &format!("{stem}.svg"), &rep.to_svg())?.display());
            } else {
                return Err(config_error(format!("{}: not a run or sweep report", input.display())));
            }
        }
    }
    Ok(())
}

fn print_calibration(rec: &CalibrationRecord) {
    println!("shot_unit_raw        {:.6e}", rec.shot_unit);
    println!("v_el_snu             {:.6}", rec.v_el_snu);
    println!("vacuum_var_raw       {:.6e}", rec.vacuum_var_raw);
    println!("electronic_var_raw   {:.6e}", rec.elec_var_raw);
    println!("n_vacuum             {}", rec.n_vacuum);
    println!("n_electronic         {}", rec.n_electronic);
}

/// Vacuum, electronic and whitening captures with a fixed ADC range.
fn simulate_acquisitions(
    cfg: &ExperimentConfig,
) -> Result<(cvqkd::trace::WaveformTrace, cvqkd::trace::WaveformTrace, cvqkd::trace::WaveformTrace)> {
    let sps = cfg.rx.samples_per_symbol(cfg.detector.adc_rate)?;
    let n = cfg.n_symbols * sps;
    let rms = (2.0 * (1.0 + cfg.detector.v_el)).sqrt();
    let det = DetectorParams {
        full_scale: Some(cfg.detector.full_scale.unwrap_or(ADC_FULL_SCALE_RMS * rms)),
        ..cfg.detector.clone()
    };
    Ok((
        channel::vacuum_only(&det, n, cfg.seed)?,
        channel::electronic_only(&det, n, cfg.seed)?,
        channel::vacuum_only(&det, n, rng::derive_seed(cfg.seed, rng::streams::WHITENING))?,
    ))
}
