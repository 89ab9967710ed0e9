//! End-to-end pipeline behaviour.

use cvqkd::estimation::noise_referral;
use cvqkd::orchestrator::{run_experiment, ExperimentConfig, RunReport};
use cvqkd::{Error, Stage};

fn run(preset: &str, n: usize, seed: u64, tweak: impl FnOnce(&mut ExperimentConfig)) -> RunReport {
    let mut cfg = ExperimentConfig::preset(preset).unwrap();
    cfg.n_symbols = n;
    cfg.seed = seed;
    tweak(&mut cfg);
    run_experiment(&cfg).unwrap()
}

/// Standard deviation of the excess-noise estimate: residual-variance
/// noise over 2n quadratures, doubled in variance by the equal-length
/// vacuum calibration.
fn eps_sd(r: &RunReport) -> f64 {
    let eta_d = r.config.detector.efficiency;
    let s2 = noise_referral(eta_d, r.calibration.v_el_snu).residual_variance(r.estimate.eps_out_hat);
    let m = 2.0 * r.estimate.n_used as f64;
    s2 * (2.0 / m).sqrt() * 2.0 / eta_d * 2f64.sqrt()
}

#[test]
fn same_config_and_seed_give_identical_reports() {
    let a = run("row1", 20_000, 3, |_| {});
    let b = run("row1", 20_000, 3, |_| {});
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.alice, b.alice);
    assert_eq!(a.bob, b.bob);
    let c = run("row1", 20_000, 4, |_| {});
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn row3_gives_positive_rate_and_consistent_noise() {
    let r = run("row3", 100_000, 1, |_| {});
    let nominal = r.config.eps_out();
    let sd = eps_sd(&r);
    assert!(
        (r.estimate.eps_out_raw - nominal).abs() < 4.0 * sd,
        "eps_out_hat {} vs {nominal} (sd {sd})",
        r.estimate.eps_out_raw
    );
    assert!(r.security.skr_asym > 0.0, "{:?}", r.security);
    assert!((r.pilot_freq_offset - r.config.channel.freq_offset).abs() < 1e6);
}

#[test]
fn clean_link_is_unbiased_over_seeds() {
    let seeds = 4;
    let mut t = Vec::new();
    let mut e = Vec::new();
    let mut sd = 0.0;
    for seed in 1..=seeds {
        let r = run("row4", 100_000, seed, |c| {
            c.channel.excess_noise_in = 0.0;
            c.channel.linewidth_sum = 0.0;
            c.tx.iq_amp_ratio = 1.0;
            c.tx.iq_phase_err = 0.0;
        });
        let truth = (r.config.channel.transmittance * r.config.detector.efficiency).sqrt();
        t.push(r.estimate.t_hat / truth - 1.0);
        e.push(r.estimate.eps_out_raw);
        sd = eps_sd(&r);
    }
    let k = seeds as f64;
    let mean_e = e.iter().sum::<f64>() / k;
    let mean_t = t.iter().sum::<f64>() / k;
    assert!(mean_e.abs() < 3.0 * sd / k.sqrt(), "mean eps {mean_e} sd {sd} runs {e:?}");
    assert!(mean_t.abs() < 0.01, "relative t bias {mean_t}");
}

#[test]
fn invalid_configs_fail_at_config_stage() {
    let mut cfg = ExperimentConfig::preset("row1").unwrap();
    cfg.n_symbols = 10;
    let err = run_experiment(&cfg).unwrap_err();
    assert_eq!(err.stage(), Some(Stage::Config));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn unreachable_sync_threshold_is_a_sync_failure() {
    let mut cfg = ExperimentConfig::preset("row4").unwrap();
    cfg.n_symbols = 20_000;
    cfg.rx.sync_threshold = 1e9;
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err.root(), Error::SyncFailure { .. }), "{err}");
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn report_files_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let r = run("row2", 20_000, 2, |c| {
        c.output.traces = true;
        c.output.symbols = true;
    });
    let files = r.write(dir.path()).unwrap();
    assert_eq!(files.len(), 7);
    let cfg = ExperimentConfig::load(dir.path().join("config.txt")).unwrap();
    assert_eq!(cfg.hash(), r.config_hash);
    let vac = cvqkd::orchestrator::read_trace(dir.path().join("vacuum.cvqt")).unwrap();
    assert_eq!(vac.len(), r.traces.as_ref().unwrap().vacuum.len());
}
