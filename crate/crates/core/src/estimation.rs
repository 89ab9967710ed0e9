//! Channel parameter estimation from paired symbols, finite-size
//! confidence bounds and mutual-information estimates.
//!
//! Symbol conventions: Alice's reference `a` is in heterodyne quadrature
//! units (`E|a|^2 = V_M`), Bob's `b` is calibrated to SNU. Then
//! `b = t a + noise` with `t = sqrt(T eta_d)` and per-quadrature noise
//! variance `1 + v_el + eta_d eps_out / 2`.

use num_complex::Complex64;
use statrs::function::erf::erfc_inv;

use crate::dsp::pairwise_sum;
use crate::error::{Error, Result};

/// Minimum pair count accepted by [`estimate_channel`].
pub const MIN_SYMBOLS: usize = 10_000;

/// Maps the symbol-domain residual variance to excess noise.
///
/// | quantity | expression |
/// |---|---|
/// | residual variance per quadrature | `s2 = 1 + v_el + eta_d eps_out / 2` |
/// | excess noise at the channel output | `eps_out = (s2 - 1 - v_el) 2 / eta_d` |
/// | excess noise at the channel input | `eps_in = eps_out / T` |
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseReferral {
    pub eta_d: f64,
    pub v_el: f64,
}

pub fn noise_referral(eta_d: f64, v_el: f64) -> NoiseReferral {
    NoiseReferral { eta_d, v_el }
}

impl NoiseReferral {
    pub fn residual_variance(&self, eps_out: f64) -> f64 {
        1.0 + self.v_el + self.eta_d * eps_out / 2.0
    }

    pub fn eps_out(&self, residual_variance: f64) -> f64 {
        (residual_variance - 1.0 - self.v_el) * 2.0 / self.eta_d
    }

    pub fn eps_in(&self, residual_variance: f64, transmittance: f64) -> f64 {
        self.eps_out(residual_variance) / transmittance
    }
}

/// How the confidence width of the residual variance enters `eps_out_up`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WidthReferral {
    /// Width `z s2 sqrt(2/m)` added to `eps_out` as is (detector SNU).
    #[default]
    Detector,
    /// Width referred to the channel output like the point estimate
    /// (multiplied by `2 / eta_d`); markedly more conservative.
    ChannelOutput,
}

impl WidthReferral {
    pub fn name(self) -> &'static str {
        match self {
            WidthReferral::Detector => "detector",
            WidthReferral::ChannelOutput => "channel-output",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "detector" => Some(WidthReferral::Detector),
            "channel-output" | "strict" => Some(WidthReferral::ChannelOutput),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    /// Amplitude gain of the whole chain, `sqrt(T eta_d)`.
    pub t_hat: f64,
    /// Channel-only transmittance `t_hat^2 / eta_d`.
    pub eta_hat: f64,
    /// Excess noise at the channel output, clamped at 0.
    pub eps_out_hat: f64,
    /// Unclamped value, for diagnostics.
    pub eps_out_raw: f64,
    /// Residual variance per quadrature.
    pub sigma2_hat: f64,
    /// Alice's per-quadrature symbol variance.
    pub va_hat: f64,
    pub n_used: usize,
    pub t_low: f64,
    pub eps_out_up: f64,
    pub eps_pe: Option<f64>,
    pub referral: NoiseReferral,
    pub width: WidthReferral,
}

impl ChannelEstimate {
    /// Estimate with the values a perfect estimator would return for the
    /// given model; used for theory-mode finite-size evaluation.
    pub fn from_model(transmittance: f64, eps_out: f64, vm: f64, eta_d: f64, v_el: f64, n: usize) -> Self {
        let referral = noise_referral(eta_d, v_el);
        let t_hat = (transmittance * eta_d).sqrt();
        Self {
            t_hat,
            eta_hat: transmittance,
            eps_out_hat: eps_out.max(0.0),
            eps_out_raw: eps_out,
            sigma2_hat: referral.residual_variance(eps_out),
            va_hat: vm / 2.0,
            n_used: n,
            t_low: t_hat,
            eps_out_up: eps_out.max(0.0),
            eps_pe: None,
            referral,
            width: WidthReferral::default(),
        }
    }

    /// Same point estimates, bounds recomputed for a different sample count.
    pub fn with_n(&self, n: usize) -> Self {
        let mut e = self.clone();
        e.n_used = n;
        e.t_low = e.t_hat;
        e.eps_out_up = e.eps_out_hat;
        e.eps_pe = None;
        e
    }

    pub fn with_width(mut self, width: WidthReferral) -> Self {
        self.width = width;
        self
    }

    pub fn t_low_transmittance(&self) -> f64 {
        self.t_low * self.t_low / self.referral.eta_d
    }

    pub const CSV_HEADER: &'static str = "n,t_hat,eta_hat,eps_out_hat,t_low,eps_out_up";

    pub fn csv_fields(&self) -> String {
        format!(
            "{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            self.n_used, self.t_hat, self.eta_hat, self.eps_out_hat, self.t_low, self.eps_out_up
        )
    }
}

pub fn estimate_channel(a: &[Complex64], b: &[Complex64], v_el: f64, eta_d: f64) -> Result<ChannelEstimate> {
    if a.len() != b.len() {
        return Err(Error::param("symbols", format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < MIN_SYMBOLS {
        return Err(Error::TooFewSymbols { got: n, need: MIN_SYMBOLS });
    }
    if !(eta_d > 0.0 && eta_d <= 1.0) {
        return Err(Error::param("eta_d", "must lie in (0, 1]"));
    }
    let cross: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).collect();
    let energy: Vec<f64> = a.iter().map(|x| x.norm_sqr()).collect();
    let ea = pairwise_sum(&energy);
    if !(ea > 0.0) {
        return Err(Error::param("a_symbols", "reference symbols carry no energy"));
    }
    let t_hat = pairwise_sum(&cross) / ea;
    if !(t_hat > 0.0) {
        return Err(Error::NegativeTransmittance(t_hat * t_hat.abs() / eta_d));
    }
    let resid: Vec<f64> = a.iter().zip(b).map(|(x, y)| (y - x * t_hat).norm_sqr()).collect();
    let sigma2_hat = pairwise_sum(&resid) / (2.0 * n as f64);
    let referral = noise_referral(eta_d, v_el);
    let eps_out_raw = referral.eps_out(sigma2_hat);
    let eps_out_hat = eps_out_raw.max(0.0);
    Ok(ChannelEstimate {
        t_hat,
        eta_hat: t_hat * t_hat / eta_d,
        eps_out_hat,
        eps_out_raw,
        sigma2_hat,
        va_hat: ea / (2.0 * n as f64),
        n_used: n,
        t_low: t_hat,
        eps_out_up: eps_out_hat,
        eps_pe: None,
        referral,
        width: WidthReferral::default(),
    })
}

/// Two-sided normal quantile: `P(|N(0,1)| > z) = eps_pe`.
pub fn confidence_z(eps_pe: f64) -> Result<f64> {
    if !(eps_pe > 0.0 && eps_pe < 1.0) {
        return Err(Error::param("eps_pe", format!("{eps_pe} not in (0, 1)")));
    }
    Ok(std::f64::consts::SQRT_2 * erfc_inv(eps_pe))
}

/// Gaussian worst-case bounds over `m = 2n` quadrature samples:
///
/// `t_low = t_hat - z sqrt(s2 / (m Va))`, `s2_up = s2 (1 + z sqrt(2/m))`.
pub fn worst_case_bounds(est: &ChannelEstimate, eps_pe: f64) -> Result<ChannelEstimate> {
    let z = confidence_z(eps_pe)?;
    let m = 2.0 * est.n_used as f64;
    let mut out = est.clone();
    out.t_low = (est.t_hat - z * (est.sigma2_hat / (m * est.va_hat)).sqrt()).max(0.0);
    let width = z * est.sigma2_hat * (2.0 / m).sqrt();
    out.eps_out_up = match est.width {
        WidthReferral::Detector => est.eps_out_hat + width,
        WidthReferral::ChannelOutput => est.eps_out_hat + width * 2.0 / est.referral.eta_d,
    };
    out.eps_pe = Some(eps_pe);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiMethod {
    Empirical,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutualInfoEstimate {
    pub snr: f64,
    /// Bits per channel use (both quadratures).
    pub mi: f64,
    pub method: MiMethod,
    /// Residual variance vanished; `snr` and `mi` are capped.
    pub saturated: bool,
}

pub const SNR_CAP: f64 = 1e15;

impl MutualInfoEstimate {
    pub fn from_snr(snr: f64, method: MiMethod) -> Self {
        let saturated = !(snr < SNR_CAP);
        let snr = snr.min(SNR_CAP);
        Self {
            snr,
            mi: (1.0 + snr).log2(),
            method,
            saturated,
        }
    }

    /// Heterodyne Gaussian-channel model, per-quadrature
    /// `SNR = (eta_d T vm / 2) / (1 + eta_d T eps_in / 2 + v_el)`.
    pub fn model(vm: f64, transmittance: f64, eps_in: f64, eta_d: f64, v_el: f64) -> Self {
        let signal = eta_d * transmittance * vm / 2.0;
        let noise = 1.0 + eta_d * transmittance * eps_in / 2.0 + v_el;
        Self::from_snr(signal / noise, MiMethod::Model)
    }
}

/// Gaussian-capacity surrogate from data: `snr = t^2 Va / s2`.
pub fn empirical_mi(a: &[Complex64], b: &[Complex64]) -> Result<MutualInfoEstimate> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::param("symbols", "need equal, non-empty sequences"));
    }
    let n = a.len() as f64;
    let ea = pairwise_sum(&a.iter().map(|x| x.norm_sqr()).collect::<Vec<_>>());
    if !(ea > 0.0) {
        return Err(Error::param("a_symbols", "reference symbols carry no energy"));
    }
    let t = pairwise_sum(&a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).collect::<Vec<_>>()) / ea;
    let s2 = pairwise_sum(&a.iter().zip(b).map(|(x, y)| (y - x * t).norm_sqr()).collect::<Vec<_>>()) / (2.0 * n);
    let va = ea / (2.0 * n);
    let signal = t * t * va;
    let snr = if s2 > 0.0 { signal / s2 } else { f64::INFINITY };
    Ok(MutualInfoEstimate::from_snr(snr, MiMethod::Empirical))
}
