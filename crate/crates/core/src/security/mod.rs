//! Secret key rates under collective attacks: `R = beta I(A:B) - chi(E:B)`.
//!
//! The Holevo bound is evaluated on the Gaussian state with Alice-Bob
//! correlation `sqrt(T) Z*`, where `Z*` is the effective correlation of the
//! discrete constellation (the Gaussian value `sqrt(vm^2 + 2 vm)` gives the
//! no-switching protocol).

pub mod gaussian;
mod sweep;

pub use gaussian::g_entropy;
pub use sweep::{sweep_vm, NoiseModel, Protocol, VmCurve, VmPoint, VmSweep};

use nalgebra::DMatrix;

use crate::constellation::gaussian_correlation;
use crate::error::{Error, Result};
use crate::estimation::{ChannelEstimate, MutualInfoEstimate};
use gaussian::{heterodyne_condition, two_mode, von_neumann_entropy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DetectorModel {
    /// Detector loss and electronic noise calibrated and not attributed to Eve.
    #[default]
    Trusted,
    /// Everything after Alice is attributed to the channel.
    Untrusted,
}

impl DetectorModel {
    pub fn name(self) -> &'static str {
        match self {
            DetectorModel::Trusted => "trusted",
            DetectorModel::Untrusted => "untrusted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "trusted" => Some(DetectorModel::Trusted),
            "untrusted" => Some(DetectorModel::Untrusted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecurityParams {
    pub vm: f64,
    pub z_star: f64,
    pub transmittance: f64,
    /// Excess noise at the channel input, SNU.
    pub eps_in: f64,
    pub eta_d: f64,
    pub v_el: f64,
    pub beta: f64,
    pub detector: DetectorModel,
    pub symbol_rate: f64,
    /// Fraction of symbols disclosed for synchronisation.
    pub overhead: f64,
}

impl SecurityParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, why: &str| Err(Error::param(name, why.to_string()));
        if !(self.vm > 0.0) {
            return bad("vm", "must be > 0");
        }
        if !(self.z_star >= 0.0 && self.z_star <= gaussian_correlation(self.vm) * (1.0 + 1e-12) + 1e-12) {
            return bad("z_star", "must lie in [0, sqrt(vm^2 + 2 vm)]");
        }
        if !(self.transmittance > 0.0 && self.transmittance <= 1.0) {
            return bad("transmittance", "must lie in (0, 1]");
        }
        if !(self.eps_in >= 0.0) {
            return bad("eps_in", "must be >= 0");
        }
        if !(self.eta_d > 0.0 && self.eta_d <= 1.0) {
            return bad("eta_d", "must lie in (0, 1]");
        }
        if !(self.v_el >= 0.0) {
            return bad("v_el", "must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad("beta", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.overhead) {
            return bad("overhead", "must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn eps_out(&self) -> f64 {
        self.transmittance * self.eps_in
    }

    /// Copy with the Gaussian-modulation correlation.
    pub fn gaussian(&self) -> Self {
        Self {
            z_star: gaussian_correlation(self.vm),
            ..self.clone()
        }
    }

    pub fn model_mi(&self) -> MutualInfoEstimate {
        MutualInfoEstimate::model(self.vm, self.transmittance, self.eps_in, self.eta_d, self.v_el)
    }

    /// Symbol rate net of the reference-symbol overhead.
    pub fn key_symbol_rate(&self) -> f64 {
        self.symbol_rate * (1.0 - self.overhead)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HolevoBound {
    pub chi: f64,
    /// Symplectic spectrum of the Alice-Bob state.
    pub eigs_ab: Vec<f64>,
    /// Symplectic spectrum after Bob's measurement.
    pub eigs_conditional: Vec<f64>,
}

/// Symplectic map on modes (A, B, f, g), with f and g in vacuum, modelling
/// the detector as a beamsplitter of transmittance `eta` that mixes B with
/// one arm of an EPR pair of variance `1 + 2 v_el / (1 - eta)`.
///
/// The EPR pair is produced from (f, g) by a two-mode squeezer and, after
/// the beamsplitter, the inverse squeezer is applied to the trusted pair.
/// That does not change any entropy but cancels the divergent variance
/// analytically, so every entry stays finite up to and including
/// `eta = 1`, where the map reduces to classical added noise whose
/// purification remains on the trusted side.
fn detector_transform(eta: f64, v_el: f64) -> DMatrix<f64> {
    let st = eta.sqrt();
    let u = 1.0 - eta + v_el;
    let b_f = u.sqrt();
    let b_g = v_el.sqrt();
    let d = 1.0 + st;
    let f_f = st - v_el / d;
    let f_g = (v_el * u).sqrt() / d;
    let g_g = 1.0 + v_el / d;
    let mut m = DMatrix::<f64>::identity(8, 8);
    for q in 0..2 {
        let z = if q == 0 { 1.0 } else { -1.0 };
        let (b, f, g) = (2 + q, 4 + q, 6 + q);
        m[(b, b)] = st;
        m[(b, f)] = b_f;
        m[(b, g)] = z * b_g;
        m[(f, b)] = -b_f;
        m[(f, f)] = f_f;
        m[(f, g)] = -z * f_g;
        m[(g, b)] = z * b_g;
        m[(g, f)] = z * f_g;
        m[(g, g)] = g_g;
    }
    m
}

pub fn holevo_bound(p: &SecurityParams) -> Result<HolevoBound> {
    p.validate()?;
    let (t, eps_in, eta, v_el) = match p.detector {
        DetectorModel::Trusted => (p.transmittance, p.eps_in, p.eta_d, p.v_el),
        // Same measured statistics with the detector folded into the channel.
        DetectorModel::Untrusted => (
            p.eta_d * p.transmittance,
            p.eps_in + 2.0 * p.v_el / (p.eta_d * p.transmittance),
            1.0,
            0.0,
        ),
    };
    let a = p.vm + 1.0;
    let b = t * (p.vm + eps_in) + 1.0;
    let c = t.sqrt() * p.z_star;
    let gamma_ab = two_mode(a, b, c);
    let (s_ab, eigs_ab) = von_neumann_entropy(&gamma_ab)?;

    let conditional = if v_el > 0.0 || eta < 1.0 {
        let full = detector_transform(eta, v_el);
        let mut g = DMatrix::<f64>::identity(8, 8);
        g.view_mut((0, 0), (4, 4)).copy_from(&gamma_ab);
        heterodyne_condition(&(&full * g * full.transpose()), [2, 3])
    } else {
        heterodyne_condition(&gamma_ab, [2, 3])
    };
    let (s_cond, eigs_conditional) = von_neumann_entropy(&conditional)?;
    Ok(HolevoBound {
        chi: (s_ab - s_cond).max(0.0),
        eigs_ab,
        eigs_conditional,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecurityResult {
    pub mi: f64,
    pub holevo: f64,
    /// `beta I - chi`, may be negative.
    pub skr_asym: f64,
    pub skr_asym_clamped: f64,
    pub skr_asym_bps: f64,
    pub skr_finite: Option<f64>,
    pub skr_finite_bps: Option<f64>,
    /// Holevo bound at the worst-case parameters.
    pub holevo_worst: Option<f64>,
    pub symplectic_eigs: Vec<f64>,
}

impl SecurityResult {
    pub const CSV_HEADER: &'static str = "mi,holevo,skr_asym,skr_asym_bps,skr_finite,skr_finite_bps";

    pub fn csv_fields(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        format!(
            "{:.9e},{:.9e},{:.9e},{:.9e},{},{}",
            self.mi,
            self.holevo,
            self.skr_asym,
            self.skr_asym_bps,
            opt(self.skr_finite),
            opt(self.skr_finite_bps)
        )
    }
}

pub fn asymptotic_skr(p: &SecurityParams, mi: f64) -> Result<SecurityResult> {
    let h = holevo_bound(p)?;
    let skr = p.beta * mi - h.chi;
    let mut eigs = h.eigs_ab;
    eigs.extend(h.eigs_conditional);
    Ok(SecurityResult {
        mi,
        holevo: h.chi,
        skr_asym: skr,
        skr_asym_clamped: skr.max(0.0),
        skr_asym_bps: skr * p.key_symbol_rate(),
        skr_finite: None,
        skr_finite_bps: None,
        holevo_worst: None,
        symplectic_eigs: eigs,
    })
}

/// Asymptotic rate with the model mutual information.
pub fn asymptotic_skr_model(p: &SecurityParams) -> Result<SecurityResult> {
    asymptotic_skr(p, p.model_mi().mi)
}

/// Key rate with the Holevo bound taken at the worst-case transmittance and
/// excess noise of `est` (which must carry bounds). The asymptotic fields
/// use `p` as given.
pub fn finite_size_skr(p: &SecurityParams, est: &ChannelEstimate, mi: f64) -> Result<SecurityResult> {
    if est.eps_pe.is_none() {
        return Err(Error::param("estimate", "worst-case bounds have not been computed"));
    }
    let mut out = asymptotic_skr(p, mi)?;
    let t_low = est.t_low_transmittance();
    if !(t_low > 0.0) {
        return Err(Error::NegativeTransmittance(t_low));
    }
    let worst = SecurityParams {
        transmittance: t_low.min(1.0),
        eps_in: est.eps_out_up / t_low,
        ..p.clone()
    };
    let chi = holevo_bound(&worst)?.chi;
    let skr = p.beta * mi - chi;
    out.skr_finite = Some(skr);
    out.skr_finite_bps = Some(skr * p.key_symbol_rate());
    out.holevo_worst = Some(chi);
    Ok(out)
}

/// No-switching baseline: same pipeline with the Gaussian correlation.
pub fn gaussian_noswitching_skr(p: &SecurityParams, mi: f64) -> Result<SecurityResult> {
    asymptotic_skr(&p.gaussian(), mi)
}
