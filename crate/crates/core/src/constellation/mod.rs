//! Probabilistically shaped square-grid constellations.
//!
//! Points are coherent-state amplitudes alpha (quadrature mean 2 Re alpha with
//! vacuum variance 1), so the modulation variance is `V_M = 2 sum p |alpha|^2`.
//! Shaping weights are `exp(-nu |g|^2)` where `g` is the point's position on
//! the unscaled odd-integer grid {.., -3, -1, 1, 3, ..}^2.

mod fock;

use std::f64::consts::SQRT_2;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::distr::{weighted::WeightedIndex, Distribution};

use crate::error::{Error, Result};
use crate::rng;

pub use fock::FockWorkspace;

#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    points: Vec<Complex64>,
    probs: Vec<f64>,
    dispersion: f64,
    vm: f64,
}

const PROB_SUM_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-12;

/// Side length of a square grid, if `order` is a perfect square.
fn grid_side(order: usize) -> Option<usize> {
    let k = (order as f64).sqrt().round() as usize;
    (k >= 1 && k * k == order).then_some(k)
}

impl Constellation {
    /// Square QAM grid with Maxwell-Boltzmann shaping, optionally scaled to a
    /// target modulation variance.
    pub fn build(order: usize, dispersion: f64, target_vm: Option<f64>) -> Result<Self> {
        let side = grid_side(order).ok_or(Error::NonSquareOrder(order))?;
        if !(dispersion >= 0.0 && dispersion.is_finite()) {
            return Err(Error::param("dispersion", format!("{dispersion} must be >= 0")));
        }
        if let Some(vm) = target_vm {
            if !(vm > 0.0 && vm.is_finite()) {
                return Err(Error::param("target_vm", format!("{vm} must be > 0")));
            }
            if order == 1 {
                return Err(Error::param("target_vm", "a single point at the origin cannot be scaled"));
            }
        }
        let coord = |i: usize| 2.0 * i as f64 - (side as f64 - 1.0);
        let mut grid = Vec::with_capacity(order);
        for iy in 0..side {
            for ix in 0..side {
                grid.push(Complex64::new(coord(ix), coord(iy)));
            }
        }
        let min_r2 = grid.iter().map(|g| g.norm_sqr()).fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = grid.iter().map(|g| (-dispersion * (g.norm_sqr() - min_r2)).exp()).collect();
        let total: f64 = weights.iter().sum();
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        if probs.iter().any(|&p| p <= 0.0) {
            return Err(Error::param("dispersion", format!("{dispersion} underflows outer-point probabilities")));
        }
        let mut c = Self::from_parts(grid, probs, dispersion)?;
        if let Some(vm) = target_vm {
            c = c.scaled((vm / c.vm).sqrt());
        }
        Ok(c)
    }

    /// Arbitrary zero-mean point set. Dispersion is recorded as 0.
    pub fn from_points(points: Vec<Complex64>, probs: Vec<f64>) -> Result<Self> {
        Self::from_parts(points, probs, 0.0)
    }

    fn from_parts(points: Vec<Complex64>, probs: Vec<f64>, dispersion: f64) -> Result<Self> {
        if points.is_empty() || points.len() != probs.len() {
            return Err(Error::param("points", "need equally many points and probabilities"));
        }
        if probs.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::param("probs", "every probability must be > 0"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::param("probs", format!("sum to {sum}, not 1")));
        }
        let mean: Complex64 = points.iter().zip(&probs).map(|(a, p)| a * p).sum();
        let scale = points.iter().map(|a| a.norm()).fold(1.0, f64::max);
        if mean.norm() > MEAN_TOL * scale {
            return Err(Error::param("points", format!("ensemble mean {mean} is not zero")));
        }
        let vm = 2.0 * points.iter().zip(&probs).map(|(a, p)| p * a.norm_sqr()).sum::<f64>();
        Ok(Self {
            points,
            probs,
            dispersion,
            vm,
        })
    }

    pub fn order(&self) -> usize {
        self.points.len()
    }

    pub fn dispersion(&self) -> f64 {
        self.dispersion
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `V_M = 2 sum p_k |alpha_k|^2` in SNU.
    pub fn modulation_variance(&self) -> f64 {
        self.vm
    }

    pub fn max_energy(&self) -> f64 {
        self.points.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            points: self.points.iter().map(|a| a * s).collect(),
            probs: self.probs.clone(),
            dispersion: self.dispersion,
            vm: self.vm * s * s,
        }
    }

    pub fn rotated(&self, phase: f64) -> Self {
        let r = Complex64::from_polar(1.0, phase);
        Self {
            points: self.points.iter().map(|a| a * r).collect(),
            ..self.clone()
        }
    }

    /// I.i.d. draws of coherent amplitudes, reproducible per seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Complex64> {
        let dist = WeightedIndex::new(&self.probs).expect("probabilities validated at construction");
        let mut rng = rng::stream(seed, rng::streams::SYMBOLS);
        (0..n).map(|_| self.points[dist.sample(&mut rng)]).collect()
    }

    /// Effective correlation `Z* = 2 Tr[rho^1/2 a rho^1/2 a^dag]`.
    pub fn effective_correlation(&self, ws: &FockWorkspace) -> Result<f64> {
        ws.effective_correlation(&self.points, &self.probs)
    }

    /// Report block: header fields followed by a CSV point table.
    pub fn to_report_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "constellation.order = {}", self.order()).unwrap();
        writeln!(s, "constellation.dispersion = {:e}", self.dispersion).unwrap();
        writeln!(s, "constellation.vm = {:e}", self.vm).unwrap();
        writeln!(s, "index,re,im,prob").unwrap();
        for (i, (a, p)) in self.points.iter().zip(&self.probs).enumerate() {
            writeln!(s, "{i},{:e},{:e},{:e}", a.re, a.im, p).unwrap();
        }
        s
    }

    pub fn from_report_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::param("constellation text", m.to_string());
        let mut dispersion = 0.0;
        let mut points = Vec::new();
        let mut probs = Vec::new();
        let mut in_table = false;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            if line == "index,re,im,prob" {
                in_table = true;
                continue;
            }
            if in_table {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 4 {
                    return Err(bad("table row needs 4 fields"));
                }
                let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
                points.push(Complex64::new(num(f[1])?, num(f[2])?));
                probs.push(num(f[3])?);
            } else if let Some(v) = line.strip_prefix("constellation.dispersion =") {
                dispersion = v.trim().parse().map_err(|_| bad("bad dispersion"))?;
            }
        }
        Self::from_parts(points, probs, dispersion)
    }
}

/// Gaussian-modulation correlation `sqrt(V_M^2 + 2 V_M)`.
pub fn gaussian_correlation(vm: f64) -> f64 {
    (vm * vm + 2.0 * vm).sqrt()
}

/// Coherent amplitudes to heterodyne quadrature units: `x = sqrt(2) alpha`,
/// so `E|x|^2 = V_M` and each quadrature carries `V_M / 2`.
pub fn quadrature_symbols(alphas: &[Complex64]) -> Vec<Complex64> {
    alphas.iter().map(|a| a * SQRT_2).collect()
}
