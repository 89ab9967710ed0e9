use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Truncated Fock basis used to evaluate the discrete-modulation correlation.
///
/// With `auto_raise` the cutoff grows (up to `max_cutoff`) until the
/// coherent-state norm lost to truncation is below `tolerance` for the most
/// energetic point; otherwise an insufficient cutoff is an error.
#[derive(Debug, Clone)]
pub struct FockWorkspace {
    cutoff: usize,
    max_cutoff: usize,
    tolerance: f64,
    auto_raise: bool,
    /// 1/sqrt(n) for n = 1..max_cutoff, the coherent-amplitude recurrence factors.
    inv_sqrt: Vec<f64>,
}

impl Default for FockWorkspace {
    fn default() -> Self {
        Self::auto(32)
    }
}

impl FockWorkspace {
    pub const DEFAULT_TOLERANCE: f64 = 1e-10;
    const MAX_CUTOFF: usize = 400;

    /// Fixed cutoff; fails if it is too small for the constellation.
    pub fn fixed(cutoff: usize) -> Self {
        Self::build(cutoff, cutoff, false)
    }

    /// Starts at `cutoff` and raises it as needed.
    pub fn auto(cutoff: usize) -> Self {
        Self::build(cutoff, Self::MAX_CUTOFF.max(cutoff), true)
    }

    fn build(cutoff: usize, max_cutoff: usize, auto_raise: bool) -> Self {
        assert!(cutoff >= 2, "Fock cutoff must be at least 2");
        let inv_sqrt = (0..=max_cutoff).map(|n| if n == 0 { 0.0 } else { 1.0 / (n as f64).sqrt() }).collect();
        Self {
            cutoff,
            max_cutoff,
            tolerance: Self::DEFAULT_TOLERANCE,
            auto_raise,
            inv_sqrt,
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn cutoff(&self) -> usize {
        self.cutoff
    }

    /// Norm of |alpha> outside the first `cutoff` Fock states.
    pub fn truncation_error(mean_photons: f64, cutoff: usize) -> f64 {
        // Poisson tail P(N >= cutoff), summed directly to avoid cancellation.
        let x = mean_photons;
        if x == 0.0 {
            return 0.0;
        }
        let mut log_term = -x + cutoff as f64 * x.ln() - ln_factorial(cutoff);
        let mut tail = 0.0;
        let mut n = cutoff;
        loop {
            let t = log_term.exp();
            tail += t;
            n += 1;
            log_term += x.ln() - (n as f64).ln();
            if (t < 1e-300 || t < tail * 1e-17) && n as f64 > x {
                break;
            }
        }
        tail
    }

    /// Smallest admissible cutoff for the given maximum |alpha|^2.
    pub fn resolve_cutoff(&self, max_energy: f64) -> Result<usize> {
        let mut c = self.cutoff;
        loop {
            let err = Self::truncation_error(max_energy, c);
            if err < self.tolerance {
                return Ok(c);
            }
            if !self.auto_raise || c >= self.max_cutoff {
                return Err(Error::FockTruncation {
                    cutoff: c,
                    error: err,
                    limit: self.tolerance,
                });
            }
            c = (c + 8).min(self.max_cutoff);
        }
    }

    fn coherent_vector(&self, alpha: Complex64, dim: usize) -> Vec<Complex64> {
        let mut v = Vec::with_capacity(dim);
        let mut c = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
        v.push(c);
        for n in 1..dim {
            c = c * alpha * self.inv_sqrt[n];
            v.push(c);
        }
        v
    }

    /// Ensemble density matrix `sum p |alpha><alpha|` in the truncated basis.
    pub fn density_matrix(&self, points: &[Complex64], probs: &[f64]) -> Result<DMatrix<Complex64>> {
        let max_energy = points.iter().map(|a| a.norm_sqr()).fold(0.0, f64::max);
        let dim = self.resolve_cutoff(max_energy)?;
        let mut rho = DMatrix::<Complex64>::zeros(dim, dim);
        for (&a, &p) in points.iter().zip(probs) {
            let v = self.coherent_vector(a, dim);
            for j in 0..dim {
                let vj = v[j].conj() * p;
                for i in 0..dim {
                    rho[(i, j)] += v[i] * vj;
                }
            }
        }
        Ok(rho)
    }

    pub fn effective_correlation(&self, points: &[Complex64], probs: &[f64]) -> Result<f64> {
        let rho = self.density_matrix(points, probs)?;
        let dim = rho.nrows();
        let eig = SymmetricEigen::new(rho);
        let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let u = &eig.eigenvectors;
        let root = u * DMatrix::from_diagonal(&sqrt_vals.map(|s| Complex64::new(s, 0.0))) * u.adjoint();

        // Tr[S a S a^dag] with a_{j,j+1} = sqrt(j+1):
        //   sum_{i,j < dim-1} S_{i,j} sqrt(j+1) S_{j+1,i+1} sqrt(i+1)
        let mut tr = Complex64::new(0.0, 0.0);
        for i in 0..dim - 1 {
            let si = ((i + 1) as f64).sqrt();
            for j in 0..dim - 1 {
                tr += root[(i, j)] * root[(j + 1, i + 1)] * (((j + 1) as f64).sqrt() * si);
            }
        }
        Ok(2.0 * tr.re.max(0.0))
    }
}

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}
