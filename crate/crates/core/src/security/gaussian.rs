//! Gaussian-state numerics: symplectic spectra, von Neumann entropy and
//! heterodyne conditioning of covariance matrices (xp-interleaved ordering,
//! vacuum = identity).

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Tolerance below 1 accepted for symplectic eigenvalues.
pub const PHYSICAL_TOL: f64 = 1e-9;

/// `g(x) = ((x+1)/2) log2((x+1)/2) - ((x-1)/2) log2((x-1)/2)`.
pub fn g_entropy(x: f64) -> Result<f64> {
    if !(x >= 1.0 - 1e-6) {
        return Err(Error::NonPhysical(x));
    }
    if x <= 1.0 {
        return Ok(0.0);
    }
    let p = (x + 1.0) / 2.0;
    let m = (x - 1.0) / 2.0;
    Ok(p * p.log2() - m * m.log2())
}

/// Block-diagonal symplectic form for `n` modes.
pub fn omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for k in 0..n {
        w[(2 * k, 2 * k + 1)] = 1.0;
        w[(2 * k + 1, 2 * k)] = -1.0;
    }
    w
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Symplectic eigenvalues, ascending.
///
/// With `K = G^{1/2} W G^{1/2}` (real antisymmetric), the spectrum of
/// `i W G` is that of `i K`, whose moduli are the eigenvalues of the
/// symmetric `K^T K`, each appearing twice.
pub fn symplectic_eigenvalues(gamma: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n2 = gamma.nrows();
    if n2 % 2 != 0 || gamma.ncols() != n2 {
        return Err(Error::param("covariance", "must be square with even dimension"));
    }
    let s = sqrt_psd(gamma);
    let k = &s * omega(n2 / 2) * &s;
    let ktk = k.transpose() * &k;
    let mut ev: Vec<f64> = SymmetricEigen::new(ktk).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).collect();
    ev.sort_by(f64::total_cmp);
    let nu: Vec<f64> = ev.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect();
    if let Some(&bad) = nu.iter().find(|&&v| v < 1.0 - PHYSICAL_TOL) {
        return Err(Error::NonPhysical(bad));
    }
    Ok(nu)
}

/// Two-mode closed form: `nu^2 = (D +- sqrt(D^2 - 4 det G)) / 2` with
/// `D = det A + det B + 2 det C`.
pub fn two_mode_symplectic(gamma: &DMatrix<f64>) -> Result<[f64; 2]> {
    if gamma.nrows() != 4 || gamma.ncols() != 4 {
        return Err(Error::param("covariance", "two-mode formula needs a 4x4 matrix"));
    }
    let det2 = |r: usize, c: usize| gamma[(r, c)] * gamma[(r + 1, c + 1)] - gamma[(r, c + 1)] * gamma[(r + 1, c)];
    let delta = det2(0, 0) + det2(2, 2) + 2.0 * det2(0, 2);
    let det = gamma.determinant();
    let disc = (delta * delta - 4.0 * det).max(0.0).sqrt();
    let lo = ((delta - disc) / 2.0).max(0.0).sqrt();
    let hi = ((delta + disc) / 2.0).sqrt();
    if lo < 1.0 - PHYSICAL_TOL {
        return Err(Error::NonPhysical(lo));
    }
    Ok([lo, hi])
}

/// `S = sum g(nu)` over the symplectic spectrum.
pub fn von_neumann_entropy(gamma: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let nu = symplectic_eigenvalues(gamma)?;
    let mut s = 0.0;
    for &v in &nu {
        s += g_entropy(v)?;
    }
    Ok((s, nu))
}

/// Covariance of the remaining modes after heterodyne detection of
/// `measured` (indices of one mode's two quadratures):
/// `G_X - C (G_B + I)^-1 C^T`.
pub fn heterodyne_condition(gamma: &DMatrix<f64>, measured: [usize; 2]) -> DMatrix<f64> {
    let n = gamma.nrows();
    let keep: Vec<usize> = (0..n).filter(|i| !measured.contains(i)).collect();
    let gx = DMatrix::from_fn(keep.len(), keep.len(), |r, c| gamma[(keep[r], keep[c])]);
    let gb = DMatrix::from_fn(2, 2, |r, c| gamma[(measured[r], measured[c])] + if r == c { 1.0 } else { 0.0 });
    let cxb = DMatrix::from_fn(keep.len(), 2, |r, c| gamma[(keep[r], measured[c])]);
    let inv = gb.try_inverse().expect("heterodyne block is positive definite");
    gx - &cxb * inv * cxb.transpose()
}

/// Two-mode EPR state with quadrature variance `v`.
pub fn epr(v: f64) -> DMatrix<f64> {
    let c = (v * v - 1.0).max(0.0).sqrt();
    DMatrix::from_row_slice(4, 4, &[v, 0.0, c, 0.0, 0.0, v, 0.0, -c, c, 0.0, v, 0.0, 0.0, -c, 0.0, v])
}

/// `[[a I, c Z], [c Z, b I]]`.
pub fn two_mode(a: f64, b: f64, c: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(4, 4, &[a, 0.0, c, 0.0, 0.0, a, 0.0, -c, c, 0.0, b, 0.0, 0.0, -c, 0.0, b])
}
