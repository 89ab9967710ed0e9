use rayon::prelude::*;

use super::{asymptotic_skr, SecurityParams, SecurityResult};
use crate::constellation::{gaussian_correlation, Constellation, FockWorkspace};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Protocol {
    Discrete { order: usize, dispersion: f64 },
    Gaussian,
}

impl Protocol {
    pub fn z_star(&self, vm: f64, ws: &FockWorkspace) -> Result<f64> {
        match *self {
            Protocol::Gaussian => Ok(gaussian_correlation(vm)),
            Protocol::Discrete { order, dispersion } => {
                Constellation::build(order, dispersion, Some(vm))?.effective_correlation(ws)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Protocol::Gaussian => "gaussian".into(),
            Protocol::Discrete { order, dispersion } => format!("M{order}-nu{dispersion}"),
        }
    }
}

/// Input excess noise growing with modulation variance, `eps_in = eps0 + k vm`
/// (residual phase noise scales with the signal power).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseModel {
    pub eps0_in: f64,
    pub k_per_vm: f64,
}

impl NoiseModel {
    pub fn constant(eps_in: f64) -> Self {
        Self {
            eps0_in: eps_in,
            k_per_vm: 0.0,
        }
    }

    pub fn eps_in(&self, vm: f64) -> f64 {
        self.eps0_in + self.k_per_vm * vm
    }
}

#[derive(Debug, Clone)]
pub struct VmSweep {
    pub protocol: Protocol,
    pub noise: NoiseModel,
    /// Fixed parameters; `vm`, `z_star` and `eps_in` are overwritten per point.
    pub base: SecurityParams,
    pub fock: FockWorkspace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmPoint {
    pub vm: f64,
    pub z_star: f64,
    pub eps_in: f64,
    pub result: SecurityResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VmCurve {
    pub points: Vec<VmPoint>,
    pub argmax_vm: f64,
}

impl VmSweep {
    pub fn params_at(&self, vm: f64) -> Result<SecurityParams> {
        Ok(SecurityParams {
            vm,
            z_star: self.protocol.z_star(vm, &self.fock)?,
            eps_in: self.noise.eps_in(vm),
            ..self.base.clone()
        })
    }

    pub fn point(&self, vm: f64) -> Result<VmPoint> {
        let p = self.params_at(vm)?;
        let result = asymptotic_skr(&p, p.model_mi().mi)?;
        Ok(VmPoint {
            vm,
            z_star: p.z_star,
            eps_in: p.eps_in,
            result,
        })
    }
}

/// Evaluate the asymptotic rate on a modulation-variance grid.
pub fn sweep_vm(spec: &VmSweep, grid: &[f64]) -> Result<VmCurve> {
    if grid.is_empty() {
        return Err(Error::param("grid", "empty modulation-variance grid"));
    }
    let points = grid.par_iter().map(|&vm| spec.point(vm)).collect::<Result<Vec<_>>>()?;
    let argmax_vm = points
        .iter()
        .max_by(|a, b| a.result.skr_asym.total_cmp(&b.result.skr_asym))
        .map(|p| p.vm)
        .expect("non-empty");
    Ok(VmCurve { points, argmax_vm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::security::DetectorModel;

    fn spec(noise: NoiseModel, protocol: Protocol) -> VmSweep {
        VmSweep {
            protocol,
            noise,
            base: SecurityParams {
                vm: 1.0,
                z_star: 0.0,
                transmittance: 0.5,
                eps_in: 0.0,
                eta_d: 0.44,
                v_el: 0.1,
                beta: 1.0,
                detector: DetectorModel::Trusted,
                symbol_rate: 16e9,
                overhead: 0.0,
            },
            fock: FockWorkspace::default(),
        }
    }

    fn grid() -> Vec<f64> {
        (1..=40).map(|k| 0.1 * k as f64).collect()
    }

    fn skr(c: &VmCurve) -> Vec<f64> {
        c.points.iter().map(|p| p.result.skr_asym).collect()
    }

    #[test]
    fn vm_dependent_noise_gives_unimodal_curve() {
        let c = sweep_vm(
            &spec(
                NoiseModel {
                    eps0_in: 0.01,
                    k_per_vm: 0.02,
                },
                Protocol::Gaussian,
            ),
            &grid(),
        )
        .unwrap();
        let r = skr(&c);
        let peak = r.iter().cloned().enumerate().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap().0;
        assert!(peak > 0 && peak < r.len() - 1, "peak at the grid edge");
        assert!(r[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(r[peak..].windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(c.argmax_vm, grid()[peak]);
    }

    #[test]
    fn constant_noise_gaussian_rate_is_monotone() {
        let c = sweep_vm(&spec(NoiseModel::constant(0.01), Protocol::Gaussian), &grid()).unwrap();
        assert!(skr(&c).windows(2).all(|w| w[1] >= w[0] - 1e-12));
    }

    #[test]
    fn noiseless_link_always_positive() {
        let mut s = spec(NoiseModel::constant(0.0), Protocol::Discrete { order: 16, dispersion: 0.215 });
        s.base.transmittance = 1.0;
        s.base.v_el = 0.0;
        let c = sweep_vm(&s, &[0.1, 0.5, 1.0, 2.0]).unwrap();
        assert!(skr(&c).iter().all(|&r| r > 0.0));
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(sweep_vm(&spec(NoiseModel::default(), Protocol::Gaussian), &[]).is_err());
    }

    fn gap(order: usize, dispersion: f64, vm: f64) -> f64 {
        let g = spec(NoiseModel::constant(0.01), Protocol::Gaussian).point(vm).unwrap();
        let d = spec(NoiseModel::constant(0.01), Protocol::Discrete { order, dispersion }).point(vm).unwrap();
        g.result.skr_asym - d.result.skr_asym
    }

    #[test]
    fn sixteen_point_gap_shrinks_at_low_modulation() {
        let gaps: Vec<f64> = [2.0, 1.0, 0.5, 0.25].iter().map(|&vm| gap(16, 0.215, vm)).collect();
        assert!(gaps.iter().all(|&g| g >= -1e-12));
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn sixty_four_point_close_to_gaussian() {
        assert!(gap(64, 0.129, 0.7).abs() < 2e-4);
    }
}
