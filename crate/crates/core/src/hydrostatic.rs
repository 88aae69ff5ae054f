//! Hydrostatic structure operators: depth averaging, the hydrostatic
//! Helmholtz projection, the diagnostic vertical velocity and divergence
//! constraint checks.
//!
//! The projection `P phi = phi + grad_H (-Lap_H)^{-1} div_H phibar` acts per
//! horizontal wavenumber `k != 0` by removing `k (k . phibar_k) / |k|^2` from
//! every level; the `k = 0` bin carries no horizontal divergence and is left
//! untouched, so no regularization of `(-Lap_H)^{-1}` is needed. The pressure
//! never materializes: it is eliminated by the projection exactly as in the
//! evolution form of the equations.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::{
    self, from_spectral_unchecked, to_spectral, HVelocity, ScalarField, SpectralScalar,
};
use crate::{Error, Result};

/// Relative bound on `max |div_H vbar|` for projected fields.
pub const CONSTRAINT_LIMIT: f64 = 1e-10;

/// A velocity field whose depth average is discretely divergence-free.
///
/// Constructed by [`project`]; the constructor guarantees
/// `max |div_H vbar| <= 1e-10 * ||v||_{L^2}`.
#[derive(Debug, Clone)]
pub struct ProjectedVelocity {
    v: HVelocity,
}

impl ProjectedVelocity {
    pub fn velocity(&self) -> &HVelocity {
        &self.v
    }

    pub fn into_velocity(self) -> HVelocity {
        self.v
    }

    pub fn grid(&self) -> &grid::GridSpec {
        self.v.grid()
    }

    /// Wrap a field that is already known to satisfy the constraint.
    ///
    /// Errors when the residual exceeds the projected-field limit.
    pub fn try_new(v: HVelocity) -> Result<Self> {
        let residual = check_div_constraint(&v);
        let limit = CONSTRAINT_LIMIT * v.l2_norm().max(f64::MIN_POSITIVE);
        if residual > limit {
            return Err(Error::ConstraintViolation { residual, limit });
        }
        Ok(ProjectedVelocity { v })
    }

    pub(crate) fn new_unchecked(v: HVelocity) -> Self {
        ProjectedVelocity { v }
    }
}

/// Depth statistics of the observation geometry serialized into summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub residual: f64,
    pub norm: f64,
}

/// Depth average `phibar = int_{-l}^{0} phi dz / l`, replicated over levels.
pub fn depth_average(v: &HVelocity) -> HVelocity {
    HVelocity {
        v1: depth_average_scalar(&v.v1),
        v2: depth_average_scalar(&v.v2),
    }
}

pub fn depth_average_scalar(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let wz = g.z_weights();
    let mut out = ScalarField::zeros(g);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let mut mean = 0.0;
            for iz in 0..g.nz {
                mean += wz[iz] * f.values()[(iz, iy, ix)];
            }
            mean /= g.l;
            for iz in 0..g.nz {
                out.values_mut()[(iz, iy, ix)] = mean;
            }
        }
    }
    out
}

/// Depth average per spectral mode: one complex pair per `(ky, kx)`.
fn spectral_depth_mean(spec: &SpectralScalar) -> Vec<Complex64> {
    let g = *spec.grid();
    let wz = g.z_weights();
    let mut out = vec![Complex64::default(); g.ny * g.nx];
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let mut mean = Complex64::default();
            for iz in 0..g.nz {
                mean += wz[iz] * spec.coeffs()[(iz, iy, ix)];
            }
            out[iy * g.nx + ix] = mean / g.l;
        }
    }
    out
}

/// Hydrostatic Helmholtz projection.
pub fn project(v: &HVelocity) -> ProjectedVelocity {
    let mut s1 = to_spectral(&v.v1);
    let mut s2 = to_spectral(&v.v2);
    project_spectral(&mut s1, &mut s2);
    ProjectedVelocity::new_unchecked(HVelocity {
        v1: from_spectral_unchecked(&s1),
        v2: from_spectral_unchecked(&s2),
    })
}

/// In-place projection on spectral components.
pub(crate) fn project_spectral(s1: &mut SpectralScalar, s2: &mut SpectralScalar) {
    let g = *s1.grid();
    let m1 = spectral_depth_mean(s1);
    let m2 = spectral_depth_mean(s2);
    for iy in 0..g.ny {
        let ky = g.ky_deriv(iy);
        for ix in 0..g.nx {
            let kx = g.kx_deriv(ix);
            let ksq = kx * kx + ky * ky;
            if ksq == 0.0 {
                continue;
            }
            let kdot = kx * m1[iy * g.nx + ix] + ky * m2[iy * g.nx + ix];
            let c1 = kdot * (kx / ksq);
            let c2 = kdot * (ky / ksq);
            for iz in 0..g.nz {
                s1.coeffs_mut()[(iz, iy, ix)] -= c1;
                s2.coeffs_mut()[(iz, iy, ix)] -= c2;
            }
        }
    }
}

/// Max point value of the spectrally evaluated `div_H vbar`.
pub fn check_div_constraint(v: &HVelocity) -> f64 {
    let mean = depth_average(v);
    let mut d1 = to_spectral(&mean.v1);
    let mut d2 = to_spectral(&mean.v2);
    grid::d_horizontal_spectral(&mut d1, grid::HAxis::X1);
    grid::d_horizontal_spectral(&mut d2, grid::HAxis::X2);
    for iz in 0..v.grid().nz {
        for iy in 0..v.grid().ny {
            for ix in 0..v.grid().nx {
                let sum = d1.coeffs()[(iz, iy, ix)] + d2.coeffs()[(iz, iy, ix)];
                d1.coeffs_mut()[(iz, iy, ix)] = sum;
            }
        }
    }
    from_spectral_unchecked(&d1).max_abs()
}

/// Diagnostic vertical velocity `w = -int_{-l}^{x3} div_H v dz`.
///
/// The input must satisfy the depth-average constraint; then `w(-l) = 0`
/// exactly and `|w(0)|` is bounded by the constraint residual.
pub fn compute_w(v: &ProjectedVelocity) -> ScalarField {
    compute_w_of(v.velocity())
}

/// As [`compute_w`] but callable on raw fields (used by the steppers where the
/// constraint is maintained by construction).
pub(crate) fn compute_w_of(v: &HVelocity) -> ScalarField {
    let div = horizontal_divergence(v);
    let cum = grid::integrate_vertical(&div, None).expect("cumulative integral cannot fail");
    cum.scaled(-1.0)
}

/// Spectral horizontal divergence of a velocity field.
pub fn horizontal_divergence(v: &HVelocity) -> ScalarField {
    let mut d1 = to_spectral(&v.v1);
    let mut d2 = to_spectral(&v.v2);
    grid::d_horizontal_spectral(&mut d1, grid::HAxis::X1);
    grid::d_horizontal_spectral(&mut d2, grid::HAxis::X2);
    let g = *v.grid();
    for iz in 0..g.nz {
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let sum = d1.coeffs()[(iz, iy, ix)] + d2.coeffs()[(iz, iy, ix)];
                d1.coeffs_mut()[(iz, iy, ix)] = sum;
            }
        }
    }
    from_spectral_unchecked(&d1)
}
