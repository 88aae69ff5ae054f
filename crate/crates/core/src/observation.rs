//! The observation-operator family `J_delta`, its remainder
//! `K_delta = J_delta - I`, and empirical estimation of the axiom constants
//! (boundedness and first-order approximation).
//!
//! Both concrete families act on the horizontal structure of each vertical
//! level — the vertical direction is treated as fully observed — and both are
//! orthogonal projections in the discrete `L^2` inner product: linear,
//! idempotent, self-adjoint and contractive.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{
    self, from_spectral_unchecked, to_spectral, GridSpec, HVelocity, ScalarField,
};
use crate::{Error, Result};

/// A concrete observation operator with its nominal density `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ObservationOp {
    /// Full observation; `delta = 0`.
    Identity,
    /// Keep horizontal modes with Euclidean physical wavenumber `|k| <= k_max`
    /// at every level; `delta = 1 / k_max`.
    SpectralCutoff { k_max: f64 },
    /// Replace each horizontal cell of side `h` by its mean, per level;
    /// `delta = h`. `h` must divide both periods within 1%.
    LocalAverage { h: f64 },
}

impl ObservationOp {
    /// Nominal observation density.
    pub fn delta(&self) -> f64 {
        match self {
            ObservationOp::Identity => 0.0,
            ObservationOp::SpectralCutoff { k_max } => 1.0 / k_max,
            ObservationOp::LocalAverage { h } => *h,
        }
    }

    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        match self {
            ObservationOp::Identity => Ok(()),
            ObservationOp::SpectralCutoff { k_max } => {
                if !(*k_max > 0.0) {
                    return Err(Error::InvalidParam(format!(
                        "spectral cutoff needs k_max > 0, got {k_max}"
                    )));
                }
                Ok(())
            }
            ObservationOp::LocalAverage { h } => {
                cell_count(*h, grid.lx)?;
                cell_count(*h, grid.ly)?;
                Ok(())
            }
        }
    }

    /// Whether the operator is diagonal in spectral space (identity and
    /// cutoff); such operators admit implicit feedback treatment.
    pub fn is_spectral_diagonal(&self) -> bool {
        matches!(
            self,
            ObservationOp::Identity | ObservationOp::SpectralCutoff { .. }
        )
    }

    /// Spectral multiplier of the operator for bin `(ix, iy)`; only valid for
    /// spectrally diagonal kinds.
    pub(crate) fn spectral_multiplier(&self, grid: &GridSpec, ix: usize, iy: usize) -> f64 {
        match self {
            ObservationOp::Identity => 1.0,
            ObservationOp::SpectralCutoff { k_max } => {
                let kx = grid.kx(ix);
                let ky = grid.ky(iy);
                if (kx * kx + ky * ky).sqrt() <= *k_max + 1e-12 {
                    1.0
                } else {
                    0.0
                }
            }
            ObservationOp::LocalAverage { .. } => {
                unreachable!("local averaging is not spectrally diagonal")
            }
        }
    }
}

fn cell_count(h: f64, period: f64) -> Result<usize> {
    if !(h > 0.0) {
        return Err(Error::InvalidParam(format!(
            "local-average cell size must be > 0, got {h}"
        )));
    }
    let ratio = period / h;
    let nearest = ratio.round().max(1.0);
    if (ratio - nearest).abs() > 0.01 * ratio {
        return Err(Error::CellSizeMismatch {
            h,
            period,
            nearest: nearest as usize,
        });
    }
    Ok(nearest as usize)
}

/// Apply the observation operator to a scalar field.
pub fn observe(op: &ObservationOp, f: &ScalarField) -> Result<ScalarField> {
    let g = *f.grid();
    op.validate(&g)?;
    match op {
        ObservationOp::Identity => Ok(f.clone()),
        ObservationOp::SpectralCutoff { .. } => {
            let mut spec = to_spectral(f);
            for iy in 0..g.ny {
                for ix in 0..g.nx {
                    let m = op.spectral_multiplier(&g, ix, iy);
                    if m == 0.0 {
                        for iz in 0..g.nz {
                            spec.coeffs_mut()[(iz, iy, ix)] = Default::default();
                        }
                    }
                }
            }
            Ok(from_spectral_unchecked(&spec))
        }
        ObservationOp::LocalAverage { h } => {
            let mx = cell_count(*h, g.lx)?;
            let my = cell_count(*h, g.ly)?;
            Ok(cell_average(f, mx, my))
        }
    }
}

/// Apply the operator component-wise to a velocity field.
pub fn observe_velocity(op: &ObservationOp, v: &HVelocity) -> Result<HVelocity> {
    Ok(HVelocity {
        v1: observe(op, &v.v1)?,
        v2: observe(op, &v.v2)?,
    })
}

/// Cell averaging with `mx x my` cells per period; grid points are assigned to
/// cells by position, so cells need not align with grid points.
fn cell_average(f: &ScalarField, mx: usize, my: usize) -> ScalarField {
    let g = *f.grid();
    let cell_x: Vec<usize> = (0..g.nx).map(|ix| ix * mx / g.nx).collect();
    let cell_y: Vec<usize> = (0..g.ny).map(|iy| iy * my / g.ny).collect();
    let mut out = ScalarField::zeros(g);
    let mut sums = vec![0.0f64; mx * my];
    let mut counts = vec![0usize; mx * my];
    for iz in 0..g.nz {
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let cell = cell_y[iy] * mx + cell_x[ix];
                sums[cell] += f.values()[(iz, iy, ix)];
                counts[cell] += 1;
            }
        }
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let cell = cell_y[iy] * mx + cell_x[ix];
                out.values_mut()[(iz, iy, ix)] = sums[cell] / counts[cell] as f64;
            }
        }
    }
    out
}

/// Remainder `K_delta f = J_delta f - f`.
pub fn remainder(op: &ObservationOp, f: &ScalarField) -> Result<ScalarField> {
    Ok(observe(op, f)?.sub(f))
}

/// Empirical axiom constants measured over a probe suite.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AxiomConstants {
    /// Max over probes of `||J f|| / ||f||`.
    pub c_bound: f64,
    /// Max over probes of `||J f - f|| / (delta ||grad f||)`; zero for the
    /// identity operator.
    pub c_approx: f64,
    pub n_probes: usize,
}

/// Probe-suite specification: deterministic under a fixed seed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSuite {
    pub n_probes: usize,
    pub seed: u64,
}

impl Default for ProbeSuite {
    fn default() -> Self {
        ProbeSuite {
            n_probes: 200,
            seed: 2024,
        }
    }
}

impl ProbeSuite {
    /// Generate the probe fields: random band-limited fields, horizontal
    /// gradients of smooth periodic bumps, and single modes, in a fixed
    /// 3:1:1 mix.
    pub fn fields(&self, grid: GridSpec) -> Vec<ScalarField> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut out = Vec::with_capacity(self.n_probes);
        for i in 0..self.n_probes {
            let field = match i % 5 {
                0 | 1 | 2 => random_band_limited(grid, &mut rng),
                3 => bump_gradient(grid, &mut rng),
                _ => single_mode(grid, &mut rng),
            };
            out.push(field);
        }
        out
    }
}

fn random_band_limited(grid: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
    let band = (grid.nx.min(grid.ny) / 4).max(2) as i64;
    let mut spec = grid::SpectralScalar::zeros(grid);
    let n_modes = rng.gen_range(4..10);
    for _ in 0..n_modes {
        let mx = rng.gen_range(-band..=band);
        let my = rng.gen_range(-band..=band);
        let re = rng.gen_range(-1.0..1.0);
        let im = rng.gen_range(-1.0..1.0);
        let vertical = rng.gen_range(0..3);
        let ix = mx.rem_euclid(grid.nx as i64) as usize;
        let iy = my.rem_euclid(grid.ny as i64) as usize;
        let jx = (-mx).rem_euclid(grid.nx as i64) as usize;
        let jy = (-my).rem_euclid(grid.ny as i64) as usize;
        for iz in 0..grid.nz {
            let z = grid.z_at(iz);
            let profile = match vertical {
                0 => 1.0,
                1 => (std::f64::consts::PI * (z + grid.l) / grid.l).cos(),
                _ => (0.5 * std::f64::consts::PI * (z + grid.l) / grid.l).sin(),
            };
            let c = num_complex::Complex64::new(re, im) * 0.5 * profile;
            spec.coeffs_mut()[(iz, iy, ix)] += c;
            spec.coeffs_mut()[(iz, jy, jx)] += c.conj();
        }
    }
    from_spectral_unchecked(&spec)
}

fn bump_gradient(grid: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
    let x0 = rng.gen_range(0.0..grid.lx);
    let y0 = rng.gen_range(0.0..grid.ly);
    let kappa = rng.gen_range(1.0..4.0);
    let two_pi = 2.0 * std::f64::consts::PI;
    let axis = rng.gen_range(0..2);
    let bump = ScalarField::from_fn(grid, move |x, y, z| {
        let cx = (two_pi * (x - x0) / grid.lx).cos() - 1.0;
        let cy = (two_pi * (y - y0) / grid.ly).cos() - 1.0;
        (kappa * (cx + cy)).exp() * (1.0 + 0.3 * (std::f64::consts::PI * z / grid.l).cos())
    });
    grid::d_horizontal(
        &bump,
        if axis == 0 {
            grid::HAxis::X1
        } else {
            grid::HAxis::X2
        },
    )
}

fn single_mode(grid: GridSpec, rng: &mut ChaCha8Rng) -> ScalarField {
    let half = (grid.nx.min(grid.ny) / 2 - 1) as i64;
    let mx = rng.gen_range(0..=half) as f64;
    let my = rng.gen_range(-half..=half) as f64;
    let phase = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    let two_pi = 2.0 * std::f64::consts::PI;
    ScalarField::from_fn(grid, move |x, y, _| {
        (two_pi * (mx * x / grid.lx + my * y / grid.ly) + phase).sin()
    })
}

/// Gradient energy `||grad f||_{L^2}` with the diagnostics stencils.
fn grad_norm(f: &ScalarField) -> f64 {
    let dx = grid::d_horizontal(f, grid::HAxis::X1);
    let dy = grid::d_horizontal(f, grid::HAxis::X2);
    let dz = grid::d_vertical(f, grid::BcKind::Free);
    (grid::l2_inner(&dx, &dx) + grid::l2_inner(&dy, &dy) + grid::l2_inner(&dz, &dz)).sqrt()
}

/// Measure the empirical boundedness and approximation constants of an
/// operator over a probe suite. Deterministic under the suite's seed.
pub fn estimate_constants(
    op: &ObservationOp,
    grid: GridSpec,
    suite: &ProbeSuite,
) -> Result<AxiomConstants> {
    if suite.n_probes == 0 {
        return Err(Error::EmptyProbeSuite);
    }
    op.validate(&grid)?;
    let delta = op.delta();
    let mut c_bound = 0.0f64;
    let mut c_approx = 0.0f64;
    for f in suite.fields(grid) {
        let jf = observe(op, &f)?;
        let nf = grid::l2_norm(&f);
        if nf > 0.0 {
            c_bound = c_bound.max(grid::l2_norm(&jf) / nf);
        }
        if delta > 0.0 {
            let gn = grad_norm(&f);
            if gn > 0.0 {
                let rem = jf.sub(&f);
                c_approx = c_approx.max(grid::l2_norm(&rem) / (delta * gn));
            }
        }
    }
    Ok(AxiomConstants {
        c_bound,
        c_approx,
        n_probes: suite.n_probes,
    })
}
