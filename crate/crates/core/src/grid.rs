//! Discrete function spaces on the periodic layer `T^2 x (-l, 0)`.
//!
//! Horizontal directions are periodic and carried by Fourier modes; the
//! vertical direction is a uniform node grid on `[-l, 0]` (both endpoints
//! included) treated with second-order finite differences. Fields are stored
//! point-wise as `(iz, iy, ix)` arrays; spectral coefficients use the same
//! layout with `(iz, ky, kx)` and standard FFT frequency ordering.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use ndarray::Array3;
use num_complex::Complex64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Relative tolerance for the Hermitian-symmetry check in [`from_spectral`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Discretization of the layer `T^2 x (-l, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Horizontal mode counts (even, >= 8).
    pub nx: usize,
    pub ny: usize,
    /// Vertical node count (>= 5); nodes are uniform on `[-l, 0]` inclusive.
    pub nz: usize,
    /// Layer depth (> 0).
    pub l: f64,
    /// Horizontal periods.
    pub lx: f64,
    pub ly: f64,
    /// Fraction of retained modes per horizontal axis after nonlinear products.
    pub dealias_fraction: f64,
}

impl GridSpec {
    /// Grid with the default periods `2*pi` and 2/3-rule dealiasing.
    pub fn new(nx: usize, ny: usize, nz: usize, l: f64) -> Result<Self> {
        Self::with_periods(nx, ny, nz, l, 2.0 * PI, 2.0 * PI)
    }

    pub fn with_periods(
        nx: usize,
        ny: usize,
        nz: usize,
        l: f64,
        lx: f64,
        ly: f64,
    ) -> Result<Self> {
        let spec = GridSpec {
            nx,
            ny,
            nz,
            l,
            lx,
            ly,
            dealias_fraction: 2.0 / 3.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_dealias_fraction(mut self, fraction: f64) -> Result<Self> {
        self.dealias_fraction = fraction;
        self.validate()?;
        Ok(self)
    }

    /// Default desk-scale grid, 32 x 32 x 17.
    pub fn desk_scale() -> Self {
        GridSpec::new(32, 32, 17, 1.0).expect("desk-scale grid is valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 8 || self.ny < 8 || self.nx % 2 != 0 || self.ny % 2 != 0 {
            return Err(Error::InvalidGrid(format!(
                "nx, ny must be even and >= 8, got {} x {}",
                self.nx, self.ny
            )));
        }
        if self.nz < 5 {
            return Err(Error::InvalidGrid(format!("nz must be >= 5, got {}", self.nz)));
        }
        if !(self.l > 0.0) || !(self.lx > 0.0) || !(self.ly > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "domain sizes must be positive, got l = {}, lx = {}, ly = {}",
                self.l, self.lx, self.ly
            )));
        }
        if !(self.dealias_fraction > 0.0 && self.dealias_fraction <= 1.0) {
            return Err(Error::InvalidGrid(format!(
                "dealias_fraction must lie in (0, 1], got {}",
                self.dealias_fraction
            )));
        }
        Ok(())
    }

    /// Vertical node spacing.
    pub fn dz(&self) -> f64 {
        self.l / (self.nz - 1) as f64
    }

    /// Vertical coordinate of node `iz` (node 0 sits on the bottom `-l`).
    pub fn z_at(&self, iz: usize) -> f64 {
        -self.l + iz as f64 * self.dz()
    }

    pub fn x_at(&self, ix: usize) -> f64 {
        ix as f64 * self.lx / self.nx as f64
    }

    pub fn y_at(&self, iy: usize) -> f64 {
        iy as f64 * self.ly / self.ny as f64
    }

    /// Signed integer frequency of FFT bin `i` out of `n`.
    fn int_freq(i: usize, n: usize) -> i64 {
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Physical wavenumber of bin `ix` along x1 (Nyquist bin maps to +n/2).
    pub fn kx(&self, ix: usize) -> f64 {
        2.0 * PI * Self::int_freq(ix, self.nx) as f64 / self.lx
    }

    pub fn ky(&self, iy: usize) -> f64 {
        2.0 * PI * Self::int_freq(iy, self.ny) as f64 / self.ly
    }

    /// Wavenumber used for spectral differentiation: the Nyquist bin gets 0 so
    /// derivatives of real fields stay real.
    pub fn kx_deriv(&self, ix: usize) -> f64 {
        if self.nx % 2 == 0 && ix == self.nx / 2 {
            0.0
        } else {
            self.kx(ix)
        }
    }

    pub fn ky_deriv(&self, iy: usize) -> f64 {
        if self.ny % 2 == 0 && iy == self.ny / 2 {
            0.0
        } else {
            self.ky(iy)
        }
    }

    /// Largest retained integer mode per axis under the dealias rule.
    pub fn dealias_cut_x(&self) -> i64 {
        (self.dealias_fraction * (self.nx / 2) as f64).floor() as i64
    }

    pub fn dealias_cut_y(&self) -> i64 {
        (self.dealias_fraction * (self.ny / 2) as f64).floor() as i64
    }

    /// Whether bin `(ix, iy)` survives dealias filtering.
    pub fn mode_retained(&self, ix: usize, iy: usize) -> bool {
        Self::int_freq(ix, self.nx).abs() <= self.dealias_cut_x()
            && Self::int_freq(iy, self.ny).abs() <= self.dealias_cut_y()
    }

    /// Horizontal quadrature weight per grid point.
    pub fn horizontal_weight(&self) -> f64 {
        self.lx * self.ly / (self.nx * self.ny) as f64
    }

    /// Trapezoid weights for vertical quadrature over `[-l, 0]`.
    pub fn z_weights(&self) -> Vec<f64> {
        let dz = self.dz();
        let mut w = vec![dz; self.nz];
        w[0] = 0.5 * dz;
        w[self.nz - 1] = 0.5 * dz;
        w
    }

    fn same_shape(&self, other: &GridSpec) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.nz == other.nz
            && self.l == other.l
            && self.lx == other.lx
            && self.ly == other.ly
    }
}

/// Boundary treatment for vertical finite differences.
///
/// `VType` is the velocity-type condition (Neumann at the top `x3 = 0`,
/// Dirichlet at the bottom `x3 = -l`), `WType` is Dirichlet at both walls
/// (vertical-velocity type). `Free` assumes nothing and uses one-sided
/// stencils at both walls; it is what the norm quadratures use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BcKind {
    VType,
    WType,
    Free,
}

/// Horizontal axis selector for derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HAxis {
    X1,
    X2,
}

/// Real scalar field sampled on the grid, laid out `(iz, iy, ix)`.
#[derive(Debug, Clone)]
pub struct ScalarField {
    grid: GridSpec,
    values: Array3<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        ScalarField {
            grid,
            values: Array3::zeros((grid.nz, grid.ny, grid.nx)),
        }
    }

    /// Build a field from a closure of the physical coordinates `(x1, x2, x3)`.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for iz in 0..grid.nz {
            let z = grid.z_at(iz);
            for iy in 0..grid.ny {
                let y = grid.y_at(iy);
                for ix in 0..grid.nx {
                    out.values[(iz, iy, ix)] = f(grid.x_at(ix), y, z);
                }
            }
        }
        out
    }

    pub fn from_values(grid: GridSpec, values: Array3<f64>) -> Result<Self> {
        if values.dim() != (grid.nz, grid.ny, grid.nx) {
            return Err(Error::GridMismatch);
        }
        Ok(ScalarField { grid, values })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Array3<f64> {
        &mut self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        self.values.mapv_inplace(|v| a * v);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ScalarField) {
        debug_assert!(self.grid.same_shape(&other.grid));
        ndarray::Zip::from(&mut self.values)
            .and(&other.values)
            .for_each(|s, &o| *s += a * o);
    }

    pub fn add(&self, other: &ScalarField) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// Point-wise product (no dealiasing; see [`dealiased_product`]).
    pub fn mul_pointwise(&self, other: &ScalarField) -> Self {
        let mut out = self.clone();
        ndarray::Zip::from(&mut out.values)
            .and(&other.values)
            .for_each(|s, &o| *s *= o);
        out
    }
}

/// Horizontal Fourier coefficients per vertical level, laid out `(iz, ky, kx)`.
///
/// Coefficients of a real field satisfy the Hermitian symmetry
/// `c[-k] = conj(c[k])`; every operation in this crate preserves it.
#[derive(Debug, Clone)]
pub struct SpectralScalar {
    grid: GridSpec,
    coeffs: Array3<Complex64>,
}

impl SpectralScalar {
    pub fn zeros(grid: GridSpec) -> Self {
        SpectralScalar {
            grid,
            coeffs: Array3::zeros((grid.nz, grid.ny, grid.nx)),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn coeffs(&self) -> &Array3<Complex64> {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut Array3<Complex64> {
        &mut self.coeffs
    }

    pub fn max_abs(&self) -> f64 {
        self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.norm()))
    }

    /// Zero every mode beyond the dealias cutoff (2/3 rule by default).
    pub fn dealias(&mut self) {
        let g = self.grid;
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                if !g.mode_retained(ix, iy) {
                    for iz in 0..g.nz {
                        self.coeffs[(iz, iy, ix)] = Complex64::new(0.0, 0.0);
                    }
                }
            }
        }
    }

    /// Max deviation from Hermitian symmetry, relative to the largest coefficient.
    pub fn symmetry_deviation(&self) -> f64 {
        let g = self.grid;
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for iz in 0..g.nz {
            for iy in 0..g.ny {
                let jy = (g.ny - iy) % g.ny;
                for ix in 0..g.nx {
                    let jx = (g.nx - ix) % g.nx;
                    let c = self.coeffs[(iz, iy, ix)];
                    let d = self.coeffs[(iz, jy, jx)].conj();
                    worst = worst.max((c - d).norm());
                }
            }
        }
        worst / scale
    }
}

struct FftPlans {
    fwd_x: Arc<dyn Fft<f64>>,
    inv_x: Arc<dyn Fft<f64>>,
    fwd_y: Arc<dyn Fft<f64>>,
    inv_y: Arc<dyn Fft<f64>>,
}

static PLAN_CACHE: Lazy<Mutex<HashMap<(usize, usize), Arc<FftPlans>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plans_for(nx: usize, ny: usize) -> Arc<FftPlans> {
    let mut cache = PLAN_CACHE.lock().expect("FFT plan cache poisoned");
    cache
        .entry((nx, ny))
        .or_insert_with(|| {
            let mut planner = FftPlanner::<f64>::new();
            Arc::new(FftPlans {
                fwd_x: planner.plan_fft_forward(nx),
                inv_x: planner.plan_fft_inverse(nx),
                fwd_y: planner.plan_fft_forward(ny),
                inv_y: planner.plan_fft_inverse(ny),
            })
        })
        .clone()
}

/// Horizontal Fourier transform applied level by level.
///
/// Coefficients are normalized so that `f(x) = sum_k c_k exp(i k . x)`; a
/// constant field puts its value in the `(0, 0)` bin of every level.
pub fn to_spectral(f: &ScalarField) -> SpectralScalar {
    let g = *f.grid();
    let plans = plans_for(g.nx, g.ny);
    let mut out = SpectralScalar::zeros(g);
    let norm = 1.0 / (g.nx * g.ny) as f64;
    let mut row = vec![Complex64::default(); g.nx];
    let mut col = vec![Complex64::default(); g.ny];
    for iz in 0..g.nz {
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                row[ix] = Complex64::new(f.values[(iz, iy, ix)], 0.0);
            }
            plans.fwd_x.process(&mut row);
            for ix in 0..g.nx {
                out.coeffs[(iz, iy, ix)] = row[ix];
            }
        }
        for ix in 0..g.nx {
            for iy in 0..g.ny {
                col[iy] = out.coeffs[(iz, iy, ix)];
            }
            plans.fwd_y.process(&mut col);
            for iy in 0..g.ny {
                out.coeffs[(iz, iy, ix)] = col[iy] * norm;
            }
        }
    }
    out
}

/// Inverse horizontal transform with a Hermitian-symmetry check.
///
/// The imaginary residual of the inverse transform (below `1e-12` of the
/// field magnitude once symmetry holds) is discarded.
pub fn from_spectral(spec: &SpectralScalar) -> Result<ScalarField> {
    let deviation = spec.symmetry_deviation();
    if deviation > SYMMETRY_TOL {
        return Err(Error::SpectralSymmetry {
            max_deviation: deviation,
            tolerance: SYMMETRY_TOL,
        });
    }
    Ok(from_spectral_unchecked(spec))
}

/// Inverse transform without the symmetry check, for internal hot paths where
/// coefficients are Hermitian by construction.
pub(crate) fn from_spectral_unchecked(spec: &SpectralScalar) -> ScalarField {
    let g = *spec.grid();
    let plans = plans_for(g.nx, g.ny);
    let mut out = ScalarField::zeros(g);
    let mut row = vec![Complex64::default(); g.nx];
    let mut col = vec![Complex64::default(); g.ny];
    let mut level = Array3::<Complex64>::zeros((1, g.ny, g.nx));
    for iz in 0..g.nz {
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                level[(0, iy, ix)] = spec.coeffs[(iz, iy, ix)];
            }
        }
        for ix in 0..g.nx {
            for iy in 0..g.ny {
                col[iy] = level[(0, iy, ix)];
            }
            plans.inv_y.process(&mut col);
            for iy in 0..g.ny {
                level[(0, iy, ix)] = col[iy];
            }
        }
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                row[ix] = level[(0, iy, ix)];
            }
            plans.inv_x.process(&mut row);
            for ix in 0..g.nx {
                out.values[(iz, iy, ix)] = row[ix].re;
            }
        }
    }
    out
}

/// Spectral horizontal derivative (exact for resolved modes).
pub fn d_horizontal(f: &ScalarField, axis: HAxis) -> ScalarField {
    let mut spec = to_spectral(f);
    d_horizontal_spectral(&mut spec, axis);
    from_spectral_unchecked(&spec)
}

/// In-place spectral differentiation along a horizontal axis.
pub fn d_horizontal_spectral(spec: &mut SpectralScalar, axis: HAxis) {
    let g = *spec.grid();
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let k = match axis {
                HAxis::X1 => g.kx_deriv(ix),
                HAxis::X2 => g.ky_deriv(iy),
            };
            let factor = Complex64::new(0.0, k);
            for iz in 0..g.nz {
                spec.coeffs[(iz, iy, ix)] *= factor;
            }
        }
    }
}

/// Second-order vertical derivative.
///
/// Interior nodes use centered differences. A Dirichlet wall contributes a
/// one-sided second-order stencil; the Neumann top of `VType` fields returns
/// the boundary value of the derivative itself, zero.
pub fn d_vertical(f: &ScalarField, bc: BcKind) -> ScalarField {
    let g = *f.grid();
    let dz = g.dz();
    let n = g.nz;
    let mut out = ScalarField::zeros(g);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let at = |iz: usize| f.values[(iz, iy, ix)];
            // Bottom wall x3 = -l: Dirichlet data for both field types.
            out.values[(0, iy, ix)] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) / (2.0 * dz);
            for iz in 1..n - 1 {
                out.values[(iz, iy, ix)] = (at(iz + 1) - at(iz - 1)) / (2.0 * dz);
            }
            out.values[(n - 1, iy, ix)] = match bc {
                // Neumann ghost value makes the top derivative vanish exactly.
                BcKind::VType => 0.0,
                BcKind::WType | BcKind::Free => {
                    (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) / (2.0 * dz)
                }
            };
        }
    }
    out
}

/// First-order boundary rows, centered interior: the summation-by-parts
/// derivative used by the skew advection form. With trapezoid quadrature its
/// adjoint is exactly minus itself up to wall terms.
pub(crate) fn d_vertical_sbp(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let dz = g.dz();
    let n = g.nz;
    let mut out = ScalarField::zeros(g);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let at = |iz: usize| f.values[(iz, iy, ix)];
            out.values[(0, iy, ix)] = (at(1) - at(0)) / dz;
            for iz in 1..n - 1 {
                out.values[(iz, iy, ix)] = (at(iz + 1) - at(iz - 1)) / (2.0 * dz);
            }
            out.values[(n - 1, iy, ix)] = (at(n - 1) - at(n - 2)) / dz;
        }
    }
    out
}

/// One-sided five-point second-derivative coefficients (second order).
const D2_ONESIDED: [f64; 5] = [
    35.0 / 12.0,
    -26.0 / 3.0,
    19.0 / 2.0,
    -14.0 / 3.0,
    11.0 / 12.0,
];

/// Second-order vertical second derivative; see [`d_vertical`] for the wall
/// conventions. Dirichlet walls use a one-sided five-point stencil, the
/// Neumann top uses the mirror ghost node.
pub fn d2_vertical(f: &ScalarField, bc: BcKind) -> ScalarField {
    let g = *f.grid();
    let dz2 = g.dz() * g.dz();
    let n = g.nz;
    let mut out = ScalarField::zeros(g);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let at = |iz: usize| f.values[(iz, iy, ix)];
            let mut bottom = 0.0;
            for (o, c) in D2_ONESIDED.iter().enumerate() {
                bottom += c * at(o);
            }
            out.values[(0, iy, ix)] = bottom / dz2;
            for iz in 1..n - 1 {
                out.values[(iz, iy, ix)] = (at(iz - 1) - 2.0 * at(iz) + at(iz + 1)) / dz2;
            }
            out.values[(n - 1, iy, ix)] = match bc {
                BcKind::VType => (2.0 * at(n - 2) - 2.0 * at(n - 1)) / dz2,
                BcKind::WType | BcKind::Free => {
                    let mut top = 0.0;
                    for (o, c) in D2_ONESIDED.iter().enumerate() {
                        top += c * at(n - 1 - o);
                    }
                    top / dz2
                }
            };
        }
    }
    out
}

/// Cumulative trapezoid integral from the bottom wall.
///
/// With `upper = None` the result holds `int_{-l}^{x3} f dz` at each node
/// (zero at the bottom). With `upper = Some(z)` every level carries the
/// definite integral `int_{-l}^{z} f dz`; `z` may sit between nodes, in which
/// case the last partial cell is integrated with linear interpolation.
pub fn integrate_vertical(f: &ScalarField, upper: Option<f64>) -> Result<ScalarField> {
    let g = *f.grid();
    let dz = g.dz();
    let n = g.nz;
    if let Some(z) = upper {
        if z < -g.l - 1e-12 || z > 1e-12 {
            return Err(Error::VerticalBound { upper: z, lower: -g.l });
        }
    }
    let mut out = ScalarField::zeros(g);
    for iy in 0..g.ny {
        for ix in 0..g.nx {
            let at = |iz: usize| f.values[(iz, iy, ix)];
            match upper {
                None => {
                    let mut acc = 0.0;
                    out.values[(0, iy, ix)] = 0.0;
                    for iz in 1..n {
                        acc += 0.5 * dz * (at(iz - 1) + at(iz));
                        out.values[(iz, iy, ix)] = acc;
                    }
                }
                Some(z) => {
                    let z = z.clamp(-g.l, 0.0);
                    let pos = (z + g.l) / dz;
                    let j = (pos.floor() as usize).min(n - 1);
                    let frac = pos - j as f64;
                    let mut acc = 0.0;
                    for iz in 1..=j {
                        acc += 0.5 * dz * (at(iz - 1) + at(iz));
                    }
                    if frac > 0.0 && j + 1 < n {
                        let f_upper = at(j) + frac * (at(j + 1) - at(j));
                        acc += 0.5 * frac * dz * (at(j) + f_upper);
                    }
                    for iz in 0..n {
                        out.values[(iz, iy, ix)] = acc;
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Point-wise product of two fields followed by dealias filtering.
pub fn dealiased_product(a: &ScalarField, b: &ScalarField) -> ScalarField {
    let mut spec = to_spectral(&a.mul_pointwise(b));
    spec.dealias();
    from_spectral_unchecked(&spec)
}

/// Remove all modes beyond the dealias cutoff from a physical field.
pub fn dealias_field(f: &ScalarField) -> ScalarField {
    let mut spec = to_spectral(f);
    spec.dealias();
    from_spectral_unchecked(&spec)
}

/// Discrete `L^2` inner product (plane sums horizontally, trapezoid in z).
pub fn l2_inner(f: &ScalarField, g: &ScalarField) -> f64 {
    let spec = f.grid();
    debug_assert!(spec.same_shape(g.grid()));
    let wxy = spec.horizontal_weight();
    let wz = spec.z_weights();
    let mut total = 0.0;
    for iz in 0..spec.nz {
        let mut plane = 0.0;
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                plane += f.values[(iz, iy, ix)] * g.values[(iz, iy, ix)];
            }
        }
        total += wz[iz] * plane;
    }
    total * wxy
}

pub fn l2_norm(f: &ScalarField) -> f64 {
    l2_inner(f, f).sqrt()
}

/// Horizontal velocity field `(v1, v2)` sharing one grid.
#[derive(Debug, Clone)]
pub struct HVelocity {
    pub v1: ScalarField,
    pub v2: ScalarField,
}

impl HVelocity {
    pub fn zeros(grid: GridSpec) -> Self {
        HVelocity {
            v1: ScalarField::zeros(grid),
            v2: ScalarField::zeros(grid),
        }
    }

    pub fn from_fn(
        grid: GridSpec,
        f1: impl Fn(f64, f64, f64) -> f64,
        f2: impl Fn(f64, f64, f64) -> f64,
    ) -> Self {
        HVelocity {
            v1: ScalarField::from_fn(grid, f1),
            v2: ScalarField::from_fn(grid, f2),
        }
    }

    pub fn grid(&self) -> &GridSpec {
        self.v1.grid()
    }

    pub fn components(&self) -> [&ScalarField; 2] {
        [&self.v1, &self.v2]
    }

    pub fn scale(&mut self, a: f64) {
        self.v1.scale(a);
        self.v2.scale(a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn axpy(&mut self, a: f64, other: &HVelocity) {
        self.v1.axpy(a, &other.v1);
        self.v2.axpy(a, &other.v2);
    }

    pub fn add(&self, other: &HVelocity) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &HVelocity) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.v1.max_abs().max(self.v2.max_abs())
    }

    pub fn all_finite(&self) -> bool {
        self.v1.all_finite() && self.v2.all_finite()
    }

    pub fn l2_norm(&self) -> f64 {
        (l2_inner(&self.v1, &self.v1) + l2_inner(&self.v2, &self.v2)).sqrt()
    }
}

/// `L^2` inner product of velocity fields.
pub fn l2_inner_velocity(a: &HVelocity, b: &HVelocity) -> f64 {
    l2_inner(&a.v1, &b.v1) + l2_inner(&a.v2, &b.v2)
}
