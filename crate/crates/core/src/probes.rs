//! Random probe velocity fields: band-limited, boundary-compatible and
//! compatible with the depth-average constraint. Deterministic under a fixed
//! seed; all consumers derive per-probe seeds by splitting, so probe sets are
//! reproducible and order-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::grid::{GridSpec, HVelocity, ScalarField};
use crate::hydrostatic::ProjectedVelocity;

/// One random probe in the discrete analogue of `X_{1/2}`: it vanishes at the
/// bottom wall, is flat at the top and has a divergence-free depth average.
///
/// The hydrostatic projection does not preserve the wall condition (its
/// correction is depth-independent), so instead of projecting, the probe is
/// assembled from pieces that satisfy the constraint identically:
/// streamfunction rotations with velocity-type eigenprofiles plus horizontal
/// gradients whose profiles have exactly zero discrete depth mean.
pub fn boundary_compatible_probe(grid: GridSpec, seed: u64) -> ProjectedVelocity {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band_x = grid.dealias_cut_x().max(1);
    let band_y = grid.dealias_cut_y().max(1);
    let l = grid.l;
    let wz = grid.z_weights();

    // velocity-type eigenprofiles sin(beta_m (z + l)), beta_m = (m + 1/2) pi / l,
    // tabulated on the nodes, with their discrete trapezoid means
    let n_profiles = 3;
    let mut eigen: Vec<Vec<f64>> = Vec::with_capacity(n_profiles + 1);
    let mut means = Vec::with_capacity(n_profiles + 1);
    for m in 0..=n_profiles {
        let beta = (0.5 + m as f64) * PI / l;
        let values: Vec<f64> = (0..grid.nz)
            .map(|iz| (beta * (grid.z_at(iz) + l)).sin())
            .collect();
        let mean = values.iter().zip(&wz).map(|(s, w)| s * w).sum::<f64>() / l;
        eigen.push(values);
        means.push(mean);
    }
    // zero-discrete-mean combinations, still wall-compatible
    let zero_mean: Vec<Vec<f64>> = (0..n_profiles)
        .map(|m| {
            let factor = means[m] / means[m + 1];
            (0..grid.nz)
                .map(|iz| eigen[m][iz] - factor * eigen[m + 1][iz])
                .collect()
        })
        .collect();

    let n_terms = rng.gen_range(6..12);
    // (mode_x, mode_y, phase, weight, profile index, gradient-type?)
    let mut terms = Vec::with_capacity(n_terms);
    for _ in 0..n_terms {
        terms.push((
            rng.gen_range(-band_x..=band_x) as f64,
            rng.gen_range(-band_y..=band_y) as f64,
            rng.gen_range(0.0..2.0 * PI),
            rng.gen_range(-1.0f64..1.0),
            rng.gen_range(0usize..n_profiles),
            rng.gen_bool(0.4),
        ));
    }

    let two_pi = 2.0 * PI;
    let mut v1 = ScalarField::zeros(grid);
    let mut v2 = ScalarField::zeros(grid);
    for &(mx, my, ph, wgt, m, grad_type) in &terms {
        let kx = two_pi * mx / grid.lx;
        let ky = two_pi * my / grid.ly;
        let profile = if grad_type { &zero_mean[m] } else { &eigen[m] };
        let (k1, k2) = if grad_type {
            // grad_H sin(arg): constraint holds since the profile mean is zero
            (kx, ky)
        } else {
            // rot_H sin(arg): divergence-free point-wise
            (-ky, kx)
        };
        for iz in 0..grid.nz {
            let p = wgt * profile[iz];
            for iy in 0..grid.ny {
                let y = grid.y_at(iy);
                for ix in 0..grid.nx {
                    let arg = kx * grid.x_at(ix) + ky * y + ph;
                    let c = arg.cos() * p;
                    v1.values_mut()[(iz, iy, ix)] += k1 * c;
                    v2.values_mut()[(iz, iy, ix)] += k2 * c;
                }
            }
        }
    }
    ProjectedVelocity::try_new(HVelocity { v1, v2 })
        .expect("probe construction satisfies the constraint")
}

/// Deterministic probe set: probe `i` uses the split seed `split_seed(seed, i)`.
pub fn probe_set(grid: GridSpec, n: usize, seed: u64) -> Vec<ProjectedVelocity> {
    (0..n)
        .map(|i| boundary_compatible_probe(grid, split_seed(seed, i as u64)))
        .collect()
}

/// Cheap deterministic seed split (SplitMix64 finalizer).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
