//! Discrete norms, the energy-budget monitor, exponential decay-rate fitting,
//! plateau and delta-scaling estimation.

use serde::{Deserialize, Serialize};

use crate::grid::{self, BcKind, HAxis, HVelocity, ScalarField};
use crate::{Error, Result};

/// Sobolev order of a discrete norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormOrder {
    L2,
    H1,
    H2,
}

/// Discrete Sobolev norm of a scalar field.
///
/// `L^2` is plane-sum/trapezoid quadrature; `H^1` and `H^2` add spectral
/// horizontal and finite-difference vertical derivative energies up to the
/// requested order. Vertical stencils are the same second-order ones the
/// dynamics uses, with one-sided boundary rows (`Free`).
pub fn norm_scalar(f: &ScalarField, order: NormOrder) -> f64 {
    let mut total = grid::l2_inner(f, f);
    if matches!(order, NormOrder::H1 | NormOrder::H2) {
        let dx1 = grid::d_horizontal(f, HAxis::X1);
        let dx2 = grid::d_horizontal(f, HAxis::X2);
        let dx3 = grid::d_vertical(f, BcKind::Free);
        total += grid::l2_inner(&dx1, &dx1)
            + grid::l2_inner(&dx2, &dx2)
            + grid::l2_inner(&dx3, &dx3);
        if matches!(order, NormOrder::H2) {
            // full Hessian energy: mixed entries counted twice
            let d11 = grid::d_horizontal(&dx1, HAxis::X1);
            let d12 = grid::d_horizontal(&dx1, HAxis::X2);
            let d22 = grid::d_horizontal(&dx2, HAxis::X2);
            let d13 = grid::d_vertical(&dx1, BcKind::Free);
            let d23 = grid::d_vertical(&dx2, BcKind::Free);
            let d33 = grid::d2_vertical(f, BcKind::Free);
            total += grid::l2_inner(&d11, &d11)
                + 2.0 * grid::l2_inner(&d12, &d12)
                + grid::l2_inner(&d22, &d22)
                + 2.0 * grid::l2_inner(&d13, &d13)
                + 2.0 * grid::l2_inner(&d23, &d23)
                + grid::l2_inner(&d33, &d33);
        }
    }
    total.sqrt()
}

/// Discrete Sobolev norm of a horizontal velocity field.
pub fn norm_velocity(v: &HVelocity, order: NormOrder) -> f64 {
    let a = norm_scalar(&v.v1, order);
    let b = norm_scalar(&v.v2, order);
    (a * a + b * b).sqrt()
}

/// One exponential-decay fit `norm ~ exp(-rate * t)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    /// Fitted decay rate (1/time); positive means decay.
    pub rate: f64,
    /// Value of the fitted line at `t = 0` (in log space, exponentiated).
    pub intercept: f64,
    /// Window actually used.
    pub window: (f64, f64),
    /// Coefficient of determination of the log-linear fit.
    pub r_squared: f64,
    /// Number of samples in the window.
    pub n_samples: usize,
}

/// Least-squares fit of `log(values)` against `t` over a window.
///
/// Errors when the window contains non-positive values; callers should clip
/// the window above the floating-point floor first (see
/// [`default_fit_window`]).
pub fn fit_decay(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    assert_eq!(times.len(), values.len());
    let (t_a, t_b) = window;
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (&t, &v) in times.iter().zip(values) {
        if t >= t_a && t <= t_b {
            if v <= 0.0 {
                return Err(Error::NonPositiveSeries { t_a, t_b });
            }
            ts.push(t);
            ys.push(v.ln());
        }
    }
    if ts.len() < 2 {
        return Err(Error::InvalidParam(format!(
            "decay-fit window [{t_a}, {t_b}] holds {} samples, need >= 2",
            ts.len()
        )));
    }
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut stt = 0.0;
    let mut sty = 0.0;
    let mut syy = 0.0;
    for (&t, &y) in ts.iter().zip(&ys) {
        stt += (t - tm) * (t - tm);
        sty += (t - tm) * (y - ym);
        syy += (y - ym) * (y - ym);
    }
    let slope = if stt > 0.0 { sty / stt } else { 0.0 };
    let r_squared = if syy > 0.0 && stt > 0.0 {
        (sty * sty) / (stt * syy)
    } else if syy == 0.0 {
        1.0 // constant series: the flat line is exact
    } else {
        0.0
    };
    Ok(DecayFit {
        rate: -slope,
        intercept: (ym - slope * tm).exp(),
        window: (t_a, t_b),
        r_squared,
        n_samples: ts.len(),
    })
}

/// Default fit window `[0.2 T, 0.8 T]`, clipped above the floating-point
/// floor `1e-13 * initial`.
pub fn default_fit_window(times: &[f64], values: &[f64]) -> (f64, f64) {
    let t_end = times.last().copied().unwrap_or(0.0);
    let t_start = times.first().copied().unwrap_or(0.0);
    let span = t_end - t_start;
    let mut t_a = t_start + 0.2 * span;
    let mut t_b = t_start + 0.8 * span;
    if let Some(&initial) = values.first() {
        let floor = 1e-13 * initial;
        let mut last_good = t_b;
        for (&t, &v) in times.iter().zip(values) {
            last_good = t;
            if t > t_a && v <= floor {
                break;
            }
        }
        t_b = t_b.min(last_good);
        if t_b <= t_a {
            t_a = t_start;
        }
    }
    (t_a, t_b)
}

/// Long-time residual level: the limsup surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlateauEstimate {
    /// Max of the series over the tail window.
    pub level: f64,
    /// Time window the tail covers.
    pub tail_window: (f64, f64),
    /// Fraction of samples in the tail.
    pub tail_fraction: f64,
}

/// Max over the final `tail_fraction` of samples.
pub fn plateau(times: &[f64], values: &[f64], tail_fraction: f64) -> Result<PlateauEstimate> {
    assert_eq!(times.len(), values.len());
    if values.len() < 10 {
        return Err(Error::InvalidParam(format!(
            "plateau needs >= 10 samples, got {}",
            values.len()
        )));
    }
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "tail_fraction must lie in (0, 1], got {tail_fraction}"
        )));
    }
    let n = values.len();
    let start = n - ((tail_fraction * n as f64).round() as usize).clamp(1, n);
    let level = values[start..].iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(PlateauEstimate {
        level,
        tail_window: (times[start], times[n - 1]),
        tail_fraction,
    })
}

/// Log-log least-squares slope of plateau levels against observation density.
///
/// Errors when fewer than three pairs are given, any entry is non-positive,
/// or the densities span less than a factor of two.
pub fn scaling_fit(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.len() < 3 {
        return Err(Error::InvalidParam(format!(
            "scaling fit needs >= 3 pairs, got {}",
            pairs.len()
        )));
    }
    let mut dmin = f64::INFINITY;
    let mut dmax: f64 = 0.0;
    for &(d, p) in pairs {
        if d <= 0.0 || p <= 0.0 {
            return Err(Error::InvalidParam(
                "scaling fit requires positive pairs".into(),
            ));
        }
        dmin = dmin.min(d);
        dmax = dmax.max(d);
    }
    let spread = dmax / dmin;
    if spread < 2.0 {
        return Err(Error::DegenerateSpread { spread });
    }
    let n = pairs.len() as f64;
    let xs: Vec<f64> = pairs.iter().map(|&(d, _)| d.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|&(_, p)| p.ln()).collect();
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(&ys) {
        sxx += (x - xm) * (x - xm);
        sxy += (x - xm) * (y - ym);
    }
    Ok(sxy / sxx)
}

/// Instantaneous pieces of the discrete energy identity, recorded per time
/// step by the steppers.
///
/// The rate term uses the exact quadratic difference
/// `(||V^{n+1}||^2 - ||V^n||^2) / (2 dt)` while the right-hand-side terms are
/// trapezoids of instantaneous quadratures at the step endpoints, so a pure
/// Crank–Nicolson diffusion step leaves an `O(dt^2)` residual.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BudgetSample {
    /// Midpoint time of the step.
    pub t: f64,
    /// `(||V^{n+1}||^2 - ||V^n||^2) / (2 dt)`.
    pub energy_rate: f64,
    /// Trapezoid of the dissipation `nu * <-Lap V, V>`.
    pub dissipation: f64,
    /// Trapezoid of the feedback quadrature `<mu J V, V>`.
    pub feedback: f64,
    /// Trapezoid of the work of the remaining right-hand side against `V`.
    pub work: f64,
}

impl BudgetSample {
    pub fn residual(&self) -> f64 {
        self.energy_rate + self.dissipation + self.feedback - self.work
    }
}

/// Residual series of the discrete energy identity.
pub fn energy_budget(samples: &[BudgetSample]) -> Vec<f64> {
    samples.iter().map(BudgetSample::residual).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn norm_of_zero_field_is_zero() {
        let g = GridSpec::new(8, 8, 9, 1.0).unwrap();
        let f = ScalarField::zeros(g);
        assert_eq!(norm_scalar(&f, NormOrder::L2), 0.0);
        assert_eq!(norm_scalar(&f, NormOrder::H2), 0.0);
    }

    #[test]
    fn cosine_norms_match_closed_form() {
        // domain (2 pi)^2 x (-1, 0): ||cos x1||_{L2}^2 = 2 pi^2 l
        let g = GridSpec::new(16, 16, 17, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x, _, _| x.cos());
        let l2 = norm_scalar(&f, NormOrder::L2);
        let expect = (2.0 * PI * PI).sqrt();
        assert!((l2 - expect).abs() < 1e-10);
        // H1 adds equal gradient energy
        let h1 = norm_scalar(&f, NormOrder::H1);
        assert!((h1 - (2.0f64).sqrt() * expect).abs() < 1e-10);
    }

    #[test]
    fn norms_are_monotone_under_orthogonal_modes() {
        let g = GridSpec::new(16, 16, 9, 1.0).unwrap();
        let f = ScalarField::from_fn(g, |x, _, _| x.cos());
        let f2 = ScalarField::from_fn(g, |x, y, _| x.cos() + (3.0 * y).sin());
        for order in [NormOrder::L2, NormOrder::H1, NormOrder::H2] {
            assert!(norm_scalar(&f2, order) > norm_scalar(&f, order));
        }
    }

    #[test]
    fn norm_orders_are_nested() {
        let g = GridSpec::new(16, 16, 9, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = ScalarField::zeros(g);
        f.values_mut().mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        let l2 = norm_scalar(&f, NormOrder::L2);
        let h1 = norm_scalar(&f, NormOrder::H1);
        let h2 = norm_scalar(&f, NormOrder::H2);
        assert!(l2 <= h1 && h1 <= h2);
    }

    #[test]
    fn fit_recovers_exact_exponential() {
        let times: Vec<f64> = (0..100).map(|i| i as f64 * 0.05).collect();
        let values: Vec<f64> = times.iter().map(|&t| 5.0 * (-3.0 * t).exp()).collect();
        let fit = fit_decay(&times, &values, (0.0, 5.0)).unwrap();
        assert!((fit.rate - 3.0).abs() < 1e-9);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 5.0).abs() < 1e-8);
    }

    #[test]
    fn fit_is_invariant_under_positive_rescaling() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let values: Vec<f64> = times.iter().map(|&t| 2.0 * (-1.7 * t).exp()).collect();
        let scaled: Vec<f64> = values.iter().map(|v| 123.0 * v).collect();
        let f1 = fit_decay(&times, &values, (0.0, 5.0)).unwrap();
        let f2 = fit_decay(&times, &scaled, (0.0, 5.0)).unwrap();
        assert!((f1.rate - f2.rate).abs() < 1e-12);
    }

    #[test]
    fn fit_handles_noise_within_five_percent() {
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.02).collect();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values: Vec<f64> = times
                .iter()
                .map(|&t| 4.0 * (-2.5 * t).exp() * (1.0 + 0.01 * rng.gen_range(-1.0..1.0)))
                .collect();
            let fit = fit_decay(&times, &values, (0.0, 4.0)).unwrap();
            assert!(
                (fit.rate - 2.5).abs() < 0.05 * 2.5,
                "seed {seed}: rate {} off by more than 5%",
                fit.rate
            );
        }
    }

    #[test]
    fn fit_of_constant_series_is_zero_rate() {
        let times: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let values = vec![2.5; 20];
        let fit = fit_decay(&times, &values, (0.0, 20.0)).unwrap();
        assert_eq!(fit.rate, 0.0);
    }

    #[test]
    fn fit_rejects_nonpositive_values() {
        let times = vec![0.0, 1.0, 2.0];
        let values = vec![1.0, 0.0, 1.0];
        assert!(matches!(
            fit_decay(&times, &values, (0.0, 2.0)),
            Err(Error::NonPositiveSeries { .. })
        ));
    }

    #[test]
    fn default_window_clips_above_floor() {
        let times: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1).collect();
        // decays to the floor around t = 6
        let values: Vec<f64> = times.iter().map(|&t| (-5.0 * t).exp().max(1e-16)).collect();
        let (a, b) = default_fit_window(&times, &values);
        assert!(a >= 2.0 - 1e-12);
        assert!(b < 7.0);
    }

    #[test]
    fn plateau_of_decaying_series_is_tail_value() {
        let times: Vec<f64> = (0..40).map(|i| i as f64 * 0.5).collect();
        let values: Vec<f64> = times.iter().map(|&t| (-0.5 * t).exp()).collect();
        let p = plateau(&times, &values, 0.25).unwrap();
        assert!(p.level <= values[29] + 1e-15);
        assert!(p.level >= *values.last().unwrap());
    }

    #[test]
    fn plateau_of_damped_oscillation_sees_offset_plus_ripple() {
        let times: Vec<f64> = (0..400).map(|i| i as f64 * 0.05).collect();
        let c = 0.3;
        let values: Vec<f64> = times
            .iter()
            .map(|&t| c + 0.05 * (-0.1 * t).exp() * (7.0 * t).sin().abs())
            .collect();
        let p = plateau(&times, &values, 0.25).unwrap();
        assert!(p.level >= c && p.level <= c + 0.05);
        let flat = vec![c; 400];
        let pf = plateau(&times, &flat, 0.25).unwrap();
        assert_eq!(pf.level, c);
    }

    #[test]
    fn plateau_is_monotone_in_pointwise_ordering() {
        let times: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let lo: Vec<f64> = (0..20).map(|_| rng.gen_range(0.0..1.0)).collect();
        let hi: Vec<f64> = lo.iter().map(|v| v + rng.gen_range(0.0..0.5)).collect();
        let p_lo = plateau(&times, &lo, 0.5).unwrap();
        let p_hi = plateau(&times, &hi, 0.5).unwrap();
        assert!(p_hi.level >= p_lo.level);
    }

    #[test]
    fn plateau_requires_ten_samples() {
        let times = vec![0.0; 9];
        let values = vec![1.0; 9];
        assert!(plateau(&times, &values, 0.25).is_err());
    }

    #[test]
    fn scaling_fit_recovers_linear_and_quadratic_slopes() {
        let linear: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|&d| (d, 7.0 * d)).collect();
        assert!((scaling_fit(&linear).unwrap() - 1.0).abs() < 1e-9);
        let quad: Vec<(f64, f64)> = [0.2, 0.1, 0.05]
            .iter()
            .map(|&d| (d, 3.0 * d * d))
            .collect();
        assert!((scaling_fit(&quad).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn scaling_fit_rejects_degenerate_spread() {
        let pairs = vec![(0.10, 1.0), (0.12, 1.2), (0.15, 1.5)];
        assert!(matches!(
            scaling_fit(&pairs),
            Err(Error::DegenerateSpread { .. })
        ));
    }

    #[test]
    fn budget_residual_of_zero_steps_is_zero() {
        let s = BudgetSample {
            t: 0.0,
            energy_rate: 0.0,
            dissipation: 0.0,
            feedback: 0.0,
            work: 0.0,
        };
        assert_eq!(energy_budget(&[s]), vec![0.0]);
    }
}
