//! The linearized perturbed operator around a frozen base state, its bilinear
//! form, numerical coercivity probes, and the parameter gates that the decay
//! theory needs.
//!
//! The operator acting on a constraint-compatible perturbation `phi` is
//!
//! ```text
//! A phi = -P Lap phi + P(u . grad phi) + P(phi_hat . grad v) + mu P J phi
//! ```
//!
//! with `phi_hat` the 3D lift of `phi` (its vertical component reconstructed
//! from the divergence integral). The bilinear form pairs the perturbation
//! part against the test function itself,
//!
//! ```text
//! B(phi, psi) = mu <phi, psi> + d(phi, psi) + <B_pert phi, psi>,
//! ```
//!
//! where `d` is the operator-consistent discrete Dirichlet form (so that
//! `B(phi, psi) = <A phi, psi>` holds to roundoff when the perturbation
//! vanishes) and `B_pert phi = P(u . grad phi) + P(phi_hat . grad v) +
//! mu P K phi`. Coercivity of `B` at gate-passing parameters is what drives
//! the exponential decay rate `mu_* >= mu / 2` of the linear theory.

use serde::{Deserialize, Serialize};

use crate::dynamics::{advection, diffusion, dirichlet_form_with, ImexSolver};
use crate::grid::{self, BcKind, HVelocity, ScalarField};
use crate::hydrostatic::{self, project, ProjectedVelocity};
use crate::observation::{observe_velocity, ObservationOp};
use crate::probes::{probe_set, split_seed};
use crate::{Error, Result};

/// Calibration constants of the assumption set and the two parameter gates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateConstants {
    /// Constant of `c0 * sum_{m=1,2,4} ||v||^m <= mu`.
    pub c0: f64,
    /// Constant of `c1 * mu * delta <= 1`.
    pub c1: f64,
    /// Constant of both halves of the first gate:
    /// `c_gate1 * ||v||^4 <= mu/4` and `c_gate1 * mu^2 delta^2 <= mu/4`.
    pub c_gate1: f64,
    /// Constant of the second gate:
    /// `c_gate2 * (||v|| + delta mu) <= mu^{3/4} / 2`.
    pub c_gate2: f64,
    pub source: GateSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSource {
    Configured,
    Calibrated,
}

impl Default for GateConstants {
    fn default() -> Self {
        GateConstants {
            c0: 1.0,
            c1: 1.0,
            c_gate1: 1.0,
            c_gate2: 1.0,
            source: GateSource::Configured,
        }
    }
}

impl GateConstants {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("c0", self.c0),
            ("c1", self.c1),
            ("c_gate1", self.c_gate1),
            ("c_gate2", self.c_gate2),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParam(format!(
                    "gate constant {name} must be > 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Outcome of the parameter-gate checks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GateReport {
    pub sup_h2: f64,
    pub mu: f64,
    pub delta: f64,
    pub pass_a: bool,
    pub pass_gate1: bool,
    pub pass_gate2: bool,
    /// Smallest slack of the assumption-set inequalities.
    pub margin_a: f64,
    /// Smallest slack of the first gate's two inequalities.
    pub margin_gate1: f64,
    /// Slack of the second gate.
    pub margin_gate2: f64,
}

impl GateReport {
    pub fn all_pass(&self) -> bool {
        self.pass_a && self.pass_gate1 && self.pass_gate2
    }
}

/// Evaluate the assumption set and both gates for a measured `H^2` envelope.
pub fn check_gates(sup_h2: f64, mu: f64, delta: f64, gc: &GateConstants) -> GateReport {
    let s = sup_h2;
    let sum_powers = s + s * s + s.powi(4);
    let margin_a = (mu - gc.c0 * sum_powers).min(1.0 - gc.c1 * mu * delta);
    let margin_gate1 =
        (0.25 * mu - gc.c_gate1 * s.powi(4)).min(0.25 * mu - gc.c_gate1 * mu * mu * delta * delta);
    let margin_gate2 = 0.5 * mu.powf(0.75) - gc.c_gate2 * (s + delta * mu);
    GateReport {
        sup_h2,
        mu,
        delta,
        pass_a: margin_a >= 0.0,
        pass_gate1: margin_gate1 >= 0.0,
        pass_gate2: margin_gate2 >= 0.0,
        margin_a,
        margin_gate1,
        margin_gate2,
    }
}

/// Smallest `mu` passing all gates for a given envelope and density, found by
/// a coarse log scan followed by bisection against the lower pass edge. The
/// pass set is an interval (the `mu delta` inequalities also cap `mu` from
/// above), so `None` means the interval is empty below `mu_max`.
pub fn find_min_passing_mu(
    sup_h2: f64,
    delta: f64,
    gc: &GateConstants,
    mu_max: f64,
) -> Option<f64> {
    let passes = |mu: f64| check_gates(sup_h2, mu, delta, gc).all_pass();
    let n_scan = 400;
    let lo = 1e-3f64;
    if mu_max <= lo {
        return None;
    }
    let ratio = (mu_max / lo).powf(1.0 / n_scan as f64);
    let mut prev = lo;
    let mut first_pass = None;
    let mut mu = lo;
    for _ in 0..=n_scan {
        if passes(mu) {
            first_pass = Some((prev, mu));
            break;
        }
        prev = mu;
        mu *= ratio;
    }
    let (mut bad, mut good) = first_pass?;
    if passes(bad) {
        return Some(bad);
    }
    for _ in 0..80 {
        let mid = 0.5 * (bad + good);
        if passes(mid) {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Some(good)
}

/// Shear coupling `phi_hat . grad v`: the horizontal components advect `v`
/// horizontally and the reconstructed vertical component multiplies the
/// vertical derivative of the base state.
fn shear_term(phi: &ProjectedVelocity, base: &HVelocity) -> HVelocity {
    let phi_v = phi.velocity();
    let phi3 = hydrostatic::compute_w_of(phi_v);
    let shear_component = |vc: &ScalarField| -> ScalarField {
        let dx = grid::d_horizontal(vc, grid::HAxis::X1);
        let dy = grid::d_horizontal(vc, grid::HAxis::X2);
        let dz = grid::d_vertical(vc, BcKind::VType);
        let mut out = phi_v.v1.mul_pointwise(&dx);
        out.axpy(1.0, &phi_v.v2.mul_pointwise(&dy));
        out.axpy(1.0, &phi3.mul_pointwise(&dz));
        grid::dealias_field(&out)
    };
    HVelocity {
        v1: shear_component(&base.v1),
        v2: shear_component(&base.v2),
    }
}

/// Perturbation part `B_pert phi = P(u . grad phi) + P(phi_hat . grad v) +
/// mu P K phi` (projection deferred to the caller: against constrained test
/// functions it drops out of inner products).
fn perturbation_term(
    base: &ProjectedVelocity,
    phi: &ProjectedVelocity,
    mu: f64,
    op: &ObservationOp,
) -> Result<HVelocity> {
    let mut out = advection(base, phi.velocity());
    out.axpy(1.0, &shear_term(phi, base.velocity()));
    if mu > 0.0 {
        let observed = observe_velocity(op, phi.velocity())?;
        // K phi = J phi - phi
        out.axpy(mu, &observed.sub(phi.velocity()));
    }
    Ok(out)
}

/// Action of the linearized perturbed operator on `phi`.
pub fn apply_a(
    base: &ProjectedVelocity,
    phi: &ProjectedVelocity,
    mu: f64,
    op: &ObservationOp,
) -> Result<HVelocity> {
    let mut total = diffusion(phi.velocity()).scaled(-1.0);
    total.axpy(1.0, &advection(base, phi.velocity()));
    total.axpy(1.0, &shear_term(phi, base.velocity()));
    if mu > 0.0 {
        total.axpy(mu, &observe_velocity(op, phi.velocity())?);
    }
    Ok(project(&total).into_velocity())
}

/// The bilinear form `B(phi, psi)`.
pub fn bilinear_b(
    base: &ProjectedVelocity,
    phi: &ProjectedVelocity,
    psi: &ProjectedVelocity,
    mu: f64,
    op: &ObservationOp,
) -> Result<f64> {
    let grid_spec = *phi.grid();
    let solver = ImexSolver::new(grid_spec, 1.0, 1.0, None);
    bilinear_b_with(&solver, base, phi, psi, mu, op)
}

fn bilinear_b_with(
    solver: &ImexSolver,
    base: &ProjectedVelocity,
    phi: &ProjectedVelocity,
    psi: &ProjectedVelocity,
    mu: f64,
    op: &ObservationOp,
) -> Result<f64> {
    let mass = grid::l2_inner_velocity(phi.velocity(), psi.velocity());
    let dirichlet = dirichlet_form_with(solver, phi.velocity(), psi.velocity());
    let pert = perturbation_term(base, phi, mu, op)?;
    Ok(mu * mass + dirichlet + grid::l2_inner_velocity(&pert, psi.velocity()))
}

/// Result of a seeded coercivity sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoercivityReport {
    /// Min over probes of `B(phi, phi) - (mu/2)||phi||^2 - (1/2) d(phi, phi)`.
    pub min_margin: f64,
    pub n_probes: usize,
    pub negative_count: usize,
    pub seed: u64,
}

/// Evaluate the coercivity margin over `n_samples` seeded probes.
pub fn coercivity_probe(
    base: &ProjectedVelocity,
    mu: f64,
    op: &ObservationOp,
    n_samples: usize,
    seed: u64,
) -> Result<CoercivityReport> {
    if n_samples == 0 {
        return Err(Error::EmptyProbeSuite);
    }
    let grid_spec = *base.grid();
    let solver = ImexSolver::new(grid_spec, 1.0, 1.0, None);
    let mut min_margin = f64::INFINITY;
    let mut negative_count = 0;
    for i in 0..n_samples {
        let phi = crate::probes::boundary_compatible_probe(grid_spec, split_seed(seed, i as u64));
        let b = bilinear_b_with(&solver, base, &phi, &phi, mu, op)?;
        let mass = grid::l2_inner_velocity(phi.velocity(), phi.velocity());
        let dirichlet = dirichlet_form_with(&solver, phi.velocity(), phi.velocity());
        let margin = b - 0.5 * mu * mass - 0.5 * dirichlet;
        if margin < 0.0 {
            negative_count += 1;
        }
        min_margin = min_margin.min(margin);
    }
    Ok(CoercivityReport {
        min_margin,
        n_probes: n_samples,
        negative_count,
        seed,
    })
}

/// Max over probe pairs of `|B(phi, psi)| / (||phi||_d ||psi||_d)` with the
/// operator-consistent `H^1` seminorm; finite by the boundedness estimate.
pub fn boundedness_ratio(
    base: &ProjectedVelocity,
    mu: f64,
    op: &ObservationOp,
    n_samples: usize,
    seed: u64,
) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::EmptyProbeSuite);
    }
    let grid_spec = *base.grid();
    let solver = ImexSolver::new(grid_spec, 1.0, 1.0, None);
    let phis = probe_set(grid_spec, n_samples, seed);
    let psis = probe_set(grid_spec, n_samples, seed.wrapping_add(1));
    let mut worst = 0.0f64;
    for (phi, psi) in phis.iter().zip(&psis) {
        let b = bilinear_b_with(&solver, base, phi, psi, mu, op)?;
        let na = dirichlet_form_with(&solver, phi.velocity(), phi.velocity()).sqrt();
        let nb = dirichlet_form_with(&solver, psi.velocity(), psi.velocity()).sqrt();
        if na > 0.0 && nb > 0.0 {
            worst = worst.max(b.abs() / (na * nb));
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{seed_initial_state, ImexSolver};
    use crate::grid::l2_inner_velocity;
    use crate::probes::boundary_compatible_probe;

    fn test_grid() -> GridSpec {
        GridSpec::new(16, 16, 9, 1.0).unwrap()
    }

    fn zero_base(g: GridSpec) -> ProjectedVelocity {
        project(&HVelocity::zeros(g))
    }

    #[test]
    fn stokes_limit_reduces_to_projected_laplacian() {
        let g = test_grid();
        let base = zero_base(g);
        let phi = boundary_compatible_probe(g, 1);
        let a = apply_a(&base, &phi, 0.0, &ObservationOp::Identity).unwrap();
        let expect = project(&diffusion(phi.velocity()).scaled(-1.0)).into_velocity();
        assert!(a.sub(&expect).max_abs() < 1e-11 * expect.max_abs().max(1.0));
    }

    #[test]
    fn operator_annihilates_zero_perturbation() {
        let g = test_grid();
        let base = seed_initial_state(g, 0.5);
        let phi = zero_base(g);
        let a = apply_a(&base, &phi, 3.0, &ObservationOp::SpectralCutoff { k_max: 3.0 }).unwrap();
        assert_eq!(a.max_abs(), 0.0);
    }

    #[test]
    fn operator_is_linear_in_phi() {
        let g = test_grid();
        let base = seed_initial_state(g, 0.5);
        let op = ObservationOp::SpectralCutoff { k_max: 3.0 };
        let p1 = boundary_compatible_probe(g, 2);
        let p2 = boundary_compatible_probe(g, 3);
        let mut combo_v = p1.velocity().scaled(1.4);
        combo_v.axpy(-0.6, p2.velocity());
        let combo = ProjectedVelocity::try_new(combo_v).unwrap();
        let lhs = apply_a(&base, &combo, 2.0, &op).unwrap();
        let mut rhs = apply_a(&base, &p1, 2.0, &op).unwrap().scaled(1.4);
        rhs.axpy(-0.6, &apply_a(&base, &p2, 2.0, &op).unwrap());
        assert!(lhs.sub(&rhs).max_abs() < 1e-12 * lhs.max_abs().max(1.0));
    }

    #[test]
    fn form_matches_operator_in_the_stokes_limit() {
        let g = test_grid();
        let base = zero_base(g);
        let op = ObservationOp::Identity;
        let mu = 2.5;
        for seed in 0..3 {
            let phi = boundary_compatible_probe(g, 10 + seed);
            let psi = boundary_compatible_probe(g, 20 + seed);
            let b = bilinear_b(&base, &phi, &psi, mu, &op).unwrap();
            let a = apply_a(&base, &phi, mu, &op).unwrap();
            let ip = l2_inner_velocity(&a, psi.velocity());
            let scale = phi.velocity().l2_norm() * psi.velocity().l2_norm();
            assert!(
                (b - ip).abs() <= 1e-10 * scale.max(1.0),
                "B = {b}, <A phi, psi> = {ip}"
            );
        }
    }

    #[test]
    fn form_is_symmetric_in_the_stokes_limit() {
        let g = test_grid();
        let base = zero_base(g);
        let op = ObservationOp::Identity;
        let phi = boundary_compatible_probe(g, 30);
        let psi = boundary_compatible_probe(g, 31);
        let ab = bilinear_b(&base, &phi, &psi, 0.0, &op).unwrap();
        let ba = bilinear_b(&base, &psi, &phi, 0.0, &op).unwrap();
        let scale = bilinear_b(&base, &phi, &phi, 0.0, &op)
            .unwrap()
            .max(bilinear_b(&base, &psi, &psi, 0.0, &op).unwrap());
        assert!((ab - ba).abs() < 1e-12 * scale.max(1.0));
    }

    #[test]
    fn boundedness_ratio_is_finite() {
        let g = test_grid();
        let base = seed_initial_state(g, 0.5);
        let op = ObservationOp::SpectralCutoff { k_max: 3.0 };
        let ratio = boundedness_ratio(&base, 4.0, &op, 10, 42).unwrap();
        assert!(ratio.is_finite() && ratio > 0.0);
    }

    #[test]
    fn coercivity_holds_for_zero_base_and_identity() {
        let g = test_grid();
        let base = zero_base(g);
        let report = coercivity_probe(&base, 3.0, &ObservationOp::Identity, 20, 7).unwrap();
        // B = mu ||phi||^2 + d(phi, phi): margin = (mu/2)||phi||^2 + d/2 > 0
        assert!(report.min_margin > 0.0);
        assert_eq!(report.negative_count, 0);
    }

    #[test]
    fn coercivity_probe_is_deterministic() {
        let g = test_grid();
        let base = seed_initial_state(g, 0.4);
        let op = ObservationOp::SpectralCutoff { k_max: 4.0 };
        let a = coercivity_probe(&base, 5.0, &op, 15, 99).unwrap();
        let b = coercivity_probe(&base, 5.0, &op, 15, 99).unwrap();
        assert_eq!(a.min_margin, b.min_margin);
    }

    #[test]
    fn coercivity_margin_grows_with_mu_on_observed_probes() {
        // fixed probes, growing mu: margins must not decrease when the
        // feedback is full-field (identity operator keeps K = 0)
        let g = test_grid();
        let base = seed_initial_state(g, 0.4);
        let op = ObservationOp::Identity;
        let m1 = coercivity_probe(&base, 2.0, &op, 15, 5).unwrap().min_margin;
        let m2 = coercivity_probe(&base, 4.0, &op, 15, 5).unwrap().min_margin;
        assert!(m2 >= m1 - 1e-12);
    }

    #[test]
    fn gate_report_trivial_base_passes() {
        let gc = GateConstants::default();
        let report = check_gates(0.0, 4.0, 0.125, &gc);
        assert!(report.all_pass());
        assert!(report.margin_a > 0.0);
    }

    #[test]
    fn gate_margins_improve_with_doubled_mu_and_halved_delta() {
        let gc = GateConstants::default();
        let s = 0.8;
        let r1 = check_gates(s, 4.0, 0.2, &gc);
        let r2 = check_gates(s, 8.0, 0.1, &gc);
        assert!(r2.margin_a >= r1.margin_a - 1e-12);
        assert!(r2.margin_gate1 >= r1.margin_gate1 - 1e-12);
        assert!(r2.margin_gate2 >= r1.margin_gate2 - 1e-12);
    }

    #[test]
    fn min_passing_mu_is_found_by_bisection() {
        let gc = GateConstants::default();
        let s = 0.7;
        let delta = 0.125;
        let mu = find_min_passing_mu(s, delta, &gc, 1e3).expect("pass interval exists");
        assert!(check_gates(s, mu, delta, &gc).all_pass());
        // just below the boundary the gates must fail
        assert!(!check_gates(s, mu * 0.98, delta, &gc).all_pass());
    }

    #[test]
    fn min_passing_mu_reports_empty_interval() {
        // huge envelope with coarse observations: no mu can pass
        let gc = GateConstants::default();
        assert!(find_min_passing_mu(50.0, 0.5, &gc, 1e4).is_none());
    }

    #[test]
    fn gate_constants_validate_positivity() {
        let mut gc = GateConstants::default();
        gc.c1 = 0.0;
        assert!(gc.validate().is_err());
    }

    #[test]
    fn cutoff_remainder_contribution_is_delta_bounded() {
        // |<mu K phi, phi>| <= c mu delta ||grad phi|| ||phi|| on probes
        let g = test_grid();
        let op = ObservationOp::SpectralCutoff { k_max: 4.0 };
        let solver = ImexSolver::new(g, 1.0, 1.0, None);
        let mu = 6.0;
        let delta = op.delta();
        for seed in 0..5 {
            let phi = boundary_compatible_probe(g, 40 + seed);
            let k_phi = observe_velocity(&op, phi.velocity())
                .unwrap()
                .sub(phi.velocity());
            let ip = mu * l2_inner_velocity(&k_phi, phi.velocity()).abs();
            let grad = dirichlet_form_with(&solver, phi.velocity(), phi.velocity()).sqrt();
            let mass = phi.velocity().l2_norm();
            assert!(
                ip <= (1.0 + 1e-6) * mu * delta * grad * mass,
                "seed {seed}: remainder pairing too large"
            );
        }
    }
}
