//! The assimilated (nudged) equation, the twin-experiment driver, and the
//! independent difference-equation integrator used as a cross-check oracle.
//!
//! The assimilated run sees the reference only through `J_delta v` and the
//! (possibly observed) force `g`; the feedback `mu P (J v - J vtilde)` relaxes
//! it toward the reference. For spectrally diagonal observation operators the
//! `-mu J vtilde` part is folded into the implicit solve with Crank–Nicolson
//! weights, which removes the `dt <~ 1/mu` stability limit and keeps exact
//! synchrony (`vtilde = v`) a fixed point of the discrete step. For local
//! averaging the feedback is explicit and `dt` is capped at `0.5 / mu`.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{norm_velocity, BudgetSample, NormOrder};
use crate::dynamics::{
    advection, dirichlet_form_with, step_imex, ImexSolver, ReferenceStepper, SimParams,
    StateSnapshot,
};
use crate::grid::{self, to_spectral, HVelocity};
use crate::hydrostatic::ProjectedVelocity;
use crate::observation::{observe_velocity, ObservationOp};
use crate::{Error, Result};

/// Which force the assimilated equation is driven by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcingMode {
    /// `g = f`: the force is perfectly known.
    Exact,
    /// `g = J_delta f`: only observations of the force are available.
    Observed,
}

/// Initial guess for the assimilated velocity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitialGuess {
    /// The default: the true initial state is never known.
    Zero,
    /// Copy the reference initial state (exact-synchrony experiments).
    Reference,
    /// The reference scaled by a factor.
    ScaledReference { factor: f64 },
}

impl InitialGuess {
    pub fn build(&self, reference: &ProjectedVelocity) -> ProjectedVelocity {
        match self {
            InitialGuess::Zero => {
                ProjectedVelocity::new_unchecked(HVelocity::zeros(*reference.grid()))
            }
            InitialGuess::Reference => reference.clone(),
            InitialGuess::ScaledReference { factor } => {
                ProjectedVelocity::new_unchecked(reference.velocity().scaled(*factor))
            }
        }
    }
}

/// Nudging parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NudgeParams {
    /// Inflation parameter (1/time, >= 0).
    pub mu: f64,
    pub observation: ObservationOp,
    pub forcing_mode: ForcingMode,
    pub tilde_v0: InitialGuess,
}

impl NudgeParams {
    pub fn validate(&self, params: &SimParams) -> Result<()> {
        if !(self.mu >= 0.0) {
            return Err(Error::InvalidParam(format!("mu must be >= 0, got {}", self.mu)));
        }
        self.observation.validate(&params.grid)?;
        if self.mu > 0.0 && !self.observation.is_spectral_diagonal() {
            let cap = 0.5 / self.mu;
            if params.dt > cap {
                return Err(Error::InvalidParam(format!(
                    "explicit feedback requires dt <= 0.5/mu = {cap:.6e}, got dt = {}",
                    params.dt
                )));
            }
        }
        Ok(())
    }

    /// Non-fatal configuration smells, surfaced by the CLI.
    pub fn sanity_warnings(&self) -> Vec<String> {
        let mut warnings = Vec::new();
        if matches!(self.forcing_mode, ForcingMode::Observed)
            && matches!(self.observation, ObservationOp::Identity)
        {
            warnings.push(
                "observed forcing with the identity operator reduces to exact forcing"
                    .to_string(),
            );
        }
        warnings
    }
}

/// CNAB2 stepper for the assimilated equation.
pub struct AssimilatedStepper {
    params: SimParams,
    nudge: NudgeParams,
    solver: ImexSolver,
    /// Spatial factor of `g` (observed if the forcing mode says so).
    forcing_spatial: HVelocity,
    state: StateSnapshot,
    prev_explicit: Option<HVelocity>,
    /// Explicit term without feedback at the pre-step state of the last step.
    last_explicit_cross: Option<HVelocity>,
}

impl AssimilatedStepper {
    pub fn new(params: SimParams, nudge: NudgeParams, initial: StateSnapshot) -> Result<Self> {
        params.validate()?;
        nudge.validate(&params)?;
        let solver = build_solver(&params, &nudge);
        let f_spatial = params.forcing.spatial_field(params.grid);
        let forcing_spatial = match nudge.forcing_mode {
            ForcingMode::Exact => f_spatial,
            ForcingMode::Observed => observe_velocity(&nudge.observation, &f_spatial)?,
        };
        Ok(AssimilatedStepper {
            params,
            nudge,
            solver,
            forcing_spatial,
            state: initial,
            prev_explicit: None,
            last_explicit_cross: None,
        })
    }

    pub fn state(&self) -> &StateSnapshot {
        &self.state
    }

    pub(crate) fn last_explicit_cross(&self) -> Option<&HVelocity> {
        self.last_explicit_cross.as_ref()
    }

    /// Explicit term without feedback: `-advection(vtilde, vtilde) + g(t)`.
    fn explicit_cross(&self, s: &StateSnapshot) -> HVelocity {
        let mut e = advection(&s.v, s.v.velocity()).scaled(-1.0);
        e.axpy(
            self.params.forcing.modulation.value(s.t),
            &self.forcing_spatial,
        );
        e
    }

    /// Advance one step given the reference state at both step endpoints.
    ///
    /// The implicit feedback is Crank–Nicolson centered, so it needs the
    /// observed reference at `t` and `t + dt`; both states must line up with
    /// the assimilated clock.
    pub fn step(
        &mut self,
        ref_before: &StateSnapshot,
        ref_after: &StateSnapshot,
    ) -> Result<&StateSnapshot> {
        let dt = self.params.dt;
        if (ref_before.t - self.state.t).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::TimeMismatch {
                t_a: ref_before.t,
                t_b: self.state.t,
            });
        }
        if (ref_after.t - (self.state.t + dt)).abs() > 1e-9 * dt.max(1.0) {
            return Err(Error::TimeMismatch {
                t_a: ref_after.t,
                t_b: self.state.t + dt,
            });
        }
        let cross = self.explicit_cross(&self.state);
        let mut explicit_now = cross.clone();
        let mut feedback_rhs = None;
        if self.nudge.mu > 0.0 {
            if self.nudge.observation.is_spectral_diagonal() {
                // data term dt mu J (v^n + v^{n+1}) / 2 in spectral space
                let mut mid = ref_before.v.velocity().scaled(0.5);
                mid.axpy(0.5, ref_after.v.velocity());
                let mut s1 = to_spectral(&mid.v1);
                let mut s2 = to_spectral(&mid.v2);
                let g = self.params.grid;
                for iy in 0..g.ny {
                    for ix in 0..g.nx {
                        // fold coefficient is dt mu chi / 2; the data term
                        // carries dt mu chi, i.e. twice the fold
                        let w = 2.0 * self.solver.fold_coefficient(ix, iy);
                        for iz in 0..g.nz {
                            s1.coeffs_mut()[(iz, iy, ix)] *= w;
                            s2.coeffs_mut()[(iz, iy, ix)] *= w;
                        }
                    }
                }
                feedback_rhs = Some((s1, s2));
            } else {
                // explicit feedback mu J (v - vtilde) at the pre-step time
                let diff = ref_before.v.velocity().sub(self.state.v.velocity());
                let observed = observe_velocity(&self.nudge.observation, &diff)?;
                explicit_now.axpy(self.nudge.mu, &observed);
            }
        }
        let new = step_imex(
            &self.solver,
            &self.params,
            &self.state,
            &explicit_now,
            self.prev_explicit.as_ref(),
            feedback_rhs.as_ref().map(|(a, b)| (a, b)),
        )?;
        self.prev_explicit = Some(explicit_now);
        self.last_explicit_cross = Some(cross);
        self.state = new;
        Ok(&self.state)
    }
}

fn build_solver(params: &SimParams, nudge: &NudgeParams) -> ImexSolver {
    if nudge.mu > 0.0 && nudge.observation.is_spectral_diagonal() {
        let grid = params.grid;
        let op = nudge.observation;
        let mu = nudge.mu;
        let fold = move |ix: usize, iy: usize| mu * op.spectral_multiplier(&grid, ix, iy);
        ImexSolver::new(params.grid, params.dt, params.nu, Some(&fold))
    } else {
        ImexSolver::new(params.grid, params.dt, params.nu, None)
    }
}

/// CNAB2 integrator for the difference equation, used only as an oracle
/// against the twin difference `v - vtilde`.
pub struct DifferenceStepper {
    params: SimParams,
    nudge: NudgeParams,
    solver: ImexSolver,
    /// Spatial factor of `F_delta = f - g`.
    forcing_gap_spatial: HVelocity,
    state: StateSnapshot,
    prev_explicit: Option<HVelocity>,
}

impl DifferenceStepper {
    pub fn new(params: SimParams, nudge: NudgeParams, initial: StateSnapshot) -> Result<Self> {
        params.validate()?;
        nudge.validate(&params)?;
        let solver = build_solver(&params, &nudge);
        let f_spatial = params.forcing.spatial_field(params.grid);
        let forcing_gap_spatial = match nudge.forcing_mode {
            ForcingMode::Exact => HVelocity::zeros(params.grid),
            ForcingMode::Observed => {
                f_spatial.sub(&observe_velocity(&nudge.observation, &f_spatial)?)
            }
        };
        Ok(DifferenceStepper {
            params,
            nudge,
            solver,
            forcing_gap_spatial,
            state: initial,
            prev_explicit: None,
        })
    }

    pub fn state(&self) -> &StateSnapshot {
        &self.state
    }

    /// Cross and forcing terms of the difference equation at the current
    /// state, without the feedback:
    /// `advection(V, V) - advection(u, V) - advection(V, v) + F_delta`.
    pub(crate) fn explicit_cross(&self, s: &StateSnapshot, reference: &StateSnapshot) -> HVelocity {
        let big_v = &s.v;
        let ref_v = &reference.v;
        let mut e = advection(big_v, big_v.velocity());
        e.axpy(-1.0, &advection(ref_v, big_v.velocity()));
        e.axpy(-1.0, &advection(big_v, ref_v.velocity()));
        e.axpy(
            self.params.forcing.modulation.value(s.t),
            &self.forcing_gap_spatial,
        );
        e
    }

    /// Advance `V` one step; `reference` is the reference state at the
    /// pre-step time (it supplies the frozen coefficients `u(t)`, `v(t)`).
    pub fn step(&mut self, reference: &StateSnapshot) -> Result<&StateSnapshot> {
        if (reference.t - self.state.t).abs() > 1e-9 * self.params.dt.max(1.0) {
            return Err(Error::TimeMismatch {
                t_a: reference.t,
                t_b: self.state.t,
            });
        }
        let mut explicit_now = self.explicit_cross(&self.state, reference);
        if self.nudge.mu > 0.0 && !self.nudge.observation.is_spectral_diagonal() {
            let observed = observe_velocity(&self.nudge.observation, self.state.v.velocity())?;
            explicit_now.axpy(-self.nudge.mu, &observed);
        }
        let new = step_imex(
            &self.solver,
            &self.params,
            &self.state,
            &explicit_now,
            self.prev_explicit.as_ref(),
            None,
        )?;
        self.prev_explicit = Some(explicit_now);
        self.state = new;
        Ok(&self.state)
    }
}

/// Start-time selection policy for the decay measurement, mirroring the
/// selection of a time with small `||grad V||` inside unit windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartPolicy {
    Immediate,
    SmallGradientWindow,
}

/// Time series of a twin experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwinRecord {
    pub times: Vec<f64>,
    pub err_l2: Vec<f64>,
    pub err_h1: Vec<f64>,
    pub err_h2: Vec<f64>,
    /// `mu ||J (v - vtilde)||_{L^2}` per sample.
    pub nudge_mag: Vec<f64>,
    /// Max energy-budget residual among the steps since the previous sample.
    pub budget_residual: Vec<f64>,
    /// Start time selected by the policy (equals `times[0]` for `Immediate`).
    pub t_start_selected: f64,
}

impl TwinRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Instantaneous budget quadratures of the difference field at one time.
struct BudgetInstant {
    dissipation: f64,
    feedback: f64,
    work: f64,
    energy: f64,
}

fn budget_instant(
    solver: &ImexSolver,
    nu: f64,
    mu: f64,
    op: &ObservationOp,
    big_v: &HVelocity,
    work_field: &HVelocity,
) -> Result<BudgetInstant> {
    let dissipation = nu * dirichlet_form_with(solver, big_v, big_v);
    let feedback = if mu > 0.0 {
        mu * grid::l2_inner_velocity(&observe_velocity(op, big_v)?, big_v)
    } else {
        0.0
    };
    let work = grid::l2_inner_velocity(work_field, big_v);
    let energy = grid::l2_inner_velocity(big_v, big_v);
    Ok(BudgetInstant {
        dissipation,
        feedback,
        work,
        energy,
    })
}

/// Run a twin experiment: co-advance the reference and the assimilated run
/// from a spun-up reference state, recording error norms, feedback magnitude
/// and the energy-budget residual every `sample_interval` time units.
pub fn run_twin(
    params: &SimParams,
    nudge: &NudgeParams,
    policy: StartPolicy,
    ref_start: &StateSnapshot,
    sample_interval: f64,
) -> Result<TwinRecord> {
    params.validate()?;
    nudge.validate(params)?;
    if !(sample_interval > 0.0) {
        return Err(Error::InvalidParam(format!(
            "sample_interval must be > 0, got {sample_interval}"
        )));
    }
    let tilde0 = nudge.tilde_v0.build(&ref_start.v);
    let mut reference = ReferenceStepper::new(*params, ref_start.clone())?;
    let mut assimilated = AssimilatedStepper::new(
        *params,
        *nudge,
        StateSnapshot::new(ref_start.t, tilde0),
    )?;
    // budget solver: unit-nu Laplacian rows shared across instants
    let budget_solver = ImexSolver::new(params.grid, params.dt, params.nu, None);

    let n_steps = (params.t_end / params.dt).round() as usize;
    let sample_every = ((sample_interval / params.dt).round() as usize).max(1);

    let mut record = TwinRecord {
        times: Vec::new(),
        err_l2: Vec::new(),
        err_h1: Vec::new(),
        err_h2: Vec::new(),
        nudge_mag: Vec::new(),
        budget_residual: Vec::new(),
        t_start_selected: ref_start.t,
    };

    let sample =
        |record: &mut TwinRecord, t: f64, big_v: &HVelocity, mu: f64, op: &ObservationOp, budget: f64| -> Result<()> {
            if !big_v.all_finite() {
                return Err(Error::NonFinite { t });
            }
            record.times.push(t);
            record.err_l2.push(norm_velocity(big_v, NormOrder::L2));
            record.err_h1.push(norm_velocity(big_v, NormOrder::H1));
            record.err_h2.push(norm_velocity(big_v, NormOrder::H2));
            let mag = if mu > 0.0 {
                mu * observe_velocity(op, big_v)?.l2_norm()
            } else {
                0.0
            };
            record.nudge_mag.push(mag);
            record.budget_residual.push(budget);
            Ok(())
        };

    let initial_v = ref_start
        .v
        .velocity()
        .sub(assimilated.state().v.velocity());
    sample(&mut record, ref_start.t, &initial_v, nudge.mu, &nudge.observation, 0.0)?;

    let mut prev_instant: Option<BudgetInstant> = None;
    let mut prev_v = initial_v;
    let mut max_budget_residual = 0.0f64;
    for i in 1..=n_steps {
        let ref_before = reference.state().clone();
        reference.step()?;
        let ref_after = reference.state().clone();
        assimilated.step(&ref_before, &ref_after)?;

        let big_v_after = ref_after.v.velocity().sub(assimilated.state().v.velocity());

        // budget bookkeeping: work field at the pre-step time is the
        // difference of the explicit terms the two steppers just used
        let work_before = match (
            reference_explicit(&reference),
            assimilated.last_explicit_cross(),
        ) {
            (Some(er), Some(ed)) => er.sub(ed),
            _ => HVelocity::zeros(params.grid),
        };
        let inst_before = budget_instant(
            &budget_solver,
            params.nu,
            nudge.mu,
            &nudge.observation,
            &prev_v,
            &work_before,
        )?;
        if let Some(prev) = prev_instant.take() {
            // finalize the budget of the previous step now that its end-point
            // instant is known
            let rate = (inst_before.energy - prev.energy) / (2.0 * params.dt);
            let s = BudgetSample {
                t: ref_before.t - 0.5 * params.dt,
                energy_rate: rate,
                dissipation: 0.5 * (prev.dissipation + inst_before.dissipation),
                feedback: 0.5 * (prev.feedback + inst_before.feedback),
                work: 0.5 * (prev.work + inst_before.work),
            };
            max_budget_residual = max_budget_residual.max(s.residual().abs());
        }
        prev_instant = Some(inst_before);
        prev_v = big_v_after.clone();

        if i % sample_every == 0 || i == n_steps {
            sample(
                &mut record,
                ref_after.t,
                &big_v_after,
                nudge.mu,
                &nudge.observation,
                max_budget_residual,
            )?;
            max_budget_residual = 0.0;
        }
    }

    record.t_start_selected = match policy {
        StartPolicy::Immediate => record.times.first().copied().unwrap_or(0.0),
        StartPolicy::SmallGradientWindow => select_small_gradient_start(&record),
    };
    Ok(record)
}

fn reference_explicit(stepper: &ReferenceStepper) -> Option<&HVelocity> {
    stepper.last_explicit_term()
}

/// Scan the first unit window of samples for the minimal `||grad V||`.
fn select_small_gradient_start(record: &TwinRecord) -> f64 {
    let t0 = match record.times.first() {
        Some(&t) => t,
        None => return 0.0,
    };
    let window_end = t0 + 1.0;
    let mut best_t = t0;
    let mut best = f64::INFINITY;
    for ((&t, &h1), &l2) in record
        .times
        .iter()
        .zip(&record.err_h1)
        .zip(&record.err_l2)
    {
        if t > window_end {
            break;
        }
        let grad = (h1 * h1 - l2 * l2).max(0.0).sqrt();
        if grad < best {
            best = grad;
            best_t = t;
        }
    }
    best_t
}

/// Drive the difference-equation oracle alongside a reference run, returning
/// the sampled `V` trajectory and per-step budget residuals.
pub fn run_difference(
    params: &SimParams,
    nudge: &NudgeParams,
    ref_start: &StateSnapshot,
    v0: HVelocity,
    n_steps: usize,
) -> Result<(Vec<StateSnapshot>, Vec<BudgetSample>)> {
    let mut reference = ReferenceStepper::new(*params, ref_start.clone())?;
    let mut difference = DifferenceStepper::new(
        *params,
        *nudge,
        StateSnapshot::new(ref_start.t, ProjectedVelocity::new_unchecked(v0)),
    )?;
    let budget_solver = ImexSolver::new(params.grid, params.dt, params.nu, None);
    let mut states = vec![difference.state().clone()];
    let mut budgets = Vec::new();
    let mut prev_instant: Option<BudgetInstant> = None;
    for _ in 0..n_steps {
        let ref_before = reference.state().clone();
        let cross_before =
            difference.explicit_cross(difference.state(), &ref_before);
        let inst_before = budget_instant(
            &budget_solver,
            params.nu,
            nudge.mu,
            &nudge.observation,
            difference.state().v.velocity(),
            &cross_before,
        )?;
        if let Some(prev) = prev_instant.take() {
            let rate = (inst_before.energy - prev.energy) / (2.0 * params.dt);
            budgets.push(BudgetSample {
                t: ref_before.t - 0.5 * params.dt,
                energy_rate: rate,
                dissipation: 0.5 * (prev.dissipation + inst_before.dissipation),
                feedback: 0.5 * (prev.feedback + inst_before.feedback),
                work: 0.5 * (prev.work + inst_before.work),
            });
        }
        prev_instant = Some(inst_before);

        difference.step(&ref_before)?;
        reference.step()?;
        states.push(difference.state().clone());
    }
    // finalize the last step
    if let Some(prev) = prev_instant {
        let ref_now = reference.state().clone();
        let cross_now = difference.explicit_cross(difference.state(), &ref_now);
        let inst_now = budget_instant(
            &budget_solver,
            params.nu,
            nudge.mu,
            &nudge.observation,
            difference.state().v.velocity(),
            &cross_now,
        )?;
        let rate = (inst_now.energy - prev.energy) / (2.0 * params.dt);
        budgets.push(BudgetSample {
            t: ref_now.t - 0.5 * params.dt,
            energy_rate: rate,
            dissipation: 0.5 * (prev.dissipation + inst_now.dissipation),
            feedback: 0.5 * (prev.feedback + inst_now.feedback),
            work: 0.5 * (prev.work + inst_now.work),
        });
    }
    Ok((states, budgets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{seed_initial_state, ForcingPattern, ForcingSpec, TimeModulation, VerticalProfile};
    use crate::grid::GridSpec;
    use crate::hydrostatic::project;

    fn test_grid() -> GridSpec {
        GridSpec::new(16, 16, 9, 1.0).unwrap()
    }

    fn forced_params(grid: GridSpec) -> SimParams {
        SimParams {
            grid,
            nu: 0.1,
            dt: 0.01,
            t_end: 0.5,
            cfl_max: 0.5,
            forcing: ForcingSpec {
                pattern: ForcingPattern::TaylorGreen {
                    mode_x: 1,
                    mode_y: 1,
                },
                amplitude: 0.05,
                vertical: VerticalProfile::Baroclinic,
                modulation: TimeModulation {
                    offset: 1.0,
                    amplitude: 0.3,
                    omega: 1.5,
                },
                holder_exponent: 1.0,
            },
        }
    }

    fn cutoff_nudge(mu: f64) -> NudgeParams {
        NudgeParams {
            mu,
            observation: ObservationOp::SpectralCutoff { k_max: 3.0 },
            forcing_mode: ForcingMode::Exact,
            tilde_v0: InitialGuess::Zero,
        }
    }

    #[test]
    fn exact_synchrony_is_a_fixed_point() {
        let g = test_grid();
        let params = forced_params(g);
        let nudge = NudgeParams {
            tilde_v0: InitialGuess::Reference,
            ..cutoff_nudge(8.0)
        };
        let start = StateSnapshot::new(0.0, seed_initial_state(g, 0.2));
        let record = run_twin(&params, &nudge, StartPolicy::Immediate, &start, 0.05).unwrap();
        for (&t, &e) in record.times.iter().zip(&record.err_l2) {
            assert!(e <= 1e-12, "synchrony broken at t = {t}: err = {e:.3e}");
        }
        for &e in &record.err_h2 {
            assert!(e <= 1e-12);
        }
    }

    #[test]
    fn zero_feedback_runs_an_independent_model() {
        let g = test_grid();
        let params = forced_params(g);
        let nudge = NudgeParams {
            tilde_v0: InitialGuess::Zero,
            ..cutoff_nudge(0.0)
        };
        let start = StateSnapshot::new(0.0, seed_initial_state(g, 0.2));
        // assimilated run from zero with mu = 0 must equal a reference run
        // started from zero under the same force
        let mut reference = ReferenceStepper::new(params, start.clone()).unwrap();
        let zero0 = StateSnapshot::new(0.0, project(&HVelocity::zeros(g)));
        let mut free = ReferenceStepper::new(params, zero0.clone()).unwrap();
        let mut assim = AssimilatedStepper::new(params, nudge, zero0).unwrap();
        for _ in 0..30 {
            let before = reference.state().clone();
            reference.step().unwrap();
            let after = reference.state().clone();
            assim.step(&before, &after).unwrap();
            free.step().unwrap();
        }
        let gap = assim
            .state()
            .v
            .velocity()
            .sub(free.state().v.velocity())
            .max_abs();
        assert!(gap < 1e-13, "mu = 0 run deviates from free run by {gap:.3e}");
    }

    #[test]
    fn nudged_error_decays_for_large_mu() {
        let g = test_grid();
        let mut params = forced_params(g);
        params.t_end = 2.0;
        let nudge = cutoff_nudge(12.0);
        let start = StateSnapshot::new(0.0, seed_initial_state(g, 0.2));
        let record = run_twin(&params, &nudge, StartPolicy::Immediate, &start, 0.1).unwrap();
        let first = record.err_l2[0];
        let last = *record.err_l2.last().unwrap();
        assert!(first > 0.0);
        assert!(
            last < 1e-2 * first,
            "expected at least two decades of decay, got {first:.3e} -> {last:.3e}"
        );
    }

    #[test]
    fn zero_initial_difference_stays_zero_in_oracle() {
        let g = test_grid();
        let params = forced_params(g);
        let nudge = cutoff_nudge(5.0); // exact forcing: F_delta = 0
        let start = StateSnapshot::new(0.0, seed_initial_state(g, 0.2));
        let (states, _) = run_difference(&params, &nudge, &start, HVelocity::zeros(g), 20).unwrap();
        for s in states {
            assert!(s.v.velocity().max_abs() <= 1e-13);
        }
    }

    fn oracle_gap(params: &SimParams, nudge: &NudgeParams, n_steps: usize) -> f64 {
        let g = params.grid;
        let start = StateSnapshot::new(0.0, seed_initial_state(g, 0.2));
        // twin trajectory
        let tilde0 = nudge.tilde_v0.build(&start.v);
        let mut reference = ReferenceStepper::new(*params, start.clone()).unwrap();
        let mut assim =
            AssimilatedStepper::new(*params, *nudge, StateSnapshot::new(0.0, tilde0)).unwrap();
        // direct difference trajectory
        let v0 = start
            .v
            .velocity()
            .sub(nudge.tilde_v0.build(&start.v).velocity());
        let mut reference2 = ReferenceStepper::new(*params, start.clone()).unwrap();
        let mut diff = DifferenceStepper::new(
            *params,
            *nudge,
            StateSnapshot::new(0.0, ProjectedVelocity::new_unchecked(v0)),
        )
        .unwrap();
        let mut worst = 0.0f64;
        for _ in 0..n_steps {
            let before = reference.state().clone();
            reference.step().unwrap();
            let after = reference.state().clone();
            assim.step(&before, &after).unwrap();

            let before2 = reference2.state().clone();
            diff.step(&before2).unwrap();
            reference2.step().unwrap();

            let twin_v = after.v.velocity().sub(assim.state().v.velocity());
            let gap = diff.state().v.velocity().sub(&twin_v).l2_norm();
            let scale = twin_v.l2_norm().max(1e-30);
            worst = worst.max(gap / scale);
        }
        worst
    }

    #[test]
    fn oracle_matches_twin_difference_in_both_forcing_modes() {
        let g = test_grid();
        let params = forced_params(g);
        for mode in [ForcingMode::Exact, ForcingMode::Observed] {
            let nudge = NudgeParams {
                forcing_mode: mode,
                ..cutoff_nudge(6.0)
            };
            let gap = oracle_gap(&params, &nudge, 100);
            assert!(
                gap < 1e-6,
                "{mode:?}: relative oracle gap {gap:.3e} exceeds 1e-6"
            );
        }
    }

    #[test]
    fn oracle_matches_twin_with_local_average_feedback() {
        let g = test_grid();
        let params = forced_params(g);
        let nudge = NudgeParams {
            mu: 4.0,
            observation: ObservationOp::LocalAverage { h: g.lx / 8.0 },
            forcing_mode: ForcingMode::Observed,
            tilde_v0: InitialGuess::Zero,
        };
        let gap = oracle_gap(&params, &nudge, 100);
        assert!(gap < 1e-6, "local-average oracle gap {gap:.3e}");
    }

    #[test]
    fn feedback_quadrature_is_nonnegative() {
        let g = test_grid();
        let ops = [
            ObservationOp::SpectralCutoff { k_max: 3.0 },
            ObservationOp::LocalAverage { h: g.lx / 8.0 },
        ];
        for (seed, op) in ops.iter().enumerate() {
            let v = seed_initial_state(g, 0.3 + 0.1 * seed as f64);
            let jv = observe_velocity(op, v.velocity()).unwrap();
            let ip = grid::l2_inner_velocity(&jv, v.velocity());
            assert!(ip >= -1e-12, "{op:?}: <J v, v> = {ip:.3e} negative");
        }
    }

    #[test]
    fn identity_feedback_contracts_by_implicit_factor() {
        let g = GridSpec::new(16, 16, 17, 1.0).unwrap();
        let mut params = forced_params(g);
        params.forcing = ForcingSpec::zero();
        params.nu = 1.0;
        let mu = 50.0;
        let nudge = NudgeParams {
            mu,
            observation: ObservationOp::Identity,
            forcing_mode: ForcingMode::Exact,
            tilde_v0: InitialGuess::Zero,
        };
        // reference pinned at zero; V evolves by diffusion + feedback
        let start = StateSnapshot::new(0.0, project(&HVelocity::zeros(g)));
        // exact discrete eigenmode of the vertical stencil pair
        let beta = 0.5 * std::f64::consts::PI / g.l;
        let v0 = HVelocity::from_fn(
            g,
            move |_, y, z| (2.0 * y).cos() * (beta * (z + g.l)).sin(),
            |_, _, _| 0.0,
        );
        let dz = g.dz();
        let lam_d = 4.0 + (2.0 / dz * (0.5 * beta * dz).sin()).powi(2);
        let amp0 = v0.max_abs();
        let (states, _) = run_difference(&params, &nudge, &start, v0, 10).unwrap();
        let a = 0.5 * params.dt * (mu + params.nu * lam_d);
        let factor = ((1.0 - a) / (1.0 + a)).powi(10);
        let measured = states.last().unwrap().v.velocity().max_abs() / amp0;
        assert!(
            (measured - factor).abs() < 1e-10,
            "measured {measured}, implicit factor {factor}"
        );
    }

    #[test]
    fn pure_diffusion_budget_residual_is_second_order_in_dt() {
        let g = test_grid();
        let residual_at = |dt: f64| {
            let mut params = forced_params(g);
            params.forcing = ForcingSpec::zero();
            params.nu = 1.0;
            params.dt = dt;
            let nudge = NudgeParams {
                mu: 0.0,
                observation: ObservationOp::Identity,
                forcing_mode: ForcingMode::Exact,
                tilde_v0: InitialGuess::Zero,
            };
            let start = StateSnapshot::new(0.0, project(&HVelocity::zeros(g)));
            let v0 = seed_initial_state(g, 0.5).into_velocity();
            let n = (0.2 / dt).round() as usize;
            let (_, budgets) = run_difference(&params, &nudge, &start, v0, n).unwrap();
            budgets
                .iter()
                .map(|b| b.residual().abs())
                .fold(0.0f64, f64::max)
        };
        let ratio = residual_at(0.02) / residual_at(0.01);
        assert!(
            (3.0..=5.0).contains(&ratio),
            "budget residual refinement ratio {ratio} outside [3, 5]"
        );
    }

    #[test]
    fn explicit_feedback_rejects_oversized_dt() {
        let g = test_grid();
        let mut params = forced_params(g);
        params.dt = 0.2;
        let nudge = NudgeParams {
            mu: 10.0,
            observation: ObservationOp::LocalAverage { h: g.lx / 8.0 },
            forcing_mode: ForcingMode::Exact,
            tilde_v0: InitialGuess::Zero,
        };
        assert!(nudge.validate(&params).is_err());
    }

    #[test]
    fn observed_identity_warns() {
        let nudge = NudgeParams {
            mu: 1.0,
            observation: ObservationOp::Identity,
            forcing_mode: ForcingMode::Observed,
            tilde_v0: InitialGuess::Zero,
        };
        assert_eq!(nudge.sanity_warnings().len(), 1);
    }

    #[test]
    fn start_policy_selects_small_gradient_sample() {
        let record = TwinRecord {
            times: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25],
            err_l2: vec![1.0, 0.9, 0.8, 0.7, 0.6, 0.5],
            err_h1: vec![2.0, 1.5, 0.9, 1.2, 1.1, 0.6],
            err_h2: vec![3.0; 6],
            nudge_mag: vec![0.0; 6],
            budget_residual: vec![0.0; 6],
            t_start_selected: 0.0,
        };
        let t = select_small_gradient_start(&record);
        // min of sqrt(h1^2 - l2^2) within [0, 1] sits at t = 0.5
        assert_eq!(t, 0.5);
    }
}
