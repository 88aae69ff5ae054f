// Scratch calibration runs for picking the experiment configurations.
use pe_assim::diagnostics::{self, NormOrder};
use pe_assim::dynamics::{
    spin_up, ForcingPattern, ForcingSpec, SimParams, TimeModulation, VerticalProfile,
};
use pe_assim::grid::GridSpec;
use pe_assim::linearized::{check_gates, GateConstants};
use pe_assim::nudging::{run_twin, ForcingMode, InitialGuess, NudgeParams, StartPolicy};
use pe_assim::observation::ObservationOp;

fn main_config() -> SimParams {
    let nu: f64 = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(0.02);
    let amp: f64 = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(0.005);
    let grid = GridSpec::new(32, 32, 17, 1.0).unwrap();
    SimParams {
        grid,
        nu,
        dt: 0.01,
        t_end: 7.0,
        cfl_max: 0.4,
        forcing: ForcingSpec {
            pattern: ForcingPattern::TaylorGreen {
                mode_x: 1,
                mode_y: 1,
            },
            amplitude: amp,
            vertical: VerticalProfile::Baroclinic,
            modulation: TimeModulation {
                offset: 1.0,
                amplitude: 0.25,
                omega: 1.0,
            },
            holder_exponent: 1.0,
        },
    }
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "main".into());
    match which.as_str() {
        "main" => calibrate_main(),
        "sweep" => calibrate_sweep(),
        "checks" => calibrate_checks(),
        _ => eprintln!("unknown mode {which}"),
    }
}

fn calibrate_checks() {
    use pe_assim::linearized::{boundedness_ratio, coercivity_probe, find_min_passing_mu};
    use pe_assim::observation::{estimate_constants, ProbeSuite};
    let params = main_config();
    let spin = spin_up(&params, 5.0, 0.016).unwrap();
    let base = &spin.state.v;
    let op = ObservationOp::SpectralCutoff { k_max: 8.0 };
    let t0 = std::time::Instant::now();
    let report = coercivity_probe(base, 3.0, &op, 200, 42).unwrap();
    println!(
        "coercivity mu=3, K=8: min_margin = {:.4}, negatives = {}, elapsed {:?}",
        report.min_margin, report.negative_count, t0.elapsed()
    );
    let report0 = coercivity_probe(base, 0.0, &op, 200, 42).unwrap();
    println!(
        "coercivity mu=0: min_margin = {:.4}, negatives = {}",
        report0.min_margin, report0.negative_count
    );
    // strong shear base: scale up the state
    let strong = pe_assim::hydrostatic::ProjectedVelocity::try_new(
        base.velocity().scaled(40.0),
    ).unwrap();
    let report_strong = coercivity_probe(&strong, 0.0, &op, 200, 42).unwrap();
    println!(
        "coercivity mu=0 strong shear: min_margin = {:.4}, negatives = {}",
        report_strong.min_margin, report_strong.negative_count
    );
    let b = boundedness_ratio(base, 3.0, &op, 50, 7).unwrap();
    println!("boundedness ratio = {b:.4}");
    let gc = GateConstants::default();
    let min_mu = find_min_passing_mu(spin.sup_h2, 0.125, &gc, 1e3);
    println!("min passing mu = {min_mu:?}");

    let grid = params.grid;
    let suite = ProbeSuite { n_probes: 200, seed: 2024 };
    let c_cut = estimate_constants(&op, grid, &suite).unwrap();
    println!("cutoff constants: c_bound = {:.12}, c_approx = {:.8}", c_cut.c_bound, c_cut.c_approx);
    let la = ObservationOp::LocalAverage { h: grid.lx / 10.0 };
    let c_la = estimate_constants(&la, grid, &suite).unwrap();
    println!("local-average constants: c_bound = {:.12}, c_approx = {:.8}", c_la.c_bound, c_la.c_approx);
}

fn calibrate_main() {
    let params = main_config();
    let t0 = std::time::Instant::now();
    let seed_amp: f64 = std::env::args().nth(4).map(|s| s.parse().unwrap()).unwrap_or(0.016);
    let spin = spin_up(&params, 5.0, seed_amp).unwrap();
    println!(
        "spin-up: sup_h2 = {:.4}, tail = {:.4}, |v|max = {:.4}, elapsed {:?}",
        spin.sup_h2,
        spin.tail_sup_h2,
        spin.state.v.velocity().max_abs(),
        t0.elapsed()
    );
    println!(
        "  v norms: L2 = {:.4}, H1 = {:.4}, H2 = {:.4}",
        diagnostics::norm_velocity(spin.state.v.velocity(), NormOrder::L2),
        diagnostics::norm_velocity(spin.state.v.velocity(), NormOrder::H1),
        diagnostics::norm_velocity(spin.state.v.velocity(), NormOrder::H2),
    );
    let gc = GateConstants::default();
    for mu in [2.0, 3.0, 4.0, 6.0, 8.0] {
        let report = check_gates(spin.sup_h2, mu, 0.125, &gc);
        println!(
            "  gates mu = {mu}: pass = {}, margins = ({:.3}, {:.3}, {:.3})",
            report.all_pass(),
            report.margin_a,
            report.margin_gate1,
            report.margin_gate2
        );
    }

    for mu in [3.0, 6.0] {
        let nudge = NudgeParams {
            mu,
            observation: ObservationOp::SpectralCutoff { k_max: 8.0 },
            forcing_mode: ForcingMode::Exact,
            tilde_v0: InitialGuess::Zero,
        };
        let t1 = std::time::Instant::now();
        let record = run_twin(&params, &nudge, StartPolicy::Immediate, &spin.state, 0.05).unwrap();
        let initial_h2 = record.err_h2[0];
        let final_h2 = *record.err_h2.last().unwrap();
        let (wa, wb) = diagnostics::default_fit_window(&record.times, &record.err_h1);
        let fit = diagnostics::fit_decay(&record.times, &record.err_h1, (wa, wb)).unwrap();
        println!(
            "twin mu = {mu}: err_h2 {:.3e} -> {:.3e} ({:.1} decades), rate = {:.3}, r2 = {:.5}, window = ({:.2}, {:.2}), elapsed {:?}",
            initial_h2,
            final_h2,
            (initial_h2 / final_h2).log10(),
            fit.rate,
            fit.r_squared,
            wa,
            wb,
            t1.elapsed()
        );
        let max_budget = record
            .budget_residual
            .iter()
            .fold(0.0f64, |m, &b| m.max(b.abs()));
        println!("  max budget residual = {max_budget:.3e}");
        // decay curve shape every ~1 time unit
        for (i, (&t, &h)) in record.times.iter().zip(&record.err_h1).enumerate() {
            if i % 20 == 0 {
                println!("    t = {t:.2}, err_h1 = {h:.4e}");
            }
        }
    }

    // control: mu = 0
    let nudge0 = NudgeParams {
        mu: 0.0,
        observation: ObservationOp::SpectralCutoff { k_max: 8.0 },
        forcing_mode: ForcingMode::Exact,
        tilde_v0: InitialGuess::Zero,
    };
    let record = run_twin(&params, &nudge0, StartPolicy::Immediate, &spin.state, 0.05).unwrap();
    let initial = record.err_l2[0];
    let min = record.err_l2.iter().cloned().fold(f64::INFINITY, f64::min);
    println!(
        "control mu = 0: initial = {:.4e}, min = {:.4e}, ratio = {:.3}",
        initial,
        min,
        min / initial
    );
}

fn calibrate_sweep() {
    let grid = GridSpec::with_periods(40, 40, 17, 1.0, 1.0, 1.0).unwrap();
    let params = SimParams {
        grid,
        nu: 0.02,
        dt: 0.005,
        t_end: 12.0,
        cfl_max: 0.4,
        forcing: ForcingSpec {
            pattern: ForcingPattern::TaylorGreen {
                mode_x: 1,
                mode_y: 1,
            },
            amplitude: 0.5,
            vertical: VerticalProfile::Baroclinic,
            modulation: TimeModulation {
                offset: 1.0,
                amplitude: 0.5,
                omega: 2.0,
            },
            holder_exponent: 1.0,
        },
    };
    let t0 = std::time::Instant::now();
    let spin = spin_up(&params, 3.0, 0.05).unwrap();
    println!(
        "sweep spin-up: sup_h2 = {:.4}, |v|max = {:.4}, elapsed {:?}",
        spin.sup_h2,
        spin.state.v.velocity().max_abs(),
        t0.elapsed()
    );
    let mut pairs = Vec::new();
    for delta in [0.2, 0.1, 0.05] {
        let nudge = NudgeParams {
            mu: 10.0,
            observation: ObservationOp::LocalAverage { h: delta },
            forcing_mode: ForcingMode::Observed,
            tilde_v0: InitialGuess::Zero,
        };
        let t1 = std::time::Instant::now();
        let record = run_twin(&params, &nudge, StartPolicy::Immediate, &spin.state, 0.05).unwrap();
        let pl2 = diagnostics::plateau(&record.times, &record.err_l2, 0.25).unwrap();
        let ph1 = diagnostics::plateau(&record.times, &record.err_h1, 0.25).unwrap();
        let ph2 = diagnostics::plateau(&record.times, &record.err_h2, 0.25).unwrap();
        println!(
            "delta = {delta}: plateau l2 = {:.4e}, h1 = {:.4e}, h2 = {:.4e}, elapsed {:?}",
            pl2.level, ph1.level, ph2.level, t1.elapsed()
        );
        pairs.push((delta, pl2.level, ph1.level, ph2.level));
    }
    for (idx, name) in [(1usize, "l2"), (2, "h1"), (3, "h2")] {
        let p: Vec<(f64, f64)> = pairs.iter().map(|t| (t.0, match idx { 1 => t.1, 2 => t.2, _ => t.3 })).collect();
        let slope = diagnostics::scaling_fit(&p).unwrap();
        println!("scaling slope ({name}) = {slope:.3}");
    }
}
