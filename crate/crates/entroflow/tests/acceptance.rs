//! Acceptance suite: one test per shipping criterion, each printing a
//! single verdict line. The standard suite behind several criteria is a
//! 3 x 4 grid of coupling matrices and weight families run once and shared.

use entroflow::coeffs::{cartan, identity, validate, MatrixError, EIGENVALUE_BOUND};
use entroflow::flow::{
    self, advance, rhs, StepControl, Termination, TrajectoryRecord, TrajectoryRow,
};
use entroflow::functionals::{
    dissipation, entropy, h_mass_lower_bound, mt_deficit, FlowState, ProblemData,
};
use entroflow::harness::expr;
use entroflow::steady::{certify, newton_refine, NewtonControl};
use entroflow::torusfield::{exp_integral_unit, mean, project_mean_zero, Grid, ScalarField};
use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

const GRID_N: usize = 128;

fn grid() -> Grid {
    Grid::new(1, GRID_N).unwrap()
}

/// Collects failed checks so a criterion prints one line and reports every
/// violation at once.
struct Checker {
    failures: Vec<String>,
}

impl Checker {
    fn new() -> Self {
        Checker { failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(msg());
        }
    }

    fn finish(self, number: u32, detail: String) {
        if self.failures.is_empty() {
            println!("[C {number:02}] PASS - {detail}");
        } else {
            println!(
                "[C {number:02}] FAIL - {} violation(s): {}",
                self.failures.len(),
                self.failures.join(" | ")
            );
            panic!("criterion {number} failed: {:?}", self.failures);
        }
    }
}

fn field(src: &str) -> ScalarField {
    expr::sample_field(src, grid()).unwrap()
}

fn initial_component(src: &str) -> ScalarField {
    let modes = expr::parse_modes(src, grid()).unwrap();
    project_mean_zero(&expr::field_from_modes(&modes, grid()))
}

const U0_EXPRS: [&str; 3] = [
    "1.0 cos(2 pi x) + 0.25 sin(4 pi x)",
    "0.5 sin(2 pi x)",
    "0.75 cos(4 pi x)",
];

fn standard_control() -> StepControl {
    StepControl {
        tau0: 1e-3,
        tau_min: 1e-10,
        tau_max: 0.05,
        entropy_slack: 1e-8,
        steady_tol: 1e-9,
        t_end: 3.0,
        max_steps: 200_000,
    }
}

/// Per-recorded-state data the shared observer gathers beyond the row.
struct RowExtra {
    /// Hoelder mass bound satisfied for every component at q in {1.5, 2, 4}.
    mass_ok: bool,
    /// S(t) = sum_j log(h_max_j int e^{u_j}).
    s_t: f64,
}

struct SuiteRun {
    label: String,
    prob: ProblemData,
    record: TrajectoryRecord,
    extras: Vec<RowExtra>,
    runtime: Duration,
}

fn suite() -> &'static Vec<SuiteRun> {
    static SUITE: OnceLock<Vec<SuiteRun>> = OnceLock::new();
    SUITE.get_or_init(|| {
        let matrices = [
            ("identity1", identity(1)),
            ("cartan2", cartan(2)),
            ("cartan3", cartan(3)),
        ];
        let weights = [
            ("const", "1"),
            ("halfcos", "1 + 0.5 cos(2 pi x)"),
            ("fullcos", "1 + cos(2 pi x)"),
            ("bump", "gauss(0.15, 0.5, 0.1)"),
        ];
        let mut runs = Vec::new();
        for (mname, m) in &matrices {
            let n = m.nrows();
            for (wname, wsrc) in &weights {
                let matrix = validate(m).unwrap();
                let h = vec![field(wsrc); n];
                let prob = ProblemData::new(matrix, h, 2.0).unwrap();
                let prob_q: Vec<ProblemData> = [1.5, 4.0]
                    .iter()
                    .map(|&q| prob.with_exponent(q).unwrap())
                    .collect();
                let u0 = FlowState::new(
                    0.0,
                    U0_EXPRS[..n].iter().map(|s| initial_component(s)).collect(),
                )
                .unwrap();

                let mut extras = Vec::new();
                let started = Instant::now();
                let (_, record) = flow::evolve_with(&u0, &prob, &standard_control(), |state, _| {
                    let mut mass_ok = true;
                    for p in std::iter::once(&prob).chain(&prob_q) {
                        for j in 0..p.n() {
                            mass_ok &= h_mass_lower_bound(p, state, j).unwrap().satisfied();
                        }
                    }
                    let s_terms: f64 = (0..prob.n())
                        .map(|j| {
                            prob.h_max()[j].ln()
                                + exp_integral_unit(&state.u()[j], 1.0).unwrap().ln
                        })
                        .sum();
                    extras.push(RowExtra { mass_ok, s_t: s_terms });
                })
                .unwrap();
                let runtime = started.elapsed();
                runs.push(SuiteRun {
                    label: format!("{mname}/{wname}"),
                    prob,
                    record,
                    extras,
                    runtime,
                });
            }
        }
        runs
    })
}

#[test]
fn criterion_01_entropy_descends_along_every_run() {
    let mut c = Checker::new();
    let mut total_steps = 0u64;
    for run in suite() {
        let rows = &run.record.rows;
        for pair in rows.windows(2) {
            c.check(pair[1].k <= pair[0].k + 1e-8, || {
                format!(
                    "{}: K rose {:.3e} -> {:.3e} at t = {:.3e}",
                    run.label, pair[0].k, pair[1].k, pair[1].t
                )
            });
        }
        let k0 = rows.first().unwrap().k;
        let kf = rows.last().unwrap().k;
        c.check(kf < k0, || {
            format!("{}: no strict decrease ({k0:.6e} -> {kf:.6e})", run.label)
        });
        c.check(run.runtime < Duration::from_secs(60), || {
            format!("{}: took {:?}", run.label, run.runtime)
        });
        total_steps += run.record.accepted_steps;
    }
    c.finish(
        1,
        format!(
            "entropy nonincreasing (slack 1e-8) across {} runs, {} accepted steps",
            suite().len(),
            total_steps
        ),
    );
}

#[test]
fn criterion_02_dissipation_matches_entropy_decay_to_first_order() {
    // Single-component single-mode state: the discrete entropy decrease per
    // unit time must match the quadratic dissipation of the realized rates
    // to within 5% at tau = 1e-4, and the mismatch must shrink linearly.
    let g = grid();
    let matrix = validate(&identity(1)).unwrap();
    let prob = ProblemData::new(matrix, vec![ScalarField::constant(g, 1.0)], 2.0).unwrap();
    let state = FlowState::new(0.0, vec![initial_component("0.25 cos(2 pi x)")]).unwrap();

    let mismatch = |tau: f64| {
        let f = rhs(&state, &prob).unwrap();
        let next = advance(&state, &f, tau);
        let k_here = entropy(&state, &prob).unwrap().k;
        let k_next = entropy(&next, &prob).unwrap().k;
        let rates: Vec<ScalarField> = next
            .u()
            .iter()
            .zip(state.u())
            .map(|(a, b)| a.sub(b).scale(1.0 / tau))
            .collect();
        let d = dissipation(&rates, prob.matrix()).unwrap();
        ((k_next - k_here) / tau + d).abs() / d.abs()
    };

    let m1 = mismatch(1e-4);
    let m2 = mismatch(5e-5);
    let ratio = m2 / m1;
    let mut c = Checker::new();
    c.check(m1 <= 0.05, || {
        format!("relative mismatch {m1:.3e} above 5% at tau = 1e-4")
    });
    c.check((0.4..=0.6).contains(&ratio), || {
        format!("halving tau scaled the mismatch by {ratio:.3} (want 0.5 +- 20%)")
    });
    c.finish(
        2,
        format!("relative mismatch {m1:.3e} -> {m2:.3e} under tau halving (ratio {ratio:.3})"),
    );
}

#[test]
fn criterion_03_component_means_stay_pinned() {
    let mut c = Checker::new();
    let mut worst = 0.0f64;
    for run in suite() {
        for row in &run.record.rows {
            for (j, m) in row.means.iter().enumerate() {
                worst = worst.max(m.abs());
                c.check(m.abs() <= 1e-11, || {
                    format!(
                        "{}: |mean u_{}| = {:.3e} at t = {:.3e}",
                        run.label,
                        j + 1,
                        m.abs(),
                        row.t
                    )
                });
            }
        }
    }
    c.finish(3, format!("worst recorded |mean| = {worst:.3e} (budget 1e-11)"));
}

#[test]
fn criterion_04_linearized_decay_rate() {
    // Near u = 0 with h = 1 the k = 1 mode decays at rate 4 pi^2 - 1.
    let g = Grid::new(1, 64).unwrap();
    let matrix = validate(&identity(1)).unwrap();
    let prob = ProblemData::new(matrix, vec![ScalarField::constant(g, 1.0)], 2.0).unwrap();
    let eps = 1e-3;
    let u0 = FlowState::new(
        0.0,
        vec![ScalarField::from_fn(g, |x, _| eps * (2.0 * PI * x).cos())],
    )
    .unwrap();
    let ctl = StepControl {
        tau0: 1e-4,
        tau_max: 1e-4,
        t_end: 0.05,
        ..StepControl::default()
    };
    let (end, _) = flow::evolve(&u0, &prob, &ctl).unwrap();
    let measured = end.u()[0].linf_norm() / eps;
    let expected = (-(4.0 * PI * PI - 1.0) * 0.05).exp();
    let rel = (measured - expected).abs() / expected;
    let mut c = Checker::new();
    c.check(rel < 1e-2, || {
        format!("amplitude ratio {measured:.8} vs e^{{-(4pi^2-1)/20}} = {expected:.8} (rel {rel:.3e})")
    });
    c.finish(
        4,
        format!("decay factor {measured:.8} vs {expected:.8}, rel err {rel:.2e}"),
    );
}

#[test]
fn criterion_05_steady_states_are_found_refined_and_certified() {
    let started = Instant::now();
    let matrix = validate(&cartan(2)).unwrap();
    let h = vec![field("1 + 0.5 cos(2 pi x)"); 2];
    let prob = ProblemData::new(matrix, h, 2.0).unwrap();
    let u0 = FlowState::new(
        0.0,
        vec![initial_component("0.1 sin(2 pi x)"); 2],
    )
    .unwrap();
    let ctl = StepControl {
        t_end: 50.0,
        ..standard_control()
    };
    let (end, record) = flow::evolve(&u0, &prob, &ctl).unwrap();

    let mut c = Checker::new();
    c.check(record.termination == Termination::Steady, || {
        format!("flow did not settle: {:?}", record.termination)
    });
    let last = record.rows.last().unwrap();
    c.check(last.residual_linf < 1e-8, || {
        format!("residual at steady detection {:.3e}", last.residual_linf)
    });

    let newton = newton_refine(&end, &prob, &NewtonControl::default()).unwrap();
    c.check(newton.converged && newton.iterations <= 5, || {
        format!(
            "newton: converged = {}, iterations = {}",
            newton.converged, newton.iterations
        )
    });
    let final_res = newton.history.last().unwrap().res_linf;
    c.check(final_res <= 1e-11, || {
        format!("refined residual {final_res:.3e}")
    });

    let mut agree = 0.0f64;
    for (a, b) in newton.state.u().iter().zip(end.u()) {
        agree = agree.max(a.sub(b).linf_norm());
    }
    c.check(agree <= 1e-6, || {
        format!("refinement moved the state by {agree:.3e} in sup norm")
    });

    let cert = certify(&newton.state, &prob, 1e-9).unwrap();
    c.check(cert.pass, || format!("certificate failed: {cert:?}"));
    c.check(cert.refined.grid_points == 2 * GRID_N, || {
        format!("fine check ran on {} points", cert.refined.grid_points)
    });
    let elapsed = started.elapsed();
    c.check(elapsed < Duration::from_secs(300), || {
        format!("pipeline took {elapsed:?}")
    });
    c.finish(
        5,
        format!(
            "steady at t = {:.3}, newton {} iters to {:.1e}, drift {:.1e}, certified at {} and {} points in {:.1?}",
            end.t,
            newton.iterations,
            final_res,
            agree,
            GRID_N,
            2 * GRID_N,
            elapsed
        ),
    );
}

#[test]
fn criterion_06_mass_lower_bounds_hold_along_all_runs() {
    let mut c = Checker::new();
    let mut states = 0usize;
    for run in suite() {
        for (i, extra) in run.extras.iter().enumerate() {
            states += 1;
            c.check(extra.mass_ok, || {
                format!(
                    "{}: Hoelder bound violated at recorded state {} (t = {:.3e})",
                    run.label, i, run.record.rows[i].t
                )
            });
        }
    }
    c.finish(
        6,
        format!("bounds at q in {{1.5, 2, 4}} held at all {states} recorded states"),
    );
}

#[test]
fn criterion_07_gradient_energy_is_bounded_by_entropy_data() {
    // G(t) <= 2 (K(0) + S(t)) / (lambda - 1/(2 beta)) with
    // S(t) = sum_j log(h_max_j int e^{u_j}).
    let mut c = Checker::new();
    let mut tightest = f64::INFINITY;
    for run in suite() {
        let m = run.prob.matrix();
        let denom = m.lambda() - 1.0 / (2.0 * m.beta());
        c.check(denom > 0.0, || {
            format!("{}: constant window collapsed ({denom:.3e})", run.label)
        });
        let k0 = run.record.rows[0].k;
        for (row, extra) in run.record.rows.iter().zip(&run.extras) {
            let bound = 2.0 * (k0 + extra.s_t) / denom + 1e-9;
            tightest = tightest.min(bound - row.grad_energy);
            c.check(row.grad_energy <= bound, || {
                format!(
                    "{}: G = {:.6e} above bound {:.6e} at t = {:.3e}",
                    run.label, row.grad_energy, bound, row.t
                )
            });
        }
    }
    c.finish(
        7,
        format!("gradient energy under the entropy bound everywhere (min margin {tightest:.3e})"),
    );
}

#[test]
fn criterion_08_entropy_gap_is_nonnegative() {
    let mut c = Checker::new();
    let mut min_gap = f64::INFINITY;
    for run in suite() {
        for row in &run.record.rows {
            min_gap = min_gap.min(row.entropy_gap);
            c.check(row.entropy_gap >= -1e-12, || {
                format!(
                    "{}: entropy gap {:.3e} at t = {:.3e}",
                    run.label, row.entropy_gap, row.t
                )
            });
        }
    }
    c.finish(8, format!("minimum recorded gap {min_gap:.3e} (budget -1e-12)"));
}

fn window_sup(rows: &[TrajectoryRow], lo: f64, hi: f64) -> f64 {
    // Sup norms over recorded times in [lo, hi]; if the run froze earlier
    // (bitwise steady state), the last recorded value extends as a constant.
    let mut m = f64::NEG_INFINITY;
    for row in rows {
        if row.t >= lo && row.t <= hi {
            for s in &row.sup_norms {
                m = m.max(*s);
            }
        }
    }
    let last = rows.last().unwrap();
    if last.t < hi {
        for s in &last.sup_norms {
            m = m.max(*s);
        }
    }
    m
}

#[test]
fn criterion_09_long_runs_stay_bounded() {
    // The cartan(2) run with the weight that touches zero, extended to
    // t = 50 with the steady exit disabled.
    let started = Instant::now();
    let matrix = validate(&cartan(2)).unwrap();
    let h = vec![field("1 + cos(2 pi x)"); 2];
    let prob = ProblemData::new(matrix, h, 2.0).unwrap();
    let u0 = FlowState::new(
        0.0,
        vec![
            initial_component(U0_EXPRS[0]),
            initial_component(U0_EXPRS[1]),
        ],
    )
    .unwrap();
    let ctl = StepControl {
        t_end: 50.0,
        steady_tol: 0.0, // never exit early; record the whole window
        max_steps: 2_000_000,
        ..standard_control()
    };
    let (_, record) = flow::evolve(&u0, &prob, &ctl).unwrap();

    let mut c = Checker::new();
    c.check(record.termination == Termination::TEnd, || {
        format!("run ended early: {:?}", record.termination)
    });
    let early = window_sup(&record.rows, 5.0, 25.0);
    let late = window_sup(&record.rows, 25.0, 50.0);
    c.check(early.is_finite() && late.is_finite(), || {
        format!("windows empty: early {early}, late {late}")
    });
    c.check(late <= 1.01 * early, || {
        format!("sup norm grew late in the run: [5,25] -> {early:.6e}, [25,50] -> {late:.6e}")
    });
    let elapsed = started.elapsed();
    c.check(elapsed < Duration::from_secs(600), || {
        format!("long run took {elapsed:?}")
    });
    c.finish(
        9,
        format!(
            "sup norm plateau {early:.6e} -> {late:.6e} over t in [5,50], {} steps in {:.1?}",
            record.accepted_steps, elapsed
        ),
    );
}

fn fit_log_slope(points: &[(f64, f64)]) -> f64 {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, x)| x > 0.0)
        .map(|&(t, x)| (t, x.ln()))
        .collect();
    let n = pts.len() as f64;
    let tbar = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ybar = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.1 - ybar)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - tbar) * (p.0 - tbar)).sum();
    num / den
}

#[test]
fn criterion_10_twin_trajectories_separate_controllably() {
    // The standard cartan(2) problem, both components nudged by
    // 1e-6 cos(2 pi x): the squared L^2 gap must grow at most
    // exponentially, with a fitted log-slope that is finite and stable
    // under tau-halving.
    let g = grid();
    let matrix = validate(&cartan(2)).unwrap();
    let h = vec![field("1 + 0.5 cos(2 pi x)"); 2];
    let prob = ProblemData::new(matrix, h, 2.0).unwrap();
    let u0 = FlowState::new(
        0.0,
        vec![
            initial_component(U0_EXPRS[0]),
            initial_component(U0_EXPRS[1]),
        ],
    )
    .unwrap();
    let delta = ScalarField::from_fn(g, |x, _| 1e-6 * (2.0 * PI * x).cos());
    let deltas = vec![delta.clone(), delta];

    let mut c = Checker::new();

    // Identical twins never separate, bitwise.
    let ctl0 = StepControl {
        tau0: 1e-3,
        t_end: 0.25,
        ..StepControl::default()
    };
    let zero = vec![ScalarField::zeros(g); 2];
    let zero_gap = flow::twin_gap(&u0, &zero, &prob, &ctl0).unwrap();
    c.check(zero_gap.iter().all(|&(_, x)| x == 0.0), || {
        "identical twins drifted apart".to_string()
    });

    // Perturbed twins: fit ln X(t); the slope must not depend on the step
    // size used to measure it.
    let mut slopes = Vec::new();
    for tau in [1e-3, 5e-4] {
        let ctl = StepControl {
            tau0: tau,
            t_end: 0.25,
            ..StepControl::default()
        };
        let gaps = flow::twin_gap(&u0, &deltas, &prob, &ctl).unwrap();
        c.check(gaps[0].1 > 0.0, || "no initial separation".to_string());
        c.check(
            gaps.iter().all(|&(_, x)| x.is_finite() && x >= 0.0),
            || "separation left the finite range".to_string(),
        );
        slopes.push(fit_log_slope(&gaps));
    }
    for s in &slopes {
        c.check(s.is_finite(), || format!("log-slope {s} is not finite"));
        c.check(*s < 10.0, || {
            format!("log-slope {s:.3} exceeds any plausible Gronwall constant")
        });
    }
    let rel = (slopes[0] - slopes[1]).abs() / slopes[0].abs().max(1.0);
    c.check(rel < 0.05, || {
        format!(
            "slopes disagree across step sizes: {:.3} vs {:.3} (rel {:.3})",
            slopes[0], slopes[1], rel
        )
    });
    c.finish(
        10,
        format!(
            "squared-gap log-slopes {:.2} and {:.2} (rel diff {:.1}%), zero-delta gap identically zero",
            slopes[0],
            slopes[1],
            rel * 100.0
        ),
    );
}

#[test]
fn criterion_11_fixed_step_states_converge_at_first_order() {
    let matrix = validate(&cartan(2)).unwrap();
    let h = vec![field("1 + 0.5 cos(2 pi x)"), field("1")];
    let prob = ProblemData::new(matrix, h, 2.0).unwrap();
    let u0 = FlowState::new(
        0.0,
        vec![
            initial_component(U0_EXPRS[0]),
            initial_component(U0_EXPRS[1]),
        ],
    )
    .unwrap();
    let run = |tau: f64| {
        let ctl = StepControl {
            tau0: tau,
            tau_max: tau,
            entropy_slack: 1.0, // disable the guard so tau stays fixed
            steady_tol: 1e-300,
            t_end: 0.5,
            ..StepControl::default()
        };
        let (end, record) = flow::evolve(&u0, &prob, &ctl).unwrap();
        assert_eq!(record.termination, Termination::TEnd);
        end
    };
    let ends: Vec<FlowState> = [1e-3, 5e-4, 2.5e-4, 1.25e-4]
        .iter()
        .map(|&t| run(t))
        .collect();
    let diff = |a: &FlowState, b: &FlowState| {
        let mut s = 0.0;
        for (x, y) in a.u().iter().zip(b.u()) {
            let d = x.sub(y).l2_norm();
            s += d * d;
        }
        s.sqrt()
    };
    let d1 = diff(&ends[0], &ends[1]);
    let d2 = diff(&ends[1], &ends[2]);
    let d3 = diff(&ends[2], &ends[3]);
    let r1 = d1 / d2;
    let r2 = d2 / d3;
    let mut c = Checker::new();
    c.check(d1 > 0.0 && d2 > 0.0 && d3 > 0.0, || {
        format!("degenerate differences {d1:.3e}, {d2:.3e}, {d3:.3e}")
    });
    c.check(r1 >= 1.8, || format!("first halving ratio {r1:.3} < 1.8"));
    c.check(r2 >= 1.8, || format!("second halving ratio {r2:.3} < 1.8"));
    c.finish(
        11,
        format!("successive differences {d1:.3e} / {d2:.3e} / {d3:.3e}, ratios {r1:.2}, {r2:.2}"),
    );
}

#[test]
fn criterion_12_coupling_matrix_gate() {
    let mut c = Checker::new();

    // Accepted: identities, the Cartan family, and safe rescalings.
    for n in 1..=3 {
        c.check(validate(&identity(n)).is_ok(), || {
            format!("identity({n}) rejected")
        });
    }
    for n in 1..=50 {
        match validate(&cartan(n)) {
            Ok(m) => {
                c.check(m.beta() > 0.0 && m.beta() < 4.0 * PI, || {
                    format!("cartan({n}): beta = {} outside (0, 4 pi)", m.beta())
                });
                c.check(m.lambda() > 1.0 / EIGENVALUE_BOUND, || {
                    format!("cartan({n}): lambda = {} at or below 1/(8 pi)", m.lambda())
                });
            }
            Err(e) => c.check(false, || format!("cartan({n}) rejected: {e}")),
        }
    }
    for n in [1, 2, 3, 10] {
        c.check(validate(&(cartan(n) * 0.9)).is_ok(), || {
            format!("0.9 cartan({n}) rejected")
        });
    }

    // The spectral boundary is strict: eigenvalues below 8 pi pass, an
    // eigenvalue at exactly 8 pi does not.
    c.check(validate(&(identity(1) * 25.0)).is_ok(), || {
        "eigenvalue 25.0 rejected".to_string()
    });
    let boundary =
        nalgebra::DMatrix::from_row_slice(2, 2, &[EIGENVALUE_BOUND, 0.0, 0.0, 1.0]);
    c.check(
        matches!(
            validate(&boundary),
            Err(MatrixError::EigenvalueTooLarge { .. })
        ),
        || "eigenvalue exactly 8 pi accepted".to_string(),
    );
    c.check(
        matches!(
            validate(&(identity(1) * 25.2)),
            Err(MatrixError::EigenvalueTooLarge { .. })
        ),
        || "eigenvalue 25.2 accepted".to_string(),
    );

    // Rejections: asymmetry, indefiniteness, non-square, non-finite.
    let mut asym = cartan(2);
    asym[(0, 1)] = -0.5;
    c.check(
        matches!(validate(&asym), Err(MatrixError::AsymmetricMatrix { .. })),
        || "asymmetric matrix accepted".to_string(),
    );
    let indef = nalgebra::DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
    c.check(
        matches!(validate(&indef), Err(MatrixError::NotPositiveDefinite { .. })),
        || "indefinite matrix accepted".to_string(),
    );
    let rect = nalgebra::DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
    c.check(
        matches!(validate(&rect), Err(MatrixError::NotSquare { .. })),
        || "non-square matrix accepted".to_string(),
    );
    let mut inf = identity(2);
    inf[(1, 1)] = f64::INFINITY;
    c.check(
        matches!(validate(&inf), Err(MatrixError::NonFiniteEntry { .. })),
        || "non-finite matrix accepted".to_string(),
    );

    c.finish(
        12,
        "identity/cartan(1..50)/rescalings accepted with beta in (0, 4 pi); \
         asymmetric, indefinite, non-square, non-finite, and large-eigenvalue inputs rejected"
            .to_string(),
    );
}

#[test]
fn criterion_13_moser_trudinger_deficit_examples() {
    let g = grid();
    let mut c = Checker::new();

    // The recorded deficit stays finite along every suite trajectory.
    let mut run_max = f64::NEG_INFINITY;
    for run in suite() {
        for row in &run.record.rows {
            c.check(row.mt_deficit_max.is_finite(), || {
                format!(
                    "{}: non-finite deficit at t = {:.3e}",
                    run.label, row.t
                )
            });
            run_max = run_max.max(row.mt_deficit_max);
        }
    }

    // Constants give exactly zero.
    let flat = ScalarField::constant(g, 2.2);
    let d0 = mt_deficit(&flat, 0.7, 2.0).unwrap();
    c.check(d0 == 0.0, || format!("constant deficit {d0:.3e} != 0"));

    // p = 0 gives exactly zero for any field.
    let wave = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos());
    let dp0 = mt_deficit(&wave, 0.0, 2.0).unwrap();
    c.check(dp0 == 0.0, || format!("p = 0 deficit {dp0:.3e} != 0"));

    // cos(2 pi x), p = 1/2, beta = pi: log I_0(1) - pi/2.
    let d = mt_deficit(&wave, 0.5, PI).unwrap();
    let expected = -1.3348819682877180;
    c.check((d - expected).abs() < 1e-9, || {
        format!("deficit {d:.12} vs log I_0(1) - pi/2 = {expected:.12}")
    });

    c.finish(
        13,
        format!(
            "suite-wide max deficit {run_max:.6e}; examples: 0 (constant), 0 (p = 0), {d:.10} vs {expected:.10}"
        ),
    );
}

#[test]
fn standard_suite_sanity() {
    // Not a numbered criterion: the shared suite itself must have run all
    // twelve configurations to completion.
    let runs = suite();
    assert_eq!(runs.len(), 12);
    for run in runs {
        assert!(
            matches!(
                run.record.termination,
                Termination::TEnd | Termination::Steady
            ),
            "{}: {:?}",
            run.label,
            run.record.termination
        );
        assert_eq!(run.record.rows.len(), run.extras.len());
        assert!(mean(&run.prob.h()[0]).is_finite());
    }
}
