//! The entropy-monotone flow
//!
//!   du_i/dt = lap u_i + sum_j a_ij (h_j e^{u_j} / int h_j e^{u_j} - 1)
//!
//! integrated by an IMEX Euler step: the nonlinearity is frozen at the
//! current state and the Laplacian is absorbed implicitly in Fourier space,
//! so the stiff part never constrains the step size. The step controller
//! accepts a candidate only if the entropy did not increase past a roundoff
//! slack, halving tau on rejection and growing it after sustained acceptance.
//! Every accepted step is projected back onto mean-zero components, which the
//! continuous flow preserves exactly.

use crate::functionals::{
    check_state, dissipation, entropy, mt_deficit, FlowState, FunctionalError, ProblemData,
};
use crate::torusfield::{
    implicit_heat, laplacian, mean, pairwise_sum, project_mean_zero, FieldError, ScalarField,
};
use thiserror::Error;

/// Step controller parameters. `validate` pins the admissible ranges.
#[derive(Clone, Copy, Debug)]
pub struct StepControl {
    /// Initial step size.
    pub tau0: f64,
    /// A rejection cascade that would push tau below this aborts the run.
    pub tau_min: f64,
    /// Cap for the growth rule.
    pub tau_max: f64,
    /// Accept a step if K_new <= K_old + entropy_slack.
    pub entropy_slack: f64,
    /// Declare a steady state when sum_i ||du_i/dt||_{L^2} drops below this.
    pub steady_tol: f64,
    /// Integrate to this time unless steady first.
    pub t_end: f64,
    /// Hard cap on accepted steps.
    pub max_steps: u64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            tau0: 1e-3,
            tau_min: 1e-12,
            tau_max: 5e-2,
            entropy_slack: 1e-8,
            steady_tol: 1e-9,
            t_end: 10.0,
            max_steps: 1_000_000,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |msg: &str| Err(FlowError::InvalidControl(msg.to_string()));
        let fields = [
            self.tau0,
            self.tau_min,
            self.tau_max,
            self.entropy_slack,
            self.steady_tol,
            self.t_end,
        ];
        if fields.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        if !(self.tau_min > 0.0) {
            return bad("tau_min must be positive");
        }
        if self.tau0 < self.tau_min || self.tau0 > self.tau_max {
            return bad("need tau_min <= tau0 <= tau_max");
        }
        if self.entropy_slack < 0.0 {
            return bad("entropy_slack must be nonnegative");
        }
        if self.steady_tol < 0.0 {
            return bad("steady_tol must be nonnegative");
        }
        if !(self.t_end > 0.0) {
            return bad("t_end must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        Ok(())
    }
}

/// Why the run stopped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The rate norm fell below `steady_tol`.
    Steady,
    /// Reached `t_end`.
    TEnd,
    /// Hit `max_steps` first.
    MaxSteps,
}

/// Diagnostics recorded at one accepted state. `tau` is the step that
/// produced the state (0 for the initial row) and `dissipation` is the
/// quadratic form on the realized difference quotients, so
/// (K_prev - k) / tau tracks it to first order in tau.
#[derive(Clone, Debug)]
pub struct TrajectoryRow {
    pub t: f64,
    pub tau: f64,
    pub k: f64,
    pub dissipation: f64,
    pub grad_energy: f64,
    pub residual_l2: f64,
    pub residual_linf: f64,
    pub entropy_gap: f64,
    /// max_j of the Moser--Trudinger deficit at p = 1/2, beta from the matrix.
    pub mt_deficit_max: f64,
    pub sup_norms: Vec<f64>,
    pub means: Vec<f64>,
}

/// A completed run: one row per accepted state (the first is the initial
/// state), plus why it stopped and how many candidates were rejected.
#[derive(Clone, Debug)]
pub struct TrajectoryRecord {
    pub rows: Vec<TrajectoryRow>,
    pub termination: Termination,
    pub accepted_steps: u64,
    pub rejections: u64,
}

/// What the integrator managed to do before failing; enough for a caller to
/// write a failure report and the offending state.
#[derive(Debug)]
pub struct FlowFailure {
    /// Last accepted state.
    pub state: FlowState,
    pub rows: Vec<TrajectoryRow>,
    pub rejections: u64,
    /// Step size at the point of failure.
    pub tau: f64,
    pub detail: String,
}

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("invalid step control: {0}")]
    InvalidControl(String),
    #[error(transparent)]
    Setup(#[from] FunctionalError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(
        "step size fell below tau_min at t = {:.6e} after {} rejections",
        .0.state.t, .0.rejections
    )]
    StepFloor(Box<FlowFailure>),
    #[error("flow broke down at t = {:.6e}: {}", .0.state.t, .0.detail)]
    Breakdown(Box<FlowFailure>),
}

impl FlowError {
    /// The failure payload, when the error carries one.
    pub fn failure(&self) -> Option<&FlowFailure> {
        match self {
            FlowError::StepFloor(f) | FlowError::Breakdown(f) => Some(f),
            _ => None,
        }
    }
}

/// h_j e^{u_j} / int h_j e^{u_j}: the normalized density of one component.
/// Shifted by max(u) before exponentiating, so it never overflows for finite
/// input; mean 1 up to roundoff by construction.
pub(crate) fn normalized_weight(
    u: &ScalarField,
    h: &ScalarField,
) -> Result<ScalarField, FieldError> {
    let s = u.max_value();
    let terms: Vec<f64> = h
        .values()
        .iter()
        .zip(u.values())
        .map(|(hv, uv)| hv * (uv - s).exp())
        .collect();
    let mu = pairwise_sum(&terms) / terms.len() as f64;
    if !(mu > 0.0) {
        return Err(FieldError::ZeroMass);
    }
    ScalarField::from_values(u.grid(), terms.into_iter().map(|t| t / mu).collect())
}

/// The nonlinear part of the velocity: F_i = sum_j a_ij (w_j - 1) with
/// w_j the normalized densities. Each w_j - 1 has mean O(roundoff), so the
/// velocity cannot push the components off their mean-zero slice.
pub fn rhs(state: &FlowState, prob: &ProblemData) -> Result<Vec<ScalarField>, FlowError> {
    check_state(state, prob)?;
    let n = prob.n();
    let a = prob.matrix().a();
    let mut wm1 = Vec::with_capacity(n);
    for j in 0..n {
        let w = normalized_weight(&state.u()[j], &prob.h()[j])?;
        wm1.push(w.map(|v| v - 1.0));
    }
    Ok((0..n)
        .map(|i| {
            let mut acc = ScalarField::zeros(prob.grid());
            for (j, w) in wm1.iter().enumerate() {
                let aij = a[(i, j)];
                if aij != 0.0 {
                    acc = acc.add_scaled(w, aij);
                }
            }
            acc
        })
        .collect())
}

/// One IMEX Euler step from a state whose velocity is already known:
/// solve (Id - tau lap) u_new = u + tau F, then project back to mean zero.
pub fn advance(state: &FlowState, rhs_fields: &[ScalarField], tau: f64) -> FlowState {
    let u_new = state
        .u()
        .iter()
        .zip(rhs_fields)
        .map(|(u, f)| project_mean_zero(&implicit_heat(&u.add_scaled(f, tau), tau)))
        .collect();
    FlowState::new_unchecked(state.t + tau, u_new)
}

/// Convenience step: velocity evaluation followed by [`advance`].
pub fn step_imex(state: &FlowState, prob: &ProblemData, tau: f64) -> Result<FlowState, FlowError> {
    let f = rhs(state, prob)?;
    Ok(advance(state, &f, tau))
}

/// Steady-state defect fields R_i = lap u_i + F_i with their L^2 and sup
/// norms. The same evaluation the Newton refiner drives to zero.
pub struct ResidualReport {
    pub fields: Vec<ScalarField>,
    pub l2: f64,
    pub linf: f64,
}

/// Residual from a precomputed velocity (shares work with the integrator).
fn residual_from_rhs(state: &FlowState, rhs_fields: &[ScalarField]) -> ResidualReport {
    let fields: Vec<ScalarField> = state
        .u()
        .iter()
        .zip(rhs_fields)
        .map(|(u, f)| laplacian(u).add_scaled(f, 1.0))
        .collect();
    let npts = state.grid().len() as f64;
    let sq: Vec<f64> = fields
        .iter()
        .map(|r| {
            let terms: Vec<f64> = r.values().iter().map(|v| v * v).collect();
            pairwise_sum(&terms) / npts
        })
        .collect();
    let l2 = pairwise_sum(&sq).sqrt();
    let linf = fields.iter().map(|r| r.linf_norm()).fold(0.0, f64::max);
    ResidualReport { fields, l2, linf }
}

/// Evaluate the steady-state residual of a state.
pub fn residual(state: &FlowState, prob: &ProblemData) -> Result<ResidualReport, FlowError> {
    let f = rhs(state, prob)?;
    Ok(residual_from_rhs(state, &f))
}

fn diagnostics_row(
    state: &FlowState,
    prob: &ProblemData,
    tau: f64,
    dissipation_val: f64,
    rhs_fields: &[ScalarField],
) -> Result<TrajectoryRow, FunctionalError> {
    let rep = entropy(state, prob)?;
    let res = residual_from_rhs(state, rhs_fields);
    let beta = prob.matrix().beta();
    let mut deficit_max = f64::NEG_INFINITY;
    for u in state.u() {
        deficit_max = deficit_max.max(mt_deficit(u, 0.5, beta)?);
    }
    Ok(TrajectoryRow {
        t: state.t,
        tau,
        k: rep.k,
        dissipation: dissipation_val,
        grad_energy: rep.grad_energy,
        residual_l2: res.l2,
        residual_linf: res.linf,
        entropy_gap: rep.entropy_gap,
        mt_deficit_max: deficit_max,
        sup_norms: rep.sup_norms,
        means: state.u().iter().map(mean).collect(),
    })
}

/// Integrate the flow from `u0`, calling `observer` with every accepted
/// state and its freshly recorded row (the initial state included).
pub fn evolve_with(
    u0: &FlowState,
    prob: &ProblemData,
    ctl: &StepControl,
    mut observer: impl FnMut(&FlowState, &TrajectoryRow),
) -> Result<(FlowState, TrajectoryRecord), FlowError> {
    ctl.validate()?;
    u0.validate()?;
    check_state(u0, prob)?;

    let mut state = u0.clone();
    state.t = 0.0;
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let mut rejections: u64 = 0;
    let mut tau = ctl.tau0;

    let breakdown = |state: FlowState, rows: Vec<TrajectoryRow>, rej, tau, detail: String| {
        FlowError::Breakdown(Box::new(FlowFailure {
            state,
            rows,
            rejections: rej,
            tau,
            detail,
        }))
    };

    let mut rhs_fields = match rhs(&state, prob) {
        Ok(f) => f,
        Err(e) => return Err(breakdown(state, rows, rejections, tau, e.to_string())),
    };
    let row0 = match diagnostics_row(&state, prob, 0.0, 0.0, &rhs_fields) {
        Ok(r) => r,
        Err(e) => return Err(breakdown(state, rows, rejections, tau, e.to_string())),
    };
    let mut k_old = row0.k;
    if !k_old.is_finite() {
        let detail = format!("initial entropy is not finite: {k_old}");
        return Err(breakdown(state, rows, rejections, tau, detail));
    }
    observer(&state, &row0);
    rows.push(row0);

    let mut steps: u64 = 0;
    let mut consec_accepts: u32 = 0;
    let t_tol = 1e-12 * ctl.t_end.max(1.0);
    let termination = loop {
        if state.t >= ctl.t_end - t_tol {
            break Termination::TEnd;
        }
        if steps >= ctl.max_steps {
            break Termination::MaxSteps;
        }

        // Candidate loop: the velocity at the accepted state is reused
        // across rejections; only tau changes.
        let (candidate, tau_eff, k_new) = loop {
            let tau_eff = tau.min(ctl.t_end - state.t);
            let candidate = advance(&state, &rhs_fields, tau_eff);
            let k_new = entropy(&candidate, prob).map(|rep| rep.k);
            match k_new {
                Ok(k) if k.is_finite() && k <= k_old + ctl.entropy_slack => {
                    break (candidate, tau_eff, k);
                }
                _ => {
                    rejections += 1;
                    consec_accepts = 0;
                    tau *= 0.5;
                    if tau < ctl.tau_min {
                        return Err(FlowError::StepFloor(Box::new(FlowFailure {
                            state,
                            rows,
                            rejections,
                            tau,
                            detail: "entropy guard rejected every admissible step".into(),
                        })));
                    }
                }
            }
        };

        let rates: Vec<ScalarField> = candidate
            .u()
            .iter()
            .zip(state.u())
            .map(|(new, old)| new.sub(old).scale(1.0 / tau_eff))
            .collect();
        let dissipation_val = match dissipation(&rates, prob.matrix()) {
            Ok(d) => d,
            Err(e) => return Err(breakdown(state, rows, rejections, tau, e.to_string())),
        };
        let steady_norm = pairwise_sum(&rates.iter().map(|r| r.l2_norm()).collect::<Vec<_>>());

        state = candidate;
        steps += 1;
        k_old = k_new;
        rhs_fields = match rhs(&state, prob) {
            Ok(f) => f,
            Err(e) => return Err(breakdown(state, rows, rejections, tau, e.to_string())),
        };
        let row = match diagnostics_row(&state, prob, tau_eff, dissipation_val, &rhs_fields) {
            Ok(r) => r,
            Err(e) => return Err(breakdown(state, rows, rejections, tau, e.to_string())),
        };
        observer(&state, &row);
        rows.push(row);

        consec_accepts += 1;
        if consec_accepts >= 10 {
            tau = (1.5 * tau).min(ctl.tau_max);
            consec_accepts = 0;
        }

        if steady_norm < ctl.steady_tol {
            break Termination::Steady;
        }
    };

    Ok((
        state,
        TrajectoryRecord {
            rows,
            termination,
            accepted_steps: steps,
            rejections,
        },
    ))
}

/// [`evolve_with`] without an observer.
pub fn evolve(
    u0: &FlowState,
    prob: &ProblemData,
    ctl: &StepControl,
) -> Result<(FlowState, TrajectoryRecord), FlowError> {
    evolve_with(u0, prob, ctl, |_, _| {})
}

/// Run the flow twice from u0 and u0 + delta with the same fixed step
/// ctl.tau0 (no adaptivity, no entropy guard), recording the squared L^2
/// separation X(t) = sum_i ||u_i - v_i||^2 at every step, t = 0 included.
/// delta identically zero gives X identically zero, bitwise: both twins then
/// run through the same arithmetic.
pub fn twin_gap(
    u0: &FlowState,
    delta: &[ScalarField],
    prob: &ProblemData,
    ctl: &StepControl,
) -> Result<Vec<(f64, f64)>, FlowError> {
    ctl.validate()?;
    check_state(u0, prob)?;
    if delta.len() != u0.n() {
        return Err(FlowError::Setup(FunctionalError::ComponentCount {
            expected: u0.n(),
            got: delta.len(),
        }));
    }
    let mut a = FlowState::new_unchecked(0.0, u0.u().iter().map(project_mean_zero).collect());
    let zero_delta = delta
        .iter()
        .all(|d| d.values().iter().all(|&v| v == 0.0));
    let mut b = if zero_delta {
        a.clone()
    } else {
        FlowState::new_unchecked(
            0.0,
            u0.u()
                .iter()
                .zip(delta)
                .map(|(u, d)| project_mean_zero(&u.add_scaled(d, 1.0)))
                .collect(),
        )
    };

    let sep = |a: &FlowState, b: &FlowState| {
        let sq: Vec<f64> = a
            .u()
            .iter()
            .zip(b.u())
            .map(|(x, y)| {
                let n = x.sub(y).l2_norm();
                n * n
            })
            .collect();
        pairwise_sum(&sq)
    };

    let tau = ctl.tau0;
    let mut out = vec![(0.0, sep(&a, &b))];
    let t_tol = 1e-12 * ctl.t_end.max(1.0);
    while a.t < ctl.t_end - t_tol {
        let tau_eff = tau.min(ctl.t_end - a.t);
        let fa = rhs(&a, prob)?;
        let fb = rhs(&b, prob)?;
        a = advance(&a, &fa, tau_eff);
        b = advance(&b, &fb, tau_eff);
        b.t = a.t;
        out.push((a.t, sep(&a, &b)));
        if out.len() as u64 > ctl.max_steps {
            break;
        }
    }
    Ok(out)
}
