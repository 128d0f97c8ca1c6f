//! Newton refinement of near-steady states and two-grid certification.
//!
//! A steady state solves G(u) = 0 with G_i(u) = lap u_i + F_i(u), the same
//! residual the flow monitors. The linearization at u is
//!
//!   (J v)_i = lap v_i + sum_j a_ij w_j (v_j - int w_j v_j),
//!
//! w_j the normalized densities; it maps the mean-zero slice into itself.
//! The inner solver is GMRES on the Laplacian-preconditioned system (the
//! preconditioner is exact for the stiff half, so iteration counts stay flat
//! in the resolution), wrapped in a damped Newton outer loop. Certification
//! re-evaluates the residual of a candidate on its own grid and on the
//! doubled grid, with the problem data transferred spectrally.

use crate::flow::{self, normalized_weight, FlowError};
use crate::functionals::{check_state, FlowState, FunctionalError, ProblemData};
use crate::torusfield::{
    inv_laplacian, laplacian, mean, pairwise_sum, project_mean_zero, upsample2, ScalarField,
};
use thiserror::Error;

#[derive(Clone, Copy, Debug)]
pub struct NewtonControl {
    pub max_iters: usize,
    /// Converged when the residual sup norm is at or below this.
    pub tol_linf: f64,
}

impl Default for NewtonControl {
    fn default() -> Self {
        NewtonControl {
            max_iters: 30,
            tol_linf: 1e-11,
        }
    }
}

#[derive(Debug, Error)]
pub enum SteadyError {
    #[error("invalid newton control: {0}")]
    InvalidControl(String),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Functional(#[from] FunctionalError),
    #[error("no damping produced descent at iteration {iter} (residual {res:.3e})")]
    NoDescent { iter: usize, res: f64 },
    #[error("linearized solve stagnated: relative residual {rel:.3e} after {iters} products")]
    SingularLinearization { rel: f64, iters: usize },
}

/// One row per Newton iterate: the residual norms there, and the damping
/// factor of the step taken away from it (0 for the final iterate).
#[derive(Clone, Copy, Debug)]
pub struct NewtonIterRow {
    pub res_l2: f64,
    pub res_linf: f64,
    pub damping: f64,
}

#[derive(Debug)]
pub struct NewtonOutcome {
    pub state: FlowState,
    /// Number of updates applied; 0 if the input already met the tolerance.
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<NewtonIterRow>,
}

// Stacked-vector helpers: a Newton unknown is one field per component, the
// inner product is the L^2 one summed over components.

fn dot(a: &[ScalarField], b: &[ScalarField]) -> f64 {
    let terms: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let n = x.grid().len() as f64;
            let prods: Vec<f64> = x.values().iter().zip(y.values()).map(|(p, q)| p * q).collect();
            pairwise_sum(&prods) / n
        })
        .collect();
    pairwise_sum(&terms)
}

fn norm(a: &[ScalarField]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [ScalarField], x: &[ScalarField], s: f64) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi = yi.add_scaled(xi, s);
    }
}

const GMRES_RESTART: usize = 30;
const GMRES_MAX_PRODUCTS: usize = 240;
const GMRES_RTOL: f64 = 1e-10;
/// A Newton direction whose preconditioned relative residual stays above
/// this is treated as a singular linearization rather than used.
const GMRES_ACCEPT: f64 = 1e-3;

/// Restarted GMRES with modified Gram-Schmidt and Givens rotations, starting
/// from zero. Returns the solution and the final relative residual.
fn gmres(
    apply: &dyn Fn(&[ScalarField]) -> Vec<ScalarField>,
    b: &[ScalarField],
) -> Result<Vec<ScalarField>, (f64, usize)> {
    let bnorm = norm(b);
    let zeros: Vec<ScalarField> = b.iter().map(|f| ScalarField::zeros(f.grid())).collect();
    if bnorm == 0.0 {
        return Ok(zeros);
    }
    let mut x = zeros;
    let mut products = 0usize;
    let mut rel = 1.0;

    while products < GMRES_MAX_PRODUCTS {
        // r = b - A x
        let mut r = b.to_vec();
        if products > 0 {
            let ax = apply(&x);
            products += 1;
            axpy(&mut r, &ax, -1.0);
        }
        let beta = norm(&r);
        rel = beta / bnorm;
        if rel <= GMRES_RTOL {
            return Ok(x);
        }

        let m = GMRES_RESTART;
        let mut v: Vec<Vec<ScalarField>> = Vec::with_capacity(m + 1);
        v.push(r.iter().map(|f| f.scale(1.0 / beta)).collect());
        let mut h = vec![[0.0f64; GMRES_RESTART]; m + 1];
        let mut cs = [0.0f64; GMRES_RESTART];
        let mut sn = [0.0f64; GMRES_RESTART];
        let mut g = vec![0.0f64; m + 1];
        g[0] = beta;
        let mut cols = 0usize;

        for k in 0..m {
            let mut w = apply(&v[k]);
            products += 1;
            for i in 0..=k {
                let hik = dot(&w, &v[i]);
                h[i][k] = hik;
                axpy(&mut w, &v[i], -hik);
            }
            let wn = norm(&w);
            h[k + 1][k] = wn;
            cols = k + 1;

            // Rotate the new column into upper-triangular form.
            for i in 0..k {
                let t = cs[i] * h[i][k] + sn[i] * h[i + 1][k];
                h[i + 1][k] = -sn[i] * h[i][k] + cs[i] * h[i + 1][k];
                h[i][k] = t;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            rel = g[k + 1].abs() / bnorm;

            let happy = wn < 1e-300;
            if rel <= GMRES_RTOL || happy || products >= GMRES_MAX_PRODUCTS {
                break;
            }
            v.push(w.iter().map(|f| f.scale(1.0 / wn)).collect());
        }

        // Back substitution on the rotated Hessenberg system.
        let mut y = vec![0.0f64; cols];
        for i in (0..cols).rev() {
            let mut s = g[i];
            for j in i + 1..cols {
                s -= h[i][j] * y[j];
            }
            if h[i][i] == 0.0 {
                return Err((rel, products));
            }
            y[i] = s / h[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            axpy(&mut x, &v[j], *yj);
        }
        if rel <= GMRES_RTOL {
            return Ok(x);
        }
    }
    if rel <= GMRES_ACCEPT {
        Ok(x)
    } else {
        Err((rel, products))
    }
}

/// Apply the linearization at the current densities and precondition with
/// the deflated inverse Laplacian, projecting back onto mean zero.
fn preconditioned_jacobian(
    prob: &ProblemData,
    w: &[ScalarField],
    v: &[ScalarField],
) -> Vec<ScalarField> {
    let n = prob.n();
    let a = prob.matrix().a();
    let npts = prob.grid().len() as f64;
    // c_j = int w_j v_j
    let c: Vec<f64> = w
        .iter()
        .zip(v)
        .map(|(wj, vj)| {
            let prods: Vec<f64> = wj
                .values()
                .iter()
                .zip(vj.values())
                .map(|(p, q)| p * q)
                .collect();
            pairwise_sum(&prods) / npts
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut jv = laplacian(&v[i]);
            for j in 0..n {
                let aij = a[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                let term = ScalarField::from_values(
                    prob.grid(),
                    w[j].values()
                        .iter()
                        .zip(v[j].values())
                        .map(|(wv, vv)| wv * (vv - c[j]))
                        .collect(),
                )
                .expect("length preserved");
                jv = jv.add_scaled(&term, aij);
            }
            project_mean_zero(&inv_laplacian(&jv))
        })
        .collect()
}

/// Damped Newton iteration on the steady-state residual. The convergence
/// check runs before the first update, so a state already at tolerance
/// returns unchanged with `iterations == 0`.
pub fn newton_refine(
    state: &FlowState,
    prob: &ProblemData,
    ctl: &NewtonControl,
) -> Result<NewtonOutcome, SteadyError> {
    if ctl.max_iters == 0 {
        return Err(SteadyError::InvalidControl("max_iters must be >= 1".into()));
    }
    if !(ctl.tol_linf > 0.0) {
        return Err(SteadyError::InvalidControl(
            "tol_linf must be positive".into(),
        ));
    }
    check_state(state, prob)?;

    let mut current = FlowState::new_unchecked(
        state.t,
        state.u().iter().map(project_mean_zero).collect(),
    );
    let mut history: Vec<NewtonIterRow> = Vec::new();
    let mut converged = false;

    for iter in 0..=ctl.max_iters {
        let res = flow::residual(&current, prob)?;
        if res.linf <= ctl.tol_linf {
            history.push(NewtonIterRow {
                res_l2: res.l2,
                res_linf: res.linf,
                damping: 0.0,
            });
            converged = true;
            break;
        }
        if iter == ctl.max_iters {
            history.push(NewtonIterRow {
                res_l2: res.l2,
                res_linf: res.linf,
                damping: 0.0,
            });
            break;
        }

        let w: Vec<ScalarField> = current
            .u()
            .iter()
            .zip(prob.h())
            .map(|(u, h)| normalized_weight(u, h))
            .collect::<Result<_, _>>()
            .map_err(FlowError::from)?;

        // Solve J d = -G in the preconditioned metric.
        let b: Vec<ScalarField> = res
            .fields
            .iter()
            .map(|r| project_mean_zero(&inv_laplacian(&r.scale(-1.0))))
            .collect();
        let apply = |v: &[ScalarField]| preconditioned_jacobian(prob, &w, v);
        let d = gmres(&apply, &b)
            .map_err(|(rel, iters)| SteadyError::SingularLinearization { rel, iters })?;

        // Backtracking line search on ||G||_{L^2}.
        let mut alpha = 1.0f64;
        let mut accepted = None;
        for _ in 0..=20 {
            let cand = FlowState::new_unchecked(
                current.t,
                current
                    .u()
                    .iter()
                    .zip(&d)
                    .map(|(u, di)| project_mean_zero(&u.add_scaled(di, alpha)))
                    .collect(),
            );
            if cand.u().iter().all(|f| f.is_finite()) {
                if let Ok(res_new) = flow::residual(&cand, prob) {
                    if res_new.l2 < res.l2 {
                        accepted = Some((cand, alpha));
                        break;
                    }
                }
            }
            alpha *= 0.5;
        }
        let (next, used) = accepted.ok_or(SteadyError::NoDescent {
            iter,
            res: res.l2,
        })?;
        history.push(NewtonIterRow {
            res_l2: res.l2,
            res_linf: res.linf,
            damping: used,
        });
        current = next;
    }

    Ok(NewtonOutcome {
        state: current,
        iterations: history.len().saturating_sub(1),
        converged,
        history,
    })
}

/// Residual norms of one candidate at one resolution.
#[derive(Clone, Debug, serde::Serialize)]
pub struct ResolutionCheck {
    pub grid_points: usize,
    pub residual_l2: f64,
    pub residual_linf: f64,
    pub mean_defects: Vec<f64>,
}

/// Two-grid certificate: the same state checked on its native grid and,
/// after spectral transfer of state and weights, on the doubled grid.
#[derive(Clone, Debug, serde::Serialize)]
pub struct CertifyReport {
    pub tol: f64,
    pub native: ResolutionCheck,
    pub refined: ResolutionCheck,
    pub pass: bool,
}

fn check_at(state: &FlowState, prob: &ProblemData, tol: f64) -> Result<ResolutionCheck, SteadyError> {
    let res = flow::residual(state, prob)?;
    let _ = tol;
    Ok(ResolutionCheck {
        grid_points: state.grid().len(),
        residual_l2: res.l2,
        residual_linf: res.linf,
        mean_defects: state.u().iter().map(mean).collect(),
    })
}

/// Certify a steady-state candidate: its residual must meet `tol` in sup
/// norm both on its own grid and on the doubled grid. Weights are carried to
/// the fine grid by trigonometric interpolation, so they must stay
/// nonnegative there; weights too rough for that are a certification error.
pub fn certify(
    state: &FlowState,
    prob: &ProblemData,
    tol: f64,
) -> Result<CertifyReport, SteadyError> {
    if !(tol > 0.0) {
        return Err(SteadyError::InvalidControl("tol must be positive".into()));
    }
    check_state(state, prob)?;
    let native = check_at(state, prob, tol)?;

    let h_fine: Vec<ScalarField> = prob.h().iter().map(upsample2).collect();
    let prob_fine = ProblemData::new(prob.matrix().clone(), h_fine, prob.q())?;
    let state_fine = FlowState::new_unchecked(state.t, state.u().iter().map(upsample2).collect());
    let refined = check_at(&state_fine, &prob_fine, tol)?;

    let pass = native.residual_linf <= tol && refined.residual_linf <= tol;
    Ok(CertifyReport {
        tol,
        native,
        refined,
        pass,
    })
}
