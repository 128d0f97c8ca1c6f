//! The entropy functional and its companion quantities.
//!
//! For a state u = (u_1, .., u_n) and problem data (A, h_1, .., h_n),
//!
//!   K(u) = 1/2 sum_ij a^{ij} int grad u_i . grad u_j - sum_j log int h_j e^{u_j},
//!
//! which the flow drives downward. The other exports are the quadratic
//! dissipation form (minus the entropy's time derivative along the flow), the
//! Moser--Trudinger deficit, the entropy gap against the h-sup bound, and the
//! Hoelder lower bound on the masses int h_j e^{u_j}. All of them are plain
//! quadrature/Parseval evaluations of the same discrete state, so identities
//! between them hold to roundoff, not just to discretization error.

use crate::coeffs::CoefficientMatrix;
use crate::torusfield::{
    self, dirichlet_pairing_spectra, exp_integral, exp_integral_unit, grad_norm_sq, mean,
    pairwise_sum, FieldError, Grid, ScalarField,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FunctionalError {
    #[error("problem has {expected} components, got {got}")]
    ComponentCount { expected: usize, got: usize },
    #[error("state is empty")]
    EmptyState,
    #[error("component {j} lives on a different grid")]
    ComponentGridMismatch { j: usize },
    #[error("weight h_{j} has an entry {min:.3e} below -1e-14")]
    NegativeWeight { j: usize, min: f64 },
    #[error("weight h_{j} is identically zero")]
    ZeroWeight { j: usize },
    #[error("weight h_{j} has non-finite entries")]
    NonFiniteWeight { j: usize },
    #[error("Hoelder exponent q must exceed 1, got {0}")]
    BadExponent(f64),
    #[error("Moser--Trudinger beta must be positive, got {0}")]
    BadBeta(f64),
    #[error("component {j} of the state is not finite")]
    NonFinite { j: usize },
    #[error("component {j} has mean {mean:.3e}, beyond the 1e-11 drift budget")]
    MeanDrift { j: usize, mean: f64 },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Validated problem data: coupling matrix, weights, and the per-component
/// constants derived from them.
#[derive(Clone, Debug)]
pub struct ProblemData {
    matrix: CoefficientMatrix,
    h: Vec<ScalarField>,
    grid: Grid,
    q: f64,
    h_max: Vec<f64>,
    h_root_mass: Vec<f64>,
}

impl ProblemData {
    /// Checks the component count against the matrix, grid consistency,
    /// pointwise nonnegativity (to the -1e-14 roundoff budget), that no
    /// weight vanishes identically, and q > 1; then freezes h_max_j and the
    /// Hoelder root masses int h_j^{1/q}.
    pub fn new(
        matrix: CoefficientMatrix,
        h: Vec<ScalarField>,
        q: f64,
    ) -> Result<Self, FunctionalError> {
        if h.len() != matrix.n() {
            return Err(FunctionalError::ComponentCount {
                expected: matrix.n(),
                got: h.len(),
            });
        }
        if !(q > 1.0) {
            return Err(FunctionalError::BadExponent(q));
        }
        let grid = h[0].grid();
        let mut h_max = Vec::with_capacity(h.len());
        let mut h_root_mass = Vec::with_capacity(h.len());
        for (j, hj) in h.iter().enumerate() {
            if hj.grid() != grid {
                return Err(FunctionalError::ComponentGridMismatch { j });
            }
            if !hj.is_finite() {
                return Err(FunctionalError::NonFiniteWeight { j });
            }
            let min = hj.min_value();
            if min < -1e-14 {
                return Err(FunctionalError::NegativeWeight { j, min });
            }
            let max = hj.max_value();
            if !(max > 0.0) {
                return Err(FunctionalError::ZeroWeight { j });
            }
            h_max.push(max);
            h_root_mass.push(mean(&hj.map(|v| v.max(0.0).powf(1.0 / q))));
        }
        Ok(ProblemData {
            matrix,
            h,
            grid,
            q,
            h_max,
            h_root_mass,
        })
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn matrix(&self) -> &CoefficientMatrix {
        &self.matrix
    }

    pub fn h(&self) -> &[ScalarField] {
        &self.h
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    /// Grid maxima of the weights; the sharp constants in the entropy gap.
    pub fn h_max(&self) -> &[f64] {
        &self.h_max
    }

    /// int h_j^{1/q}, the Hoelder root masses.
    pub fn h_root_mass(&self) -> &[f64] {
        &self.h_root_mass
    }

    /// Same weights and matrix under a different Hoelder exponent.
    pub fn with_exponent(&self, q: f64) -> Result<Self, FunctionalError> {
        ProblemData::new(self.matrix.clone(), self.h.clone(), q)
    }
}

/// A point on a flow trajectory: time and the mean-zero components.
#[derive(Clone, Debug)]
pub struct FlowState {
    pub t: f64,
    u: Vec<ScalarField>,
}

impl FlowState {
    /// Validating constructor: components nonempty, on one grid, finite,
    /// with means inside the 1e-11 drift budget.
    pub fn new(t: f64, u: Vec<ScalarField>) -> Result<Self, FunctionalError> {
        let state = FlowState { t, u };
        state.validate()?;
        Ok(state)
    }

    /// Skip validation; for code paths (the integrator) that maintain the
    /// invariants themselves.
    pub fn new_unchecked(t: f64, u: Vec<ScalarField>) -> Self {
        FlowState { t, u }
    }

    pub fn validate(&self) -> Result<(), FunctionalError> {
        if self.u.is_empty() {
            return Err(FunctionalError::EmptyState);
        }
        let grid = self.u[0].grid();
        for (j, uj) in self.u.iter().enumerate() {
            if uj.grid() != grid {
                return Err(FunctionalError::ComponentGridMismatch { j });
            }
            if !uj.is_finite() {
                return Err(FunctionalError::NonFinite { j });
            }
            let m = mean(uj);
            if m.abs() > 1e-11 {
                return Err(FunctionalError::MeanDrift { j, mean: m });
            }
        }
        Ok(())
    }

    pub fn u(&self) -> &[ScalarField] {
        &self.u
    }

    pub fn n(&self) -> usize {
        self.u.len()
    }

    pub fn grid(&self) -> Grid {
        self.u[0].grid()
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.u
    }
}

/// Everything the entropy evaluation produces in one pass.
#[derive(Clone, Debug)]
pub struct EntropyReport {
    /// K = dirichlet_part - sum(log_masses).
    pub k: f64,
    /// 1/2 sum_ij a^{ij} int grad u_i . grad u_j.
    pub dirichlet_part: f64,
    /// log int h_j e^{u_j} per component.
    pub log_masses: Vec<f64>,
    /// sum_j int |grad u_j|^2, the unweighted gradient energy.
    pub grad_energy: f64,
    /// sum_j [log(h_max_j int e^{u_j}) - log int h_j e^{u_j}] >= 0.
    pub entropy_gap: f64,
    /// sup |u_j| per component.
    pub sup_norms: Vec<f64>,
}

pub(crate) fn check_state(state: &FlowState, prob: &ProblemData) -> Result<(), FunctionalError> {
    if state.n() != prob.n() {
        return Err(FunctionalError::ComponentCount {
            expected: prob.n(),
            got: state.n(),
        });
    }
    for (j, uj) in state.u().iter().enumerate() {
        if uj.grid() != prob.grid() {
            return Err(FunctionalError::ComponentGridMismatch { j });
        }
        if !uj.is_finite() {
            return Err(FunctionalError::NonFinite { j });
        }
    }
    Ok(())
}

/// Evaluate the entropy and its companion diagnostics at one state.
pub fn entropy(state: &FlowState, prob: &ProblemData) -> Result<EntropyReport, FunctionalError> {
    check_state(state, prob)?;
    let n = prob.n();
    let grid = prob.grid();
    let spectra: Vec<_> = state.u().iter().map(torusfield::spectrum).collect();

    // Pairings are symmetric and products commute, so the full i,j loop is
    // deterministic and needs no symmetry bookkeeping.
    let a_inv = prob.matrix().a_inv();
    let mut weighted = Vec::with_capacity(n * n);
    let mut diagonal = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..n {
            let pairing = dirichlet_pairing_spectra(grid, &spectra[i], &spectra[j]);
            weighted.push(a_inv[(i, j)] * pairing);
            if i == j {
                diagonal.push(pairing);
            }
        }
    }
    let dirichlet_part = 0.5 * pairwise_sum(&weighted);
    let grad_energy = pairwise_sum(&diagonal);

    let mut log_masses = Vec::with_capacity(n);
    let mut gap_terms = Vec::with_capacity(n);
    for j in 0..n {
        let uj = &state.u()[j];
        let mass = exp_integral(uj, &prob.h()[j], 1.0)?;
        let unit = exp_integral_unit(uj, 1.0)?;
        log_masses.push(mass.ln);
        gap_terms.push(prob.h_max()[j].ln() + unit.ln - mass.ln);
    }
    let k = dirichlet_part - pairwise_sum(&log_masses);
    let entropy_gap = pairwise_sum(&gap_terms);
    let sup_norms = state.u().iter().map(|u| u.linf_norm()).collect();

    Ok(EntropyReport {
        k,
        dirichlet_part,
        log_masses,
        grad_energy,
        entropy_gap,
        sup_norms,
    })
}

/// The quadratic dissipation form sum_ij a^{ij} int r_i r_j on a vector of
/// rates. Along the flow with r = du/dt this equals -dK/dt; it is
/// nonnegative because A^{-1} is positive definite.
pub fn dissipation(
    rates: &[ScalarField],
    matrix: &CoefficientMatrix,
) -> Result<f64, FunctionalError> {
    if rates.len() != matrix.n() {
        return Err(FunctionalError::ComponentCount {
            expected: matrix.n(),
            got: rates.len(),
        });
    }
    let grid = rates[0].grid();
    for (j, r) in rates.iter().enumerate() {
        if r.grid() != grid {
            return Err(FunctionalError::ComponentGridMismatch { j });
        }
    }
    let n = matrix.n();
    let a_inv = matrix.a_inv();
    let npts = grid.len() as f64;
    let mut terms = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let prod: Vec<f64> = rates[i]
                .values()
                .iter()
                .zip(rates[j].values())
                .map(|(a, b)| a * b)
                .collect();
            terms.push(a_inv[(i, j)] * (pairwise_sum(&prod) / npts));
        }
    }
    Ok(pairwise_sum(&terms))
}

/// Moser--Trudinger deficit log int e^{2p(f - mean f)} - (p^2/beta) int |grad f|^2.
/// Nonpositive wherever the beta-inequality holds; identically zero for
/// constants and for p = 0.
pub fn mt_deficit(f: &ScalarField, p: f64, beta: f64) -> Result<f64, FunctionalError> {
    if !(beta > 0.0) {
        return Err(FunctionalError::BadBeta(beta));
    }
    let centered = f.map({
        let m = mean(f);
        move |v| v - m
    });
    let log_int = exp_integral_unit(&centered, 2.0 * p)?.ln;
    Ok(log_int - (p * p / beta) * grad_norm_sq(f))
}

/// sum_j [log(h_max_j int e^{u_j}) - log int h_j e^{u_j}]. Nonnegative since
/// h_j <= h_max_j pointwise on the grid by construction.
pub fn entropy_gap(state: &FlowState, prob: &ProblemData) -> Result<f64, FunctionalError> {
    check_state(state, prob)?;
    let mut terms = Vec::with_capacity(prob.n());
    for j in 0..prob.n() {
        let uj = &state.u()[j];
        let mass = exp_integral(uj, &prob.h()[j], 1.0)?;
        let unit = exp_integral_unit(uj, 1.0)?;
        terms.push(prob.h_max()[j].ln() + unit.ln - mass.ln);
    }
    Ok(pairwise_sum(&terms))
}

/// The Hoelder lower bound on a mass and the mass itself.
#[derive(Clone, Copy, Debug)]
pub struct MassBound {
    /// (int h_j^{1/q})^q * (int e^{-u_j/(q-1)})^{-(q-1)}.
    pub bound: f64,
    /// int h_j e^{u_j}.
    pub actual: f64,
}

impl MassBound {
    /// actual >= bound - 1e-12 |actual|: the inequality with a roundoff budget.
    pub fn satisfied(&self) -> bool {
        self.actual >= self.bound - 1e-12 * self.actual.abs()
    }
}

/// Lower-bound the mass int h_j e^{u_j} from the state alone via Hoelder:
/// int h^{1/q} <= (int h e^u)^{1/q} (int e^{-u/(q-1)})^{(q-1)/q}.
pub fn h_mass_lower_bound(
    prob: &ProblemData,
    state: &FlowState,
    j: usize,
) -> Result<MassBound, FunctionalError> {
    check_state(state, prob)?;
    assert!(j < prob.n(), "component index out of range");
    let q = prob.q();
    let uj = &state.u()[j];
    let actual = exp_integral(uj, &prob.h()[j], 1.0)?;
    let neg = exp_integral_unit(uj, -1.0 / (q - 1.0))?;
    let ln_bound = q * prob.h_root_mass()[j].ln() - (q - 1.0) * neg.ln;
    let out = MassBound {
        bound: ln_bound.exp(),
        actual: actual.value,
    };
    debug_assert!(out.satisfied(), "Hoelder bound violated: {out:?}");
    Ok(out)
}
