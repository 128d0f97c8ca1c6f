//! JSON run configurations.
//!
//! A config names the grid, the coupling matrix, one weight and one initial
//! expression per component, and optional step/newton/certification
//! parameters. Everything optional defaults to the integrator's defaults,
//! and unknown top-level keys are rejected so typos fail loudly instead of
//! silently running with defaults.

use super::expr::{self, ExprError};
use crate::coeffs::{self, MatrixError};
use crate::flow::StepControl;
use crate::functionals::{FlowState, FunctionalError, ProblemData};
use crate::steady::NewtonControl;
use crate::torusfield::{project_mean_zero, FieldError, Grid};
use nalgebra::DMatrix;
use serde::Deserialize;
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] FieldError),
    #[error("unknown matrix name '{0}' (use \"identity\" or \"cartan\")")]
    UnknownMatrix(String),
    #[error("matrix row {row} has {got} entries, expected {want}")]
    RaggedMatrix { row: usize, got: usize, want: usize },
    #[error("matrix is {matrix}x{matrix} but the config has {weights} weights")]
    ComponentMismatch { matrix: usize, weights: usize },
    #[error("need one initial expression per weight: {weights} weights, {initial} initial")]
    InitialMismatch { weights: usize, initial: usize },
    #[error("weight {index}: {source}")]
    Weight { index: usize, source: ExprError },
    #[error("initial data {index}: {source}")]
    Initial { index: usize, source: ExprError },
    #[error("matrix rejected: {0}")]
    Matrix(#[from] MatrixError),
    #[error("problem rejected: {0}")]
    Problem(#[from] FunctionalError),
    #[error("{0}")]
    Invalid(String),
}

fn default_dim() -> usize {
    1
}

fn default_q() -> f64 {
    2.0
}

fn default_certify_tol() -> f64 {
    1e-9
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub matrix: MatrixSpec,
    pub h: Vec<String>,
    pub u0: Vec<String>,
    #[serde(default = "default_q")]
    pub q: f64,
    #[serde(default)]
    pub step: StepSpec,
    #[serde(default)]
    pub newton: NewtonSpec,
    #[serde(default = "default_certify_tol")]
    pub certify_tol: f64,
    #[serde(default)]
    pub out_dir: Option<String>,
}

/// Coupling matrix, by name ("identity", "cartan", sized by the number of
/// weights), by explicit entries, or a scalar multiple of either.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Named(String),
    Entries { entries: Vec<Vec<f64>> },
    Scaled { scale: f64, of: Box<MatrixSpec> },
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepSpec {
    pub tau0: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub entropy_slack: f64,
    pub steady_tol: f64,
    pub t_end: f64,
    pub max_steps: u64,
}

impl Default for StepSpec {
    fn default() -> Self {
        let c = StepControl::default();
        StepSpec {
            tau0: c.tau0,
            tau_min: c.tau_min,
            tau_max: c.tau_max,
            entropy_slack: c.entropy_slack,
            steady_tol: c.steady_tol,
            t_end: c.t_end,
            max_steps: c.max_steps,
        }
    }
}

impl StepSpec {
    fn to_control(self) -> StepControl {
        StepControl {
            tau0: self.tau0,
            tau_min: self.tau_min,
            tau_max: self.tau_max,
            entropy_slack: self.entropy_slack,
            steady_tol: self.steady_tol,
            t_end: self.t_end,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NewtonSpec {
    pub max_iters: usize,
    pub tol_linf: f64,
}

impl Default for NewtonSpec {
    fn default() -> Self {
        let c = NewtonControl::default();
        NewtonSpec {
            max_iters: c.max_iters,
            tol_linf: c.tol_linf,
        }
    }
}

fn build_matrix(spec: &MatrixSpec, n: usize) -> Result<DMatrix<f64>, ConfigError> {
    match spec {
        MatrixSpec::Named(name) => match name.as_str() {
            "identity" => Ok(coeffs::identity(n)),
            "cartan" => Ok(coeffs::cartan(n)),
            other => Err(ConfigError::UnknownMatrix(other.to_string())),
        },
        MatrixSpec::Entries { entries } => {
            let rows = entries.len();
            for (row, r) in entries.iter().enumerate() {
                if r.len() != rows {
                    return Err(ConfigError::RaggedMatrix {
                        row,
                        got: r.len(),
                        want: rows,
                    });
                }
            }
            Ok(DMatrix::from_fn(rows, rows, |i, j| entries[i][j]))
        }
        MatrixSpec::Scaled { scale, of } => Ok(build_matrix(of, n)? * *scale),
    }
}

/// A fully validated run setup.
#[derive(Debug)]
pub struct Loaded {
    pub prob: ProblemData,
    pub u0: FlowState,
    pub step: StepControl,
    pub newton: NewtonControl,
    pub certify_tol: f64,
    pub out_dir: Option<PathBuf>,
}

pub fn load_value(value: &serde_json::Value) -> Result<Loaded, ConfigError> {
    let raw: RawConfig = serde_json::from_value(value.clone())?;
    let grid = Grid::new(raw.dim, raw.n)?;
    let n = raw.h.len();
    if n == 0 {
        return Err(ConfigError::Invalid(
            "config needs at least one weight".into(),
        ));
    }
    if raw.u0.len() != n {
        return Err(ConfigError::InitialMismatch {
            weights: n,
            initial: raw.u0.len(),
        });
    }

    let m_raw = build_matrix(&raw.matrix, n)?;
    if m_raw.nrows() != n {
        return Err(ConfigError::ComponentMismatch {
            matrix: m_raw.nrows(),
            weights: n,
        });
    }
    let matrix = coeffs::validate(&m_raw)?;

    let mut h = Vec::with_capacity(n);
    for (index, src) in raw.h.iter().enumerate() {
        h.push(expr::sample_field(src, grid).map_err(|source| ConfigError::Weight {
            index,
            source,
        })?);
    }
    let prob = ProblemData::new(matrix, h, raw.q)?;

    let mut u = Vec::with_capacity(n);
    for (index, src) in raw.u0.iter().enumerate() {
        let modes = expr::parse_modes(src, grid)
            .map_err(|source| ConfigError::Initial { index, source })?;
        u.push(project_mean_zero(&expr::field_from_modes(&modes, grid)));
    }
    let u0 = FlowState::new(0.0, u)?;

    let step = raw.step.to_control();
    step.validate()
        .map_err(|e| ConfigError::Invalid(e.to_string()))?;
    if raw.newton.max_iters == 0 {
        return Err(ConfigError::Invalid("newton.max_iters must be >= 1".into()));
    }
    if !(raw.newton.tol_linf > 0.0) {
        return Err(ConfigError::Invalid(
            "newton.tol_linf must be positive".into(),
        ));
    }
    if !(raw.certify_tol > 0.0) {
        return Err(ConfigError::Invalid("certify_tol must be positive".into()));
    }

    Ok(Loaded {
        prob,
        u0,
        step,
        newton: NewtonControl {
            max_iters: raw.newton.max_iters,
            tol_linf: raw.newton.tol_linf,
        },
        certify_tol: raw.certify_tol,
        out_dir: raw.out_dir.map(PathBuf::from),
    })
}

pub fn load_str(text: &str) -> Result<Loaded, ConfigError> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    load_value(&value)
}
