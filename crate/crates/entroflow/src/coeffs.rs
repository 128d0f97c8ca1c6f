//! Coupling-matrix admissibility.
//!
//! A coupling matrix A enters the flow only if it is symmetric, positive
//! definite and its largest eigenvalue stays strictly below 8 pi. Those three
//! clauses are exactly what keeps the entropy coercive, so each one gets its
//! own rejection. Validation also fixes the derived scalars every other
//! module consumes: the inverse (a^{ij}), the eigenvalue window
//! lambda = 1/eig_max <= 1/eig_min = Lambda of the inverse's quadratic form,
//! and the Moser--Trudinger exponent beta.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use std::f64::consts::PI;
use thiserror::Error;

/// Strict upper bound for the largest eigenvalue.
pub const EIGENVALUE_BOUND: f64 = 8.0 * PI;

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("coupling matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("coupling matrix entry ({i},{j}) is not finite")]
    NonFiniteEntry { i: usize, j: usize },
    #[error("coupling matrix is not symmetric: |a({i},{j}) - a({j},{i})| = {defect:.3e}")]
    AsymmetricMatrix { i: usize, j: usize, defect: f64 },
    #[error("coupling matrix is not positive definite: {detail}")]
    NotPositiveDefinite { detail: String },
    #[error("largest eigenvalue {eig:.6} is not below 8*pi = {bound:.6}")]
    EigenvalueTooLarge { eig: f64, bound: f64 },
    #[error("lambda = {lambda:.6e} must exceed 1/(8*pi) = {threshold:.6e} to place beta")]
    LambdaTooSmall { lambda: f64, threshold: f64 },
}

/// A validated coupling matrix with its spectral data and inverse.
#[derive(Clone, Debug)]
pub struct CoefficientMatrix {
    n: usize,
    a: DMatrix<f64>,
    a_inv: DMatrix<f64>,
    eig_min: f64,
    eig_max: f64,
    lambda: f64,
    big_lambda: f64,
    beta: f64,
}

impl CoefficientMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    /// The matrix itself, entries a_ij.
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    /// The inverse, entries a^{ij}; A * a_inv = Id to 1e-12 entrywise.
    pub fn a_inv(&self) -> &DMatrix<f64> {
        &self.a_inv
    }

    pub fn eig_min(&self) -> f64 {
        self.eig_min
    }

    pub fn eig_max(&self) -> f64 {
        self.eig_max
    }

    /// lambda = 1/eig_max(A): lower constant of the inverse quadratic form.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Lambda = 1/eig_min(A): upper constant of the inverse quadratic form.
    pub fn big_lambda(&self) -> f64 {
        self.big_lambda
    }

    /// Moser--Trudinger exponent placed by [`choose_beta`].
    pub fn beta(&self) -> f64 {
        self.beta
    }
}

/// Tridiagonal Cartan-type matrix: 2 on the diagonal, -1 off it.
/// Eigenvalues 2 - 2 cos(k pi / (n+1)), k = 1..n, all inside (0, 4).
pub fn cartan(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            2.0
        } else if i.abs_diff(j) == 1 {
            -1.0
        } else {
            0.0
        }
    })
}

pub fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// Place the Moser--Trudinger exponent: 1/(2 beta) is the arithmetic
/// midpoint of (1/(8 pi), lambda), which forces
/// 1/(8 pi) < 1/(2 beta) < lambda and hence beta < 4 pi.
pub fn choose_beta(lambda: f64) -> Result<f64, MatrixError> {
    let threshold = 1.0 / EIGENVALUE_BOUND;
    if !(lambda > threshold) {
        return Err(MatrixError::LambdaTooSmall { lambda, threshold });
    }
    let half_inv = (threshold + lambda) / 2.0;
    let beta = 1.0 / (2.0 * half_inv);
    debug_assert!(threshold < half_inv && half_inv < lambda);
    debug_assert!(beta < 4.0 * PI);
    Ok(beta)
}

/// Gate a raw matrix into the flow. Checks squareness, finiteness, symmetry
/// (to 1e-12 relative), positive definiteness and the 8 pi eigenvalue bound,
/// then computes the inverse by Cholesky and verifies A * A^{-1} = Id to
/// 1e-12 entrywise.
pub fn validate(raw: &DMatrix<f64>) -> Result<CoefficientMatrix, MatrixError> {
    let (rows, cols) = raw.shape();
    if rows != cols || rows == 0 {
        return Err(MatrixError::NotSquare { rows, cols });
    }
    let n = rows;
    let mut max_abs: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = raw[(i, j)];
            if !v.is_finite() {
                return Err(MatrixError::NonFiniteEntry { i, j });
            }
            max_abs = max_abs.max(v.abs());
        }
    }
    let sym_tol = 1e-12 * max_abs;
    for i in 0..n {
        for j in (i + 1)..n {
            let defect = (raw[(i, j)] - raw[(j, i)]).abs();
            if defect > sym_tol {
                return Err(MatrixError::AsymmetricMatrix { i, j, defect });
            }
        }
    }
    // Work with the symmetrized matrix so the eigensolver sees exact symmetry.
    let a = (raw + raw.transpose()) * 0.5;

    let eigs = SymmetricEigen::new(a.clone()).eigenvalues;
    let eig_min = eigs.iter().copied().fold(f64::INFINITY, f64::min);
    let eig_max = eigs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(eig_min > 0.0) {
        return Err(MatrixError::NotPositiveDefinite {
            detail: format!("smallest eigenvalue {eig_min:.6e}"),
        });
    }
    if !(eig_max < EIGENVALUE_BOUND) {
        return Err(MatrixError::EigenvalueTooLarge {
            eig: eig_max,
            bound: EIGENVALUE_BOUND,
        });
    }

    let chol = Cholesky::new(a.clone()).ok_or_else(|| MatrixError::NotPositiveDefinite {
        detail: "Cholesky factorization failed".to_string(),
    })?;
    let a_inv = chol.inverse();
    let product = &a * &a_inv;
    for i in 0..n {
        for j in 0..n {
            let want = if i == j { 1.0 } else { 0.0 };
            let err = (product[(i, j)] - want).abs();
            if err > 1e-12 {
                return Err(MatrixError::NotPositiveDefinite {
                    detail: format!(
                        "numerically singular: |(A*A^-1 - Id)({i},{j})| = {err:.3e}"
                    ),
                });
            }
        }
    }

    let lambda = 1.0 / eig_max;
    let big_lambda = 1.0 / eig_min;
    let beta = choose_beta(lambda)?;
    Ok(CoefficientMatrix {
        n,
        a,
        a_inv,
        eig_min,
        eig_max,
        lambda,
        big_lambda,
        beta,
    })
}
