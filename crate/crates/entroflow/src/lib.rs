//! Numerical laboratory for entropy-monotone parabolic flows of coupled
//! exponential (Liouville/Toda-type) elliptic systems on the flat unit torus.
//!
//! The flow evolves n mean-zero fields u_i on T^d (d = 1 or 2),
//!
//!   d/dt u_i = lap(u_i) + sum_j a_ij (h_j e^{u_j} / int h_j e^{u_j} - 1),
//!
//! where the coupling matrix A = (a_ij) is symmetric positive definite with
//! largest eigenvalue below 8*pi. Along the flow the entropy functional
//!
//!   K = 1/2 sum_ij a^{ij} int grad u_i . grad u_j - sum_j log int h_j e^{u_j}
//!
//! is non-increasing; the integrator enforces that discretely and the steady
//! module certifies limits as solutions of the elliptic system.
//!
//! Modules, bottom up: [`coeffs`] validates coupling matrices, [`torusfield`]
//! is the spectral toolbox on the torus, [`functionals`] evaluates the entropy
//! and its companion inequalities, [`flow`] integrates, [`steady`] refines and
//! certifies steady states, [`harness`] ties configs, runs and reports together.

pub mod coeffs;
pub mod flow;
pub mod functionals;
#[path = "harness/mod.rs"]
pub mod harness;
pub mod snapshot;
pub mod steady;
pub mod torusfield;
