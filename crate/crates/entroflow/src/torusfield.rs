//! Scalar fields and spectral calculus on the flat unit-area torus.
//!
//! Fields are sampled on a uniform N^d grid (d = 1 or 2, N even), points
//! x_i = i/N per axis. All calculus is Fourier-based: wavenumbers run over
//! k in {-N/2, ..., N/2 - 1} per axis, the Laplacian acts diagonally as
//! -4 pi^2 |k|^2, and Dirichlet energies are Parseval sums. Quadrature of a
//! gridded integrand is the plain cell average, which is spectrally accurate
//! for smooth periodic integrands.
//!
//! Every reduction goes through [`pairwise_sum`], a fixed-shape tree sum, so
//! results are independent of call site and reproducible bit for bit.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("grid must have dim 1 or 2, got {0}")]
    BadDim(usize),
    #[error("grid size must be even and at least 4, got {0}")]
    BadSize(usize),
    #[error("value buffer has length {got}, grid needs {need}")]
    BadLength { got: usize, need: usize },
    #[error("fields live on different grids: {0:?} vs {1:?}")]
    GridMismatch(Grid, Grid),
    #[error("weight field has an entry {0:.3e} below -1e-14")]
    NonNegativityViolated(f64),
    #[error("weighted exponential integral underflowed to zero with a nonzero weight")]
    ZeroMass,
}

/// Uniform periodic grid on the unit torus. `n` points per axis, unit total
/// volume, so every cell carries weight n^{-dim}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    /// `n` must be even (the wavenumber range {-n/2, .., n/2-1} is balanced
    /// only then) and at least 4.
    pub fn new(dim: usize, n: usize) -> Result<Self, FieldError> {
        if dim != 1 && dim != 2 {
            return Err(FieldError::BadDim(dim));
        }
        if n < 4 || !n.is_multiple_of(2) {
            return Err(FieldError::BadSize(n));
        }
        Ok(Grid { dim, n })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points, n^dim.
    pub fn len(&self) -> usize {
        match self.dim {
            1 => self.n,
            _ => self.n * self.n,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one cell.
    pub fn cell_weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// Coordinates of the linear index; y = 0 on 1-d grids.
    /// Layout is row-major: idx = i*n + j maps to (x, y) = (i/n, j/n) in 2-d.
    pub fn coords(&self, idx: usize) -> (f64, f64) {
        let nf = self.n as f64;
        match self.dim {
            1 => (idx as f64 / nf, 0.0),
            _ => ((idx / self.n) as f64 / nf, (idx % self.n) as f64 / nf),
        }
    }

    /// Grid with the same dim and doubled resolution.
    pub fn refined(&self) -> Grid {
        Grid {
            dim: self.dim,
            n: 2 * self.n,
        }
    }
}

/// Real scalar field: raw sample values on a [`Grid`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        ScalarField {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Sample a closure at the grid points. The closure gets (x, y), y = 0 in 1-d.
    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|idx| {
                let (x, y) = grid.coords(idx);
                f(x, y)
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, FieldError> {
        if values.len() != grid.len() {
            return Err(FieldError::BadLength {
                got: values.len(),
                need: grid.len(),
            });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn linf_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// sqrt(int f^2) with the cell-average quadrature.
    pub fn l2_norm(&self) -> f64 {
        let sq: Vec<f64> = self.values.iter().map(|v| v * v).collect();
        (pairwise_sum(&sq) / self.grid.len() as f64).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// self + s * other. Panics on grid mismatch (programmer error).
    pub fn add_scaled(&self, other: &ScalarField, s: f64) -> Self {
        assert_eq!(self.grid, other.grid, "add_scaled: grid mismatch");
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &ScalarField) -> Self {
        assert_eq!(self.grid, other.grid, "sub: grid mismatch");
        ScalarField {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }
}

/// Fixed-shape tree summation: split in half down to pairs. Deterministic
/// for a given slice, and exact for power-of-two repetitions of one value
/// (doubling never rounds).
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
        }
    }
}

/// Cell-average quadrature of the samples: pairwise sum divided by the count.
pub fn mean(f: &ScalarField) -> f64 {
    pairwise_sum(&f.values) / f.grid.len() as f64
}

// ---------------------------------------------------------------------------
// FFT plumbing. Plans are cached per (length, direction) per thread; rustfft
// itself is single-threaded here, so reductions and transforms are
// reproducible bit for bit.

type PlanCache = (FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>);

thread_local! {
    static FFT_CACHE: RefCell<PlanCache> = RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn with_fft(n: usize, inverse: bool, f: impl FnOnce(&Arc<dyn Fft<f64>>)) {
    FFT_CACHE.with(|cell| {
        let (planner, cache) = &mut *cell.borrow_mut();
        let fft = cache.entry((n, inverse)).or_insert_with(|| {
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        });
        f(fft)
    });
}

/// In-place unnormalized DFT along every axis of the row-major buffer.
fn fft_axes(grid: Grid, data: &mut [Complex<f64>], inverse: bool) {
    let n = grid.n;
    debug_assert_eq!(data.len(), grid.len());
    // Rows are contiguous; rustfft processes the buffer in chunks of n.
    with_fft(n, inverse, |fft| fft.process(data));
    if grid.dim == 2 {
        // Columns via transpose, process, transpose back.
        let mut t = vec![Complex::new(0.0, 0.0); data.len()];
        for i in 0..n {
            for j in 0..n {
                t[j * n + i] = data[i * n + j];
            }
        }
        with_fft(n, inverse, |fft| fft.process(&mut t));
        for j in 0..n {
            for i in 0..n {
                data[i * n + j] = t[j * n + i];
            }
        }
    }
}

/// Signed wavenumber of a transform index: 0..n/2-1 stay, the upper half
/// wraps to negatives, so index n/2 is the Nyquist mode -n/2.
pub fn wavenumber(idx: usize, n: usize) -> i64 {
    if idx < n / 2 {
        idx as i64
    } else {
        idx as i64 - n as i64
    }
}

fn wavenumber_pair(grid: Grid, idx: usize) -> (i64, i64) {
    match grid.dim {
        1 => (wavenumber(idx, grid.n), 0),
        _ => (
            wavenumber(idx / grid.n, grid.n),
            wavenumber(idx % grid.n, grid.n),
        ),
    }
}

fn ksq(grid: Grid, idx: usize) -> f64 {
    let (k1, k2) = wavenumber_pair(grid, idx);
    (k1 * k1 + k2 * k2) as f64
}

/// Normalized Fourier coefficients: spectrum[k] is the coefficient of
/// e^{2 pi i k.x}, so a real field satisfies spectrum[-k] = conj(spectrum[k]).
pub fn spectrum(f: &ScalarField) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = f.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_axes(f.grid, &mut buf, false);
    let scale = 1.0 / f.grid.len() as f64;
    for c in &mut buf {
        *c *= scale;
    }
    buf
}

/// Evaluate a normalized spectrum back on the grid (real part).
pub fn field_from_spectrum(grid: Grid, spec: &[Complex<f64>]) -> ScalarField {
    assert_eq!(spec.len(), grid.len(), "spectrum length mismatch");
    let mut buf = spec.to_vec();
    fft_axes(grid, &mut buf, true);
    ScalarField {
        grid,
        values: buf.into_iter().map(|c| c.re).collect(),
    }
}

/// Apply a Fourier multiplier m(|k|^2) and return the (real) result.
fn apply_symbol(f: &ScalarField, sym: impl Fn(f64) -> f64) -> ScalarField {
    let grid = f.grid;
    let mut buf: Vec<Complex<f64>> = f.values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft_axes(grid, &mut buf, false);
    let scale = 1.0 / grid.len() as f64;
    for (idx, c) in buf.iter_mut().enumerate() {
        *c *= sym(ksq(grid, idx)) * scale;
    }
    fft_axes(grid, &mut buf, true);
    ScalarField {
        grid,
        values: buf.into_iter().map(|c| c.re).collect(),
    }
}

/// Spectral Laplacian: every mode k is multiplied by -4 pi^2 |k|^2. Exact on
/// trigonometric polynomials below the Nyquist degree; the Nyquist mode is
/// kept with its symmetric weight |k|^2 = (n/2)^2.
pub fn laplacian(f: &ScalarField) -> ScalarField {
    apply_symbol(f, |k2| -4.0 * PI * PI * k2)
}

/// Solve (Id - tau * lap) u = f exactly in Fourier space; the implicit half
/// of the flow step. Unconditionally stable: divisors 1 + 4 pi^2 tau |k|^2
/// are >= 1 for tau >= 0.
pub fn implicit_heat(f: &ScalarField, tau: f64) -> ScalarField {
    assert!(tau >= 0.0, "implicit_heat: negative tau");
    apply_symbol(f, |k2| 1.0 / (1.0 + 4.0 * PI * PI * tau * k2))
}

/// Inverse Laplacian with the mean mode deflated: the k = 0 coefficient of
/// the result is 0, every other mode is divided by -4 pi^2 |k|^2.
pub fn inv_laplacian(f: &ScalarField) -> ScalarField {
    apply_symbol(f, |k2| {
        if k2 == 0.0 {
            0.0
        } else {
            -1.0 / (4.0 * PI * PI * k2)
        }
    })
}

/// Spectral gradient, one field per axis. The Nyquist mode is zeroed for the
/// odd derivative (its symmetric representative has no well-defined sign).
pub fn gradient(f: &ScalarField) -> Vec<ScalarField> {
    let grid = f.grid;
    let spec = spectrum(f);
    let nyq = -(grid.n as i64) / 2;
    (0..grid.dim)
        .map(|axis| {
            let mut g = vec![Complex::new(0.0, 0.0); spec.len()];
            for (idx, &c) in spec.iter().enumerate() {
                let (k1, k2) = wavenumber_pair(grid, idx);
                let k = if axis == 0 { k1 } else { k2 };
                if k == nyq {
                    continue;
                }
                g[idx] = c * Complex::new(0.0, 2.0 * PI * k as f64);
            }
            field_from_spectrum(grid, &g)
        })
        .collect()
}

/// Dirichlet pairing int grad f . grad g by Parseval:
/// sum_k 4 pi^2 |k|^2 Re(fhat_k conj(ghat_k)). Symmetric, bilinear, and
/// positive semidefinite on the diagonal by construction.
pub fn dirichlet_pairing(f: &ScalarField, g: &ScalarField) -> Result<f64, FieldError> {
    if f.grid != g.grid {
        return Err(FieldError::GridMismatch(f.grid, g.grid));
    }
    let sf = spectrum(f);
    let sg = spectrum(g);
    Ok(dirichlet_pairing_spectra(f.grid, &sf, &sg))
}

/// Pairing evaluated on precomputed normalized spectra (see [`spectrum`]).
pub fn dirichlet_pairing_spectra(
    grid: Grid,
    sf: &[Complex<f64>],
    sg: &[Complex<f64>],
) -> f64 {
    let terms: Vec<f64> = (0..grid.len())
        .map(|idx| {
            let a = sf[idx];
            let b = sg[idx];
            4.0 * PI * PI * ksq(grid, idx) * (a.re * b.re + a.im * b.im)
        })
        .collect();
    pairwise_sum(&terms)
}

/// int |grad f|^2. Identical code path to `dirichlet_pairing(f, f)`.
pub fn grad_norm_sq(f: &ScalarField) -> f64 {
    let sf = spectrum(f);
    dirichlet_pairing_spectra(f.grid, &sf, &sf)
}

/// Subtract the mean until the result is a fixed point of the subtraction,
/// so applying the projection twice gives the same bits as applying it once.
pub fn project_mean_zero(f: &ScalarField) -> ScalarField {
    let mut g = f.clone();
    for _ in 0..32 {
        let m = mean(&g);
        if m == 0.0 {
            return g;
        }
        let mut changed = false;
        for v in &mut g.values {
            let w = *v - m;
            if w.to_bits() != v.to_bits() {
                *v = w;
                changed = true;
            }
        }
        if !changed {
            return g;
        }
    }
    g
}

/// Weighted exponential integral int h e^{p f}.
#[derive(Clone, Copy, Debug)]
pub struct ExpIntegral {
    /// e^{ln}; may overflow to infinity when the log exceeds ~709.
    pub value: f64,
    /// log of the integral, formed without materializing the large value.
    pub ln: f64,
}

/// int h e^{p f} with max-shift stabilization: with s = max(p f), the
/// quadrature sums h e^{p f - s} (every exponent <= 0, no overflow) and the
/// log is s + log(mean). Errors: a weight below -1e-14, or total underflow
/// of a not-identically-zero weight (ZeroMass, catastrophic field collapse).
pub fn exp_integral(f: &ScalarField, h: &ScalarField, p: f64) -> Result<ExpIntegral, FieldError> {
    if f.grid != h.grid {
        return Err(FieldError::GridMismatch(f.grid, h.grid));
    }
    exp_integral_impl(f, Some(h), p)
}

/// int e^{p f}: the unit-weight case of [`exp_integral`].
pub fn exp_integral_unit(f: &ScalarField, p: f64) -> Result<ExpIntegral, FieldError> {
    exp_integral_impl(f, None, p)
}

fn exp_integral_impl(
    f: &ScalarField,
    h: Option<&ScalarField>,
    p: f64,
) -> Result<ExpIntegral, FieldError> {
    let mut h_max: f64 = 1.0;
    if let Some(h) = h {
        h_max = 0.0;
        for &v in &h.values {
            if v < -1e-14 {
                return Err(FieldError::NonNegativityViolated(v));
            }
            h_max = h_max.max(v);
        }
    }
    let s = if p == 0.0 {
        0.0
    } else {
        f.values
            .iter()
            .fold(f64::NEG_INFINITY, |m, &v| m.max(p * v))
    };
    let terms: Vec<f64> = match h {
        Some(h) => f
            .values
            .iter()
            .zip(&h.values)
            .map(|(&v, &w)| w * (p * v - s).exp())
            .collect(),
        None => f.values.iter().map(|&v| (p * v - s).exp()).collect(),
    };
    let mu = pairwise_sum(&terms) / f.grid.len() as f64;
    if mu == 0.0 {
        if h_max > 0.0 {
            return Err(FieldError::ZeroMass);
        }
        // Identically zero weight: a zero integral, not a collapse.
        return Ok(ExpIntegral {
            value: 0.0,
            ln: f64::NEG_INFINITY,
        });
    }
    Ok(ExpIntegral {
        value: s.exp() * mu,
        ln: s + mu.ln(),
    })
}

/// Embed the field on the doubled grid by Fourier zero padding. Coarse
/// Nyquist coefficients are split evenly between +-n/2, which keeps the
/// result real and reproduces the coarse samples exactly at common points.
pub fn upsample2(f: &ScalarField) -> ScalarField {
    let coarse = f.grid;
    let fine = coarse.refined();
    let spec = spectrum(f);
    let mut out = vec![Complex::new(0.0, 0.0); fine.len()];
    let nyq = -(coarse.n as i64) / 2;
    // Wavenumber -> transform index on the fine grid.
    let fine_idx = |k: i64| -> usize {
        if k >= 0 {
            k as usize
        } else {
            (k + fine.n as i64) as usize
        }
    };
    let targets = |k: i64| -> Vec<(i64, f64)> {
        if k == nyq {
            vec![(nyq, 0.5), (-nyq, 0.5)]
        } else {
            vec![(k, 1.0)]
        }
    };
    for (idx, &c) in spec.iter().enumerate() {
        let (k1, k2) = wavenumber_pair(coarse, idx);
        match coarse.dim {
            1 => {
                for (t1, w1) in targets(k1) {
                    out[fine_idx(t1)] += c * w1;
                }
            }
            _ => {
                for (t1, w1) in targets(k1) {
                    for (t2, w2) in targets(k2) {
                        out[fine_idx(t1) * fine.n + fine_idx(t2)] += c * (w1 * w2);
                    }
                }
            }
        }
    }
    field_from_spectrum(fine, &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Modified Bessel I_0 by its power series; the quadrature oracle for
    /// int_0^1 e^{a cos 2 pi x} dx = I_0(a).
    pub fn bessel_i0(z: f64) -> f64 {
        let q = z * z / 4.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..60 {
            term *= q / ((k * k) as f64);
            sum += term;
            if term < 1e-18 * sum {
                break;
            }
        }
        sum
    }

    fn grid1(n: usize) -> Grid {
        Grid::new(1, n).unwrap()
    }

    fn grid2(n: usize) -> Grid {
        Grid::new(2, n).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!(
            (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())),
            "{a} vs {b} (tol {tol})"
        );
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(matches!(Grid::new(3, 64), Err(FieldError::BadDim(3))));
        assert!(matches!(Grid::new(0, 64), Err(FieldError::BadDim(0))));
        assert!(matches!(Grid::new(1, 65), Err(FieldError::BadSize(65))));
        assert!(matches!(Grid::new(1, 2), Err(FieldError::BadSize(2))));
        assert!(Grid::new(2, 4).is_ok());
    }

    #[test]
    fn cell_weights_sum_to_one() {
        for grid in [grid1(64), grid1(96), grid2(32)] {
            let w = vec![grid.cell_weight(); grid.len()];
            assert!((pairwise_sum(&w) - 1.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn mean_of_constant_is_exact() {
        // Integer-valued constants sum exactly at any even n.
        for n in [64, 96, 128] {
            let f = ScalarField::constant(grid1(n), 1.0);
            assert_eq!(mean(&f), 1.0);
        }
        // Power-of-two grids double without rounding, so any constant is exact.
        let f = ScalarField::constant(grid2(64), PI);
        assert_eq!(mean(&f), PI);
        let f = ScalarField::constant(grid1(96), PI);
        close(mean(&f), PI, 1e-14);
    }

    #[test]
    fn mean_of_single_mode_vanishes() {
        let f = ScalarField::from_fn(grid1(128), |x, _| (2.0 * PI * x).cos());
        assert!(mean(&f).abs() <= 1e-15);
        let g = ScalarField::from_fn(grid2(32), |x, y| (2.0 * PI * (x + y)).sin());
        assert!(mean(&g).abs() <= 1e-15);
    }

    #[test]
    fn mean_of_sawtooth_matches_arithmetic_series() {
        // f(x_j) = j/n averages to (n-1)/(2n); dyadic samples are exact.
        let n = 128;
        let f = ScalarField::from_fn(grid1(n), |x, _| x);
        assert_eq!(mean(&f), (n as f64 - 1.0) / (2.0 * n as f64));
        let n = 96;
        let f = ScalarField::from_fn(grid1(n), |x, _| x);
        close(mean(&f), (n as f64 - 1.0) / (2.0 * n as f64), 1e-14);
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        let f = ScalarField::constant(grid1(64), 2.75);
        assert!(laplacian(&f).linf_norm() <= 1e-12);
    }

    #[test]
    fn laplacian_eigenfunction_1d() {
        let f = ScalarField::from_fn(grid1(64), |x, _| (2.0 * PI * x).cos());
        let lf = laplacian(&f);
        let want = f.scale(-4.0 * PI * PI);
        let err = lf.sub(&want).linf_norm();
        assert!(err <= 1e-12 * 4.0 * PI * PI, "err {err}");
    }

    #[test]
    fn laplacian_eigenfunction_2d() {
        // cos(2 pi x) cos(4 pi y) has |k|^2 = 1 + 4.
        let f = ScalarField::from_fn(grid2(32), |x, y| {
            (2.0 * PI * x).cos() * (4.0 * PI * y).cos()
        });
        let lf = laplacian(&f);
        let want = f.scale(-20.0 * PI * PI);
        assert!(lf.sub(&want).linf_norm() <= 1e-11 * 20.0 * PI * PI);
    }

    #[test]
    fn grad_norm_of_sine_is_two_pi_squared() {
        let f = ScalarField::from_fn(grid1(64), |x, _| (2.0 * PI * x).sin());
        close(grad_norm_sq(&f), 2.0 * PI * PI, 1e-12);
    }

    #[test]
    fn grad_norm_two_modes_parseval() {
        // 0.1 cos(2 pi x) + 0.2 sin(4 pi x):
        // 4 pi^2 (1 * 0.1^2/2 + 4 * 0.2^2/2) = 4 pi^2 * 0.085.
        let f = ScalarField::from_fn(grid1(128), |x, _| {
            0.1 * (2.0 * PI * x).cos() + 0.2 * (4.0 * PI * x).sin()
        });
        close(grad_norm_sq(&f), 4.0 * PI * PI * 0.085, 1e-12);
    }

    #[test]
    fn pairing_of_orthogonal_modes_vanishes() {
        let g = grid1(64);
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos());
        let h = ScalarField::from_fn(g, |x, _| (4.0 * PI * x).sin());
        assert!(dirichlet_pairing(&f, &h).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn pairing_is_symmetric_and_matches_grad_norm() {
        let g = grid1(64);
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos() + 0.3 * (6.0 * PI * x).sin());
        let h = ScalarField::from_fn(g, |x, _| 0.7 * (2.0 * PI * x).sin() - (4.0 * PI * x).cos());
        let fh = dirichlet_pairing(&f, &h).unwrap();
        let hf = dirichlet_pairing(&h, &f).unwrap();
        assert_eq!(fh.to_bits(), hf.to_bits());
        let d = dirichlet_pairing(&f, &f).unwrap();
        assert_eq!(d.to_bits(), grad_norm_sq(&f).to_bits());
    }

    #[test]
    fn pairing_rejects_grid_mismatch() {
        let f = ScalarField::zeros(grid1(64));
        let h = ScalarField::zeros(grid1(128));
        assert!(matches!(
            dirichlet_pairing(&f, &h),
            Err(FieldError::GridMismatch(_, _))
        ));
    }

    #[test]
    fn gradient_matches_parseval_energy() {
        let f = ScalarField::from_fn(grid2(32), |x, y| {
            (2.0 * PI * x).cos() * (2.0 * PI * y).sin() + 0.5 * (4.0 * PI * y).cos()
        });
        let grads = gradient(&f);
        let sq: Vec<f64> = (0..f.grid().len())
            .map(|i| grads.iter().map(|g| g.values()[i] * g.values()[i]).sum())
            .collect();
        let pointwise = pairwise_sum(&sq) / f.grid().len() as f64;
        close(pointwise, grad_norm_sq(&f), 1e-12);
    }

    #[test]
    fn projection_is_idempotent_bitwise() {
        let f = ScalarField::from_fn(grid1(96), |x, _| (2.0 * PI * x).sin().exp() + 0.3);
        let p1 = project_mean_zero(&f);
        let p2 = project_mean_zero(&p1);
        assert_eq!(p1.values(), p2.values());
        assert!(mean(&p1).abs() <= 1e-15 * f.linf_norm());
    }

    #[test]
    fn exp_integral_of_constants() {
        let g = grid1(128);
        let f = ScalarField::zeros(g);
        let h = ScalarField::constant(g, 2.5);
        let r = exp_integral(&f, &h, 1.0).unwrap();
        assert_eq!(r.value, 2.5);
        assert_eq!(r.ln, 2.5f64.ln());
        // p = 0 ignores f entirely.
        let spiky = ScalarField::from_fn(g, |x, _| 1e6 * (2.0 * PI * x).cos());
        let r = exp_integral(&spiky, &h, 0.0).unwrap();
        assert_eq!(r.value, 2.5);
    }

    #[test]
    fn exp_integral_reproduces_bessel() {
        let g = grid1(64);
        let f = ScalarField::from_fn(g, |x, _| (2.0 * PI * x).cos());
        let ones = ScalarField::constant(g, 1.0);
        let r = exp_integral(&f, &ones, 1.0).unwrap();
        close(r.value, bessel_i0(1.0), 1e-13);
        close(r.ln, bessel_i0(1.0).ln(), 1e-13);
        // Negative p shifts the cosine by half a period: same integral.
        let r = exp_integral(&f, &ones, -1.0).unwrap();
        close(r.value, bessel_i0(1.0), 1e-13);
        // Unit-weight shortcut agrees bitwise with the explicit ones field.
        let ru = exp_integral_unit(&f, 1.0).unwrap();
        let rh = exp_integral(&f, &ones, 1.0).unwrap();
        assert_eq!(ru.value.to_bits(), rh.value.to_bits());
        assert_eq!(ru.ln.to_bits(), rh.ln.to_bits());
    }

    #[test]
    fn exp_integral_survives_huge_fields() {
        // The value may overflow; the log must not.
        let g = grid1(64);
        let f = ScalarField::from_fn(g, |x, _| 800.0 + (2.0 * PI * x).cos());
        let r = exp_integral_unit(&f, 1.0).unwrap();
        assert!(r.value.is_infinite());
        close(r.ln, 800.0 + bessel_i0(1.0).ln(), 1e-12);
        // And deep below: value underflows to zero but stays Ok (unit weight
        // cannot mass-collapse; the log carries the answer).
        let f = ScalarField::constant(g, -800.0);
        let r = exp_integral_unit(&f, 1.0).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.ln, -800.0);
    }

    #[test]
    fn exp_integral_rejects_negative_weight() {
        let g = grid1(64);
        let f = ScalarField::zeros(g);
        let mut h = ScalarField::constant(g, 1.0);
        h.values_mut()[3] = -1e-10;
        assert!(matches!(
            exp_integral(&f, &h, 1.0),
            Err(FieldError::NonNegativityViolated(_))
        ));
        // Roundoff-scale negativity is tolerated.
        h.values_mut()[3] = -1e-15;
        assert!(exp_integral(&f, &h, 1.0).is_ok());
    }

    #[test]
    fn exp_integral_detects_mass_collapse() {
        let g = grid1(64);
        let mut f = ScalarField::zeros(g);
        f.values_mut()[0] = 2000.0;
        let mut h = ScalarField::constant(g, 1e-300);
        h.values_mut()[0] = 0.0; // no weight at the max point
        assert!(matches!(
            exp_integral(&f, &h, 1.0),
            Err(FieldError::ZeroMass)
        ));
        // Identically zero weight is a zero integral, not a collapse.
        let z = ScalarField::zeros(g);
        let r = exp_integral(&f, &z, 1.0).unwrap();
        assert_eq!(r.value, 0.0);
    }

    #[test]
    fn implicit_heat_damps_single_mode() {
        let eps = 1e-3;
        let tau = 0.01;
        let f = ScalarField::from_fn(grid1(64), |x, _| eps * (2.0 * PI * x).cos());
        let u = implicit_heat(&f, tau);
        let want = eps / (1.0 + 4.0 * PI * PI * tau);
        let amp = u.values()[0];
        close(amp, want, 1e-13);
        // The whole field stays a pure mode.
        let shape = f.scale(want / eps);
        assert!(u.sub(&shape).linf_norm() <= 1e-15);
    }

    #[test]
    fn inv_laplacian_inverts_on_mean_zero() {
        let f = ScalarField::from_fn(grid1(64), |x, _| {
            (2.0 * PI * x).cos() - 0.4 * (6.0 * PI * x).sin()
        });
        let back = laplacian(&inv_laplacian(&f));
        assert!(back.sub(&f).linf_norm() <= 1e-12);
        // Constants sit in the deflated kernel.
        let c = ScalarField::constant(grid1(64), 3.0);
        assert!(inv_laplacian(&c).linf_norm() <= 1e-12);
    }

    #[test]
    fn upsample_reproduces_band_limited_fields() {
        let coarse = grid1(32);
        let f = ScalarField::from_fn(coarse, |x, _| {
            0.3 * (2.0 * PI * x).cos() - 0.1 * (4.0 * PI * x).sin()
        });
        let up = upsample2(&f);
        let exact = ScalarField::from_fn(coarse.refined(), |x, _| {
            0.3 * (2.0 * PI * x).cos() - 0.1 * (4.0 * PI * x).sin()
        });
        assert!(up.sub(&exact).linf_norm() <= 1e-13);
        close(grad_norm_sq(&up), grad_norm_sq(&f), 1e-12);
        close(mean(&up), mean(&f), 1e-14);
    }

    #[test]
    fn upsample_2d_keeps_energy() {
        let f = ScalarField::from_fn(grid2(16), |x, y| {
            (2.0 * PI * x).cos() * (2.0 * PI * y).cos() + 0.2 * (4.0 * PI * x).sin()
        });
        let up = upsample2(&f);
        assert_eq!(up.grid().n(), 32);
        close(grad_norm_sq(&up), grad_norm_sq(&f), 1e-12);
        // Values at shared points match.
        let n = 16;
        for i in 0..n {
            let c = f.values()[i * n]; // (x = i/16, y = 0)
            let fine = up.values()[(2 * i) * 32];
            close(c, fine, 1e-12);
        }
    }

    #[test]
    fn doubling_resolution_moves_analytic_results_by_spectral_tail() {
        let f64g = |g: Grid| ScalarField::from_fn(g, |x, _| (2.0 * PI * x).sin().exp());
        let a = grad_norm_sq(&f64g(grid1(64)));
        let b = grad_norm_sq(&f64g(grid1(128)));
        close(a, b, 1e-10);
        let ia = exp_integral_unit(&f64g(grid1(64)), 1.0).unwrap().ln;
        let ib = exp_integral_unit(&f64g(grid1(128)), 1.0).unwrap().ln;
        close(ia, ib, 1e-12);
    }

    /// Random low-degree trig polynomial with its exact Parseval energy.
    fn trig_poly(coeffs: &[(i64, f64, f64)]) -> (ScalarField, f64, f64) {
        let g = grid1(64);
        let f = ScalarField::from_fn(g, |x, _| {
            coeffs
                .iter()
                .map(|&(k, a, b)| {
                    a * (2.0 * PI * k as f64 * x).cos() + b * (2.0 * PI * k as f64 * x).sin()
                })
                .sum()
        });
        let energy: f64 = coeffs
            .iter()
            .map(|&(k, a, b)| 4.0 * PI * PI * (k * k) as f64 * (a * a + b * b) / 2.0)
            .sum();
        let mean0: f64 = coeffs.iter().filter(|&&(k, _, _)| k == 0).map(|&(_, a, _)| a).sum();
        (f, energy, mean0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn prop_grad_energy_matches_analytic(
            a1 in -1.0f64..1.0, b1 in -1.0f64..1.0,
            a2 in -1.0f64..1.0, b2 in -1.0f64..1.0,
            k1 in 1i64..8, k2 in 1i64..8,
        ) {
            prop_assume!(k1 != k2);
            let (f, want, _) = trig_poly(&[(k1, a1, b1), (k2, a2, b2)]);
            let got = grad_norm_sq(&f);
            prop_assert!((got - want).abs() <= 1e-11 * (1.0 + want));
        }

        #[test]
        fn prop_laplacian_is_exact_on_trig_polys(
            a in -1.0f64..1.0, b in -1.0f64..1.0, k in 1i64..8,
        ) {
            let (f, _, _) = trig_poly(&[(k, a, b)]);
            let got = laplacian(&f);
            let want = f.scale(-4.0 * PI * PI * (k * k) as f64);
            prop_assert!(got.sub(&want).linf_norm() <= 1e-12 * (1.0 + want.linf_norm()));
        }

        #[test]
        fn prop_laplacian_has_zero_mean(
            a in -1.0f64..1.0, b in -1.0f64..1.0, k in 1i64..8, c in -1.0f64..1.0,
        ) {
            let (f, _, _) = trig_poly(&[(0, c, 0.0), (k, a, b)]);
            prop_assert!(mean(&laplacian(&f)).abs() <= 1e-12);
        }

        #[test]
        fn prop_exp_integral_monotone_in_weight(
            a in -1.0f64..1.0, k in 1i64..6, c in 0.1f64..2.0, bump in 0.0f64..1.0,
        ) {
            let g = grid1(64);
            let (f, _, _) = trig_poly(&[(k, a, 0.0)]);
            let h1 = ScalarField::constant(g, c);
            let h2 = h1.map(|v| v + bump);
            let r1 = exp_integral(&f, &h1, 1.0).unwrap();
            let r2 = exp_integral(&f, &h2, 1.0).unwrap();
            prop_assert!(r2.value >= r1.value - 1e-12 * r1.value.abs());
        }

        #[test]
        fn prop_pairing_is_bilinear(
            a in -1.0f64..1.0, b in -1.0f64..1.0, s in -2.0f64..2.0,
        ) {
            let (f, _, _) = trig_poly(&[(1, a, 0.3), (3, 0.2, b)]);
            let (g, _, _) = trig_poly(&[(2, b, a), (1, 0.1, 0.0)]);
            let (w, _, _) = trig_poly(&[(1, 0.5, -0.2), (4, a, b)]);
            let lhs = dirichlet_pairing(&f.add_scaled(&g, s), &w).unwrap();
            let rhs = dirichlet_pairing(&f, &w).unwrap() + s * dirichlet_pairing(&g, &w).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs().max(rhs.abs())));
        }

        #[test]
        fn prop_project_then_mean_is_tiny(
            a in -1.0f64..1.0, b in -1.0f64..1.0, c in -3.0f64..3.0, k in 1i64..8,
        ) {
            let (f, _, _) = trig_poly(&[(0, c, 0.0), (k, a, b)]);
            let p = project_mean_zero(&f);
            prop_assert!(mean(&p).abs() <= 1e-14 * (1.0 + f.linf_norm()));
        }
    }
}
