//! Self-contained numerical kernels used by all model modules: a dense
//! complex eigensolver, a damped Newton root finder, a fixed-step RK4
//! integrator and spectral differentiation on periodic grids.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eig, EigVals, Solve};
use num_complex::Complex64;
use thiserror::Error;

/// Largest matrix dimension accepted by the dense eigensolver. The biggest
/// problem in practice is the 2n x 2n stability operator of the extended
/// model at n = 512 grid points.
pub const MAX_EIG_DIM: usize = 2048;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("matrix is not square ({rows}x{cols})")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix dimension {0} exceeds the dense eigensolver cap {MAX_EIG_DIM}")]
    DimensionTooLarge(usize),
    #[error("matrix entries must be finite")]
    NonFiniteMatrix,
    #[error("eigensolver failed: {0}")]
    EigFailed(String),
    #[error(
        "singular Jacobian after {iterations} Newton steps (residual {residual:.3e}); \
         a bifurcation or exceptional point may be nearby"
    )]
    SingularJacobian { iterations: usize, residual: f64 },
    #[error(
        "Newton did not reach tolerance {tolerance:.3e} within {max_iterations} iterations \
         (residual {residual:.3e})"
    )]
    MaxIterationsExceeded {
        max_iterations: usize,
        residual: f64,
        tolerance: f64,
    },
    #[error("non-finite state encountered at t = {t}")]
    NonFiniteState { t: f64 },
    #[error("vector length {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

// ---------------------------------------------------------------------------
// Complex matrices
// ---------------------------------------------------------------------------

/// Dense complex matrix with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![Complex64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[&[Complex64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        assert!(rows.iter().all(|row| row.len() == c), "ragged rows");
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| {
            if i == j {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self.at(i, i)).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols, "vector length mismatch");
        let mut y = vec![Complex64::new(0.0, 0.0); self.rows];
        for i in 0..self.rows {
            let row = &self.data[i * self.cols..(i + 1) * self.cols];
            let mut acc = Complex64::new(0.0, 0.0);
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            y[i] = acc;
        }
        y
    }

    /// Frobenius norm, used to scale residual tolerances.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Assembles the 2x2 block matrix [[a, b], [c, d]]; all blocks n x n.
    pub fn from_blocks(a: &Self, b: &Self, c: &Self, d: &Self) -> Self {
        let n = a.rows;
        assert!(
            [a, b, c, d]
                .iter()
                .all(|m| m.rows == n && m.cols == n),
            "blocks must be square and equally sized"
        );
        Self::from_fn(2 * n, 2 * n, |i, j| match (i < n, j < n) {
            (true, true) => a.at(i, j),
            (true, false) => b.at(i, j - n),
            (false, true) => c.at(i - n, j),
            (false, false) => d.at(i - n, j - n),
        })
    }

    /// Entrywise complex conjugate.
    pub fn conj(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    fn to_ndarray(&self) -> Array2<Complex64> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .expect("shape matches data length")
    }
}

impl std::ops::Index<(usize, usize)> for ComplexMatrix {
    type Output = Complex64;
    fn index(&self, (i, j): (usize, usize)) -> &Complex64 {
        &self.data[i * self.cols + j]
    }
}

// ---------------------------------------------------------------------------
// Dense eigensolver
// ---------------------------------------------------------------------------

/// Full spectrum of a dense complex matrix. Eigenvalues are sorted by real
/// part, then imaginary part; `eigenvectors[k]` belongs to `eigenvalues[k]`
/// and is normalized to unit 2-norm with its largest component rotated onto
/// the positive real axis.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<Complex64>,
    pub eigenvectors: Vec<Vec<Complex64>>,
}

extern "C" {
    fn openblas_set_num_threads(num: std::os::raw::c_int);
}

/// OpenBLAS's threaded kernels recurse deeply on the calling thread (stack
/// overflows in `dgetrf_parallel`) and thread-level parallelism lives in
/// this crate's scan layer anyway. Pin the BLAS to one thread, once.
pub(crate) fn ensure_single_threaded_blas() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| unsafe { openblas_set_num_threads(1) });
}

fn check_eig_input(matrix: &ComplexMatrix) -> Result<(), NumericsError> {
    ensure_single_threaded_blas();
    if !matrix.is_square() {
        return Err(NumericsError::NonSquare {
            rows: matrix.rows,
            cols: matrix.cols,
        });
    }
    if matrix.rows > MAX_EIG_DIM {
        return Err(NumericsError::DimensionTooLarge(matrix.rows));
    }
    if !matrix.is_finite() {
        return Err(NumericsError::NonFiniteMatrix);
    }
    Ok(())
}

fn sort_order(values: &[Complex64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .re
            .total_cmp(&values[b].re)
            .then(values[a].im.total_cmp(&values[b].im))
    });
    order
}

/// Computes all eigenvalues and right eigenvectors of a dense complex matrix.
pub fn eig_dense(matrix: &ComplexMatrix) -> Result<EigenDecomposition, NumericsError> {
    check_eig_input(matrix)?;
    let (values, vectors) = matrix
        .to_ndarray()
        .eig()
        .map_err(|e| NumericsError::EigFailed(e.to_string()))?;
    let values: Vec<Complex64> = values.to_vec();
    let order = sort_order(&values);

    let n = matrix.rows;
    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    for &k in &order {
        eigenvalues.push(values[k]);
        let mut v: Vec<Complex64> = (0..n).map(|i| vectors[(i, k)]).collect();
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            // fix the gauge: largest component becomes real and positive
            let pivot = v
                .iter()
                .cloned()
                .max_by(|a, b| a.norm_sqr().total_cmp(&b.norm_sqr()))
                .unwrap();
            let phase = if pivot.norm() > 0.0 {
                pivot / pivot.norm()
            } else {
                Complex64::new(1.0, 0.0)
            };
            for z in &mut v {
                *z /= norm * phase;
            }
        }
        eigenvectors.push(v);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Eigenvalues only; noticeably faster than [`eig_dense`] for the large
/// stability operators where eigenvectors are not needed.
pub fn eig_values(matrix: &ComplexMatrix) -> Result<Vec<Complex64>, NumericsError> {
    check_eig_input(matrix)?;
    let values = matrix
        .to_ndarray()
        .eigvals()
        .map_err(|e| NumericsError::EigFailed(e.to_string()))?;
    let values: Vec<Complex64> = values.to_vec();
    let order = sort_order(&values);
    Ok(order.into_iter().map(|k| values[k]).collect())
}

/// Spectrum of a real symmetric matrix, eigenvalues ascending with matching
/// orthonormal eigenvectors as columns.
pub(crate) fn eig_real_symmetric(
    matrix: &Array2<f64>,
) -> Result<(Vec<f64>, Array2<f64>), NumericsError> {
    use ndarray_linalg::{Eigh, UPLO};
    ensure_single_threaded_blas();
    let (values, vectors) = matrix
        .eigh(UPLO::Lower)
        .map_err(|e| NumericsError::EigFailed(e.to_string()))?;
    Ok((values.to_vec(), vectors))
}

// ---------------------------------------------------------------------------
// Damped Newton root finder
// ---------------------------------------------------------------------------

/// How the Newton iteration obtains its Jacobian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JacobianMode {
    /// Central finite differences with step `h = scale * max(1, |x_i|)`.
    FiniteDifference { scale: f64 },
    /// Caller-supplied analytic Jacobian (see [`newton_solve_with_jacobian`]).
    Analytic,
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the infinity norm of the residual.
    pub residual_tolerance: f64,
    /// Fraction of the Newton step applied per iteration, in (0, 1].
    pub step_damping: f64,
    pub jacobian_mode: JacobianMode,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            residual_tolerance: 1e-11,
            step_damping: 1.0,
            jacobian_mode: JacobianMode::FiniteDifference { scale: 1e-6 },
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Solves `residual(x) = 0` by damped Newton iteration with a
/// finite-difference Jacobian.
pub fn newton_solve<F>(
    mut residual: F,
    guess: &[f64],
    config: &NewtonConfig,
) -> Result<NewtonSolution, NumericsError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    let scale = match config.jacobian_mode {
        JacobianMode::FiniteDifference { scale } => scale,
        JacobianMode::Analytic => {
            return Err(NumericsError::DimensionMismatch(
                "analytic mode requires newton_solve_with_jacobian".into(),
            ))
        }
    };
    let n = guess.len();
    let mut fd_plus = vec![0.0; n];
    let mut fd_minus = vec![0.0; n];
    let mut probe = vec![0.0; n];
    newton_iterate(
        &mut residual,
        |res, x| {
            probe.copy_from_slice(x);
            let mut jac = Array2::<f64>::zeros((n, n));
            for j in 0..n {
                let h = scale * x[j].abs().max(1.0);
                probe[j] = x[j] + h;
                res(&probe, &mut fd_plus);
                probe[j] = x[j] - h;
                res(&probe, &mut fd_minus);
                probe[j] = x[j];
                for i in 0..n {
                    jac[(i, j)] = (fd_plus[i] - fd_minus[i]) / (2.0 * h);
                }
            }
            jac
        },
        guess,
        config,
    )
}

/// Solves `residual(x) = 0` with a caller-supplied analytic Jacobian
/// (row-major, dimension n x n).
pub fn newton_solve_with_jacobian<F, J>(
    mut residual: F,
    mut jacobian: J,
    guess: &[f64],
    config: &NewtonConfig,
) -> Result<NewtonSolution, NumericsError>
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&[f64]) -> Array2<f64>,
{
    newton_iterate(&mut residual, |_res, x| jacobian(x), guess, config)
}

fn newton_iterate<F, J>(
    residual: &mut F,
    mut jacobian: J,
    guess: &[f64],
    config: &NewtonConfig,
) -> Result<NewtonSolution, NumericsError>
where
    F: FnMut(&[f64], &mut [f64]),
    J: FnMut(&mut F, &[f64]) -> Array2<f64>,
{
    assert!(config.residual_tolerance > 0.0, "tolerance must be positive");
    assert!(
        config.step_damping > 0.0 && config.step_damping <= 1.0,
        "damping must lie in (0, 1]"
    );
    ensure_single_threaded_blas();
    let n = guess.len();
    let mut x = guess.to_vec();
    let mut r = vec![0.0; n];
    residual(&x, &mut r);
    let mut r_norm = inf_norm(&r);

    for iter in 0..config.max_iterations {
        if r_norm <= config.residual_tolerance {
            return Ok(NewtonSolution {
                x,
                iterations: iter,
                residual_norm: r_norm,
            });
        }
        if !r_norm.is_finite() {
            return Err(NumericsError::NonFiniteState { t: iter as f64 });
        }
        let jac = jacobian(residual, &x);
        let rhs = Array1::from(r.clone());
        let delta = jac.solve(&rhs).map_err(|_| NumericsError::SingularJacobian {
            iterations: iter,
            residual: r_norm,
        })?;

        // Damped update with step halving when the residual grows.
        let mut factor = config.step_damping;
        let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
        for _ in 0..5 {
            let trial: Vec<f64> = x
                .iter()
                .zip(delta.iter())
                .map(|(xi, di)| xi - factor * di)
                .collect();
            let mut r_trial = vec![0.0; n];
            residual(&trial, &mut r_trial);
            let norm_trial = inf_norm(&r_trial);
            if best.as_ref().map_or(true, |(_, _, b)| norm_trial < *b) {
                best = Some((trial, r_trial, norm_trial));
            }
            if norm_trial.is_finite() && norm_trial < r_norm {
                break;
            }
            factor *= 0.5;
        }
        let (bx, br, bn) = best.expect("at least one trial");
        x = bx;
        r = br;
        r_norm = bn;
        if std::env::var_os("ASYMBEC_NEWTON_TRACE").is_some() {
            eprintln!("newton iter {iter}: residual {r_norm:.3e}");
        }
    }
    if r_norm <= config.residual_tolerance {
        return Ok(NewtonSolution {
            x,
            iterations: config.max_iterations,
            residual_norm: r_norm,
        });
    }
    Err(NumericsError::MaxIterationsExceeded {
        max_iterations: config.max_iterations,
        residual: r_norm,
        tolerance: config.residual_tolerance,
    })
}

// ---------------------------------------------------------------------------
// Fixed-step RK4
// ---------------------------------------------------------------------------

/// Time series produced by [`rk4_integrate`]. The final state is always the
/// last entry, independent of the thinning stride.
#[derive(Debug, Clone)]
pub struct Rk4Trace {
    pub times: Vec<f64>,
    pub states: Vec<Vec<Complex64>>,
}

impl Rk4Trace {
    pub fn final_state(&self) -> &[Complex64] {
        self.states.last().expect("trace is never empty")
    }
}

/// One classical RK4 step; `k1..k4` and `work` are scratch buffers of the
/// state dimension.
#[allow(clippy::too_many_arguments)]
pub fn rk4_step<F>(
    f: &mut F,
    t: f64,
    y: &mut [Complex64],
    dt: f64,
    k1: &mut [Complex64],
    k2: &mut [Complex64],
    k3: &mut [Complex64],
    k4: &mut [Complex64],
    work: &mut [Complex64],
) where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    let n = y.len();
    f(t, y, k1);
    for i in 0..n {
        work[i] = y[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, work, k2);
    for i in 0..n {
        work[i] = y[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, work, k3);
    for i in 0..n {
        work[i] = y[i] + dt * k3[i];
    }
    f(t + dt, work, k4);
    let sixth = dt / 6.0;
    for i in 0..n {
        y[i] += sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
    }
}

/// Integrates `y' = f(t, y)` with classical fixed-step RK4 from `t_span.0`
/// to `t_span.1`. Samples are recorded every `stride` steps (stride 0 is
/// treated as 1); the initial and final states are always included.
pub fn rk4_integrate<F>(
    mut f: F,
    y0: &[Complex64],
    t_span: (f64, f64),
    dt: f64,
    stride: usize,
) -> Result<Rk4Trace, NumericsError>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]),
{
    assert!(dt > 0.0, "dt must be positive");
    assert!(t_span.1 > t_span.0, "empty time span");
    let steps = ((t_span.1 - t_span.0) / dt - 1e-9).ceil().max(1.0) as usize;
    let stride = stride.max(1);
    let n = y0.len();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut work) = (
        vec![Complex64::default(); n],
        vec![Complex64::default(); n],
        vec![Complex64::default(); n],
        vec![Complex64::default(); n],
        vec![Complex64::default(); n],
    );
    let mut times = vec![t_span.0];
    let mut states = vec![y.clone()];
    for step in 0..steps {
        let t = t_span.0 + step as f64 * dt;
        rk4_step(&mut f, t, &mut y, dt, &mut k1, &mut k2, &mut k3, &mut k4, &mut work);
        let t_next = t_span.0 + (step + 1) as f64 * dt;
        if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(NumericsError::NonFiniteState { t: t_next });
        }
        if (step + 1) % stride == 0 || step + 1 == steps {
            times.push(t_next);
            states.push(y.clone());
        }
    }
    Ok(Rk4Trace { times, states })
}

// ---------------------------------------------------------------------------
// Spectral differentiation
// ---------------------------------------------------------------------------

/// Cached FFT plans and the squared-wavenumber table for one periodic grid.
/// Used by [`spectral_second_derivative`] and by the split-operator
/// propagator of the extended model.
pub struct Spectral1D {
    n: usize,
    dx: f64,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    ifft: std::sync::Arc<dyn rustfft::Fft<f64>>,
    /// k^2 for each FFT bin, with the usual wrap-around frequency layout.
    k_squared: Vec<f64>,
}

impl Spectral1D {
    pub fn new(n: usize, dx: f64) -> Result<Self, NumericsError> {
        if n < 2 || !n.is_power_of_two() {
            return Err(NumericsError::NotPowerOfTwo(n));
        }
        assert!(dx > 0.0, "dx must be positive");
        let mut planner = rustfft::FftPlanner::new();
        let fft = planner.plan_fft_forward(n);
        let ifft = planner.plan_fft_inverse(n);
        let length = n as f64 * dx;
        let k_squared = (0..n)
            .map(|j| {
                let m = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
                let k = 2.0 * std::f64::consts::PI * m as f64 / length;
                k * k
            })
            .collect();
        Ok(Self {
            n,
            dx,
            fft,
            ifft,
            k_squared,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn k_squared(&self) -> &[f64] {
        &self.k_squared
    }

    pub fn forward(&self, values: &mut [Complex64]) {
        self.fft.process(values);
    }

    /// Unnormalized inverse; callers divide by n once per round trip.
    pub fn inverse(&self, values: &mut [Complex64]) {
        self.ifft.process(values);
    }

    /// Scratch buffer sized for [`Self::forward_with`] / [`Self::inverse_with`].
    pub fn make_scratch(&self) -> Vec<Complex64> {
        let len = self
            .fft
            .get_inplace_scratch_len()
            .max(self.ifft.get_inplace_scratch_len());
        vec![Complex64::default(); len]
    }

    /// Allocation-free forward transform for hot loops.
    pub fn forward_with(&self, values: &mut [Complex64], scratch: &mut [Complex64]) {
        self.fft.process_with_scratch(values, scratch);
    }

    /// Allocation-free unnormalized inverse transform.
    pub fn inverse_with(&self, values: &mut [Complex64], scratch: &mut [Complex64]) {
        self.ifft.process_with_scratch(values, scratch);
    }

    /// Second derivative by multiplication with -k^2 in Fourier space.
    pub fn second_derivative(&self, values: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.n);
        let mut buf = values.to_vec();
        self.fft.process(&mut buf);
        for (v, k2) in buf.iter_mut().zip(&self.k_squared) {
            *v *= -k2;
        }
        self.ifft.process(&mut buf);
        let scale = 1.0 / self.n as f64;
        for v in &mut buf {
            *v *= scale;
        }
        buf
    }

    /// Dense matrix representation of the second-derivative operator
    /// (real, symmetric, circulant). Needed to assemble stability operators.
    pub fn second_derivative_matrix(&self) -> ComplexMatrix {
        let mut column = vec![Complex64::new(0.0, 0.0); self.n];
        column[0] = Complex64::new(1.0, 0.0);
        let column = self.second_derivative(&column);
        ComplexMatrix::from_fn(self.n, self.n, |i, j| {
            column[(self.n + i - j) % self.n]
        })
    }
}

/// Second derivative of uniformly sampled periodic data; the length must be
/// a power of two.
pub fn spectral_second_derivative(
    values: &[Complex64],
    dx: f64,
) -> Result<Vec<Complex64>, NumericsError> {
    let spectral = Spectral1D::new(values.len(), dx)?;
    Ok(spectral.second_derivative(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Determinant by plain LU with partial pivoting; test-only oracle,
    /// independent of the eigensolver path.
    fn det_oracle(m: &ComplexMatrix) -> Complex64 {
        let n = m.rows();
        let mut a: Vec<Vec<Complex64>> = (0..n)
            .map(|i| (0..n).map(|j| m.at(i, j)).collect())
            .collect();
        let mut det = c(1.0, 0.0);
        for k in 0..n {
            let pivot = (k..n)
                .max_by(|&p, &q| a[p][k].norm().total_cmp(&a[q][k].norm()))
                .unwrap();
            if a[pivot][k].norm() == 0.0 {
                return c(0.0, 0.0);
            }
            if pivot != k {
                a.swap(pivot, k);
                det = -det;
            }
            det *= a[k][k];
            for i in (k + 1)..n {
                let factor = a[i][k] / a[k][k];
                for j in k..n {
                    let sub = factor * a[k][j];
                    a[i][j] -= sub;
                }
            }
        }
        det
    }

    #[test]
    fn eig_symmetric_2x2() {
        let m = ComplexMatrix::from_rows(&[&[c(0.0, 0.0), c(-1.0, 0.0)], &[c(-1.0, 0.0), c(0.0, 0.0)]]);
        let eig = eig_dense(&m).unwrap();
        assert_abs_diff_eq!(eig.eigenvalues[0].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.eigenvalues[1].re, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.eigenvalues[0].im, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_identity() {
        let eig = eig_dense(&ComplexMatrix::identity(3)).unwrap();
        for v in &eig.eigenvalues {
            assert_abs_diff_eq!(v.re, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn eig_gain_loss_two_mode() {
        // [[i*gamma, -1], [-1, -i*gamma]] at gamma = 0.5 has eigenvalues
        // +-sqrt(1 - gamma^2); closed form evaluated here as the oracle.
        let gamma: f64 = 0.5;
        let expected = (1.0 - gamma * gamma).sqrt();
        let m = ComplexMatrix::from_rows(&[
            &[c(0.0, gamma), c(-1.0, 0.0)],
            &[c(-1.0, 0.0), c(0.0, -gamma)],
        ]);
        let eig = eig_dense(&m).unwrap();
        assert_abs_diff_eq!(eig.eigenvalues[0].re, -expected, epsilon = 1e-12);
        assert_abs_diff_eq!(eig.eigenvalues[1].re, expected, epsilon = 1e-12);
        assert!(eig.eigenvalues.iter().all(|v| v.im.abs() < 1e-12));
    }

    #[test]
    fn eig_residual_and_normalization() {
        let m = ComplexMatrix::from_fn(6, 6, |i, j| {
            c(
                ((i * 7 + j * 3) % 11) as f64 / 11.0 - 0.5,
                ((i * 5 + j * 13) % 17) as f64 / 17.0 - 0.5,
            )
        });
        let eig = eig_dense(&m).unwrap();
        let scale = m.frobenius_norm();
        for (lambda, v) in eig.eigenvalues.iter().zip(&eig.eigenvectors) {
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
            let hv = m.mul_vec(v);
            let residual: f64 = hv
                .iter()
                .zip(v)
                .map(|(a, b)| (a - lambda * b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!(
                residual <= 1e-10 * scale,
                "residual {residual:.3e} too large for lambda = {lambda}"
            );
        }
    }

    #[test]
    fn eig_rejects_non_square() {
        let m = ComplexMatrix::zeros(2, 3);
        assert!(matches!(
            eig_dense(&m),
            Err(NumericsError::NonSquare { rows: 2, cols: 3 })
        ));
    }

    #[test]
    fn eig_product_matches_determinant() {
        let m = ComplexMatrix::from_fn(4, 4, |i, j| {
            c(
                ((3 * i + j) % 7) as f64 / 7.0 - 0.4,
                ((i + 5 * j) % 5) as f64 / 5.0 - 0.3,
            )
        });
        let eig = eig_dense(&m).unwrap();
        let product = eig
            .eigenvalues
            .iter()
            .fold(c(1.0, 0.0), |acc, v| acc * v);
        let det = det_oracle(&m);
        assert!((product - det).norm() < 1e-10 * det.norm().max(1.0));
    }

    #[test]
    fn newton_scalar_sqrt2() {
        let sol = newton_solve(
            |x, r| r[0] = x[0] * x[0] - 2.0,
            &[1.0],
            &NewtonConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0_f64.sqrt(), epsilon = 1e-10);
        assert!(sol.residual_norm <= 1e-11);
    }

    #[test]
    fn newton_linear_single_step() {
        let sol = newton_solve(|x, r| r[0] = x[0], &[0.3], &NewtonConfig::default()).unwrap();
        assert_abs_diff_eq!(sol.x[0], 0.0, epsilon = 1e-10);
        assert!(sol.iterations <= 2, "linear problem took {} iterations", sol.iterations);
    }

    #[test]
    fn newton_reports_nonconvergence() {
        // x^2 + 1 has no real root; the iteration must fail loudly.
        let err = newton_solve(
            |x, r| r[0] = x[0] * x[0] + 1.0,
            &[1.0],
            &NewtonConfig {
                max_iterations: 25,
                ..NewtonConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            NumericsError::MaxIterationsExceeded { .. } | NumericsError::SingularJacobian { .. }
        ));
    }

    #[test]
    fn newton_singular_jacobian() {
        // Residual independent of the second unknown.
        let err = newton_solve(
            |x, r| {
                r[0] = x[0] - 1.0;
                r[1] = (x[0] - 1.0) * 2.0;
            },
            &[3.0, 3.0],
            &NewtonConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, NumericsError::SingularJacobian { .. }));
    }

    #[test]
    fn newton_analytic_jacobian() {
        let sol = newton_solve_with_jacobian(
            |x, r| r[0] = x[0] * x[0] - 2.0,
            |x| Array2::from_shape_vec((1, 1), vec![2.0 * x[0]]).unwrap(),
            &[1.0],
            &NewtonConfig {
                jacobian_mode: JacobianMode::Analytic,
                ..NewtonConfig::default()
            },
        )
        .unwrap();
        assert_abs_diff_eq!(sol.x[0], 2.0_f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn rk4_exponential_decay() {
        let trace = rk4_integrate(
            |_t, y, dy| dy[0] = -y[0],
            &[c(1.0, 0.0)],
            (0.0, 1.0),
            0.1,
            1,
        )
        .unwrap();
        let expected = (-1.0_f64).exp();
        assert!((trace.final_state()[0].re - expected).abs() < 1e-6);
    }

    #[test]
    fn rk4_phase_rotation_preserves_modulus() {
        let trace = rk4_integrate(
            |_t, y, dy| dy[0] = Complex64::i() * y[0],
            &[c(1.0, 0.0)],
            (0.0, 10.0),
            0.01,
            10,
        )
        .unwrap();
        for state in &trace.states {
            assert!((state[0].norm() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rk4_fourth_order_convergence() {
        // Global error on y' = -y should shrink ~16x when dt halves.
        let run = |dt: f64| {
            let trace = rk4_integrate(
                |_t, y, dy| dy[0] = -y[0],
                &[c(1.0, 0.0)],
                (0.0, 2.0),
                dt,
                usize::MAX,
            )
            .unwrap();
            (trace.final_state()[0].re - (-2.0_f64).exp()).abs()
        };
        let ratio = run(0.05) / run(0.025);
        assert!(
            (14.0..=18.0).contains(&ratio),
            "convergence ratio {ratio:.2} outside [14, 18]"
        );
    }

    #[test]
    fn rk4_detects_blowup() {
        // y' = y^2 from y(0) = 2 blows up at t = 0.5.
        let err = rk4_integrate(
            |_t, y, dy| dy[0] = y[0] * y[0],
            &[c(2.0, 0.0)],
            (0.0, 1.0),
            1e-3,
            1,
        )
        .unwrap_err();
        match err {
            NumericsError::NonFiniteState { t } => {
                assert!((0.4..0.6).contains(&t), "blowup reported at t = {t}")
            }
            other => panic!("expected NonFiniteState, got {other:?}"),
        }
    }

    #[test]
    fn spectral_fourier_mode() {
        let n = 64;
        let length = 2.0 * std::f64::consts::PI;
        let dx = length / n as f64;
        let k = 3.0;
        let values: Vec<Complex64> = (0..n)
            .map(|j| c((k * j as f64 * dx).sin(), 0.0))
            .collect();
        let second = spectral_second_derivative(&values, dx).unwrap();
        for (d, v) in second.iter().zip(&values) {
            assert!((d.re + k * k * v.re).abs() < 1e-10);
            assert!(d.im.abs() < 1e-10);
        }
    }

    #[test]
    fn spectral_constant_is_flat() {
        let values = vec![c(2.5, -1.0); 32];
        let second = spectral_second_derivative(&values, 0.1).unwrap();
        for d in &second {
            assert!(d.norm() < 1e-12);
        }
    }

    #[test]
    fn spectral_gaussian_analytic() {
        // psi = exp(-x^2/2) on [-10, 10) with 512 points;
        // psi'' = (x^2 - 1) exp(-x^2/2).
        let n = 512;
        let dx = 20.0 / n as f64;
        let xs: Vec<f64> = (0..n).map(|j| -10.0 + j as f64 * dx).collect();
        let values: Vec<Complex64> = xs.iter().map(|x| c((-x * x / 2.0).exp(), 0.0)).collect();
        let second = spectral_second_derivative(&values, dx).unwrap();
        for (d, x) in second.iter().zip(&xs) {
            let expected = (x * x - 1.0) * (-x * x / 2.0).exp();
            assert!(
                (d.re - expected).abs() < 1e-8,
                "x = {x}: {} vs {expected}",
                d.re
            );
        }
    }

    #[test]
    fn spectral_rejects_bad_length() {
        let values = vec![c(0.0, 0.0); 100];
        assert!(matches!(
            spectral_second_derivative(&values, 0.1),
            Err(NumericsError::NotPowerOfTwo(100))
        ));
    }

    #[test]
    fn spectral_matrix_agrees_with_transform() {
        let n = 32;
        let dx = 0.3;
        let spectral = Spectral1D::new(n, dx).unwrap();
        let length = n as f64 * dx;
        let k = 2.0 * std::f64::consts::PI * 2.0 / length;
        let mode: Vec<Complex64> = (0..n)
            .map(|j| c((k * j as f64 * dx).cos(), (k * j as f64 * dx).sin()))
            .collect();
        let direct = spectral.second_derivative(&mode);
        let matrix = spectral.second_derivative_matrix();
        let via_matrix = matrix.mul_vec(&mode);
        for (a, b) in direct.iter().zip(&via_matrix) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn eig_trace_identity(seed in 0u64..200) {
            // small random complex matrices: sum of eigenvalues == trace
            let dim = 2 + (seed % 5) as usize;
            let m = ComplexMatrix::from_fn(dim, dim, |i, j| {
                let a = ((seed + 1) as f64 * 0.37 + i as f64 * 1.3 + j as f64 * 0.7).sin();
                let b = ((seed + 1) as f64 * 0.61 + i as f64 * 0.9 + j as f64 * 1.7).cos();
                c(a, b)
            });
            let eig = eig_dense(&m).unwrap();
            let sum: Complex64 = eig.eigenvalues.iter().sum();
            let trace = m.trace();
            let scale = m.frobenius_norm().max(1.0);
            prop_assert!((sum - trace).norm() <= 1e-10 * scale);
        }

        #[test]
        fn spectral_commutes_with_translation(shift in 1usize..31, mode in 1usize..8) {
            let n = 32;
            let dx = 0.25;
            let length = n as f64 * dx;
            let k = 2.0 * std::f64::consts::PI * mode as f64 / length;
            let f = |j: usize| {
                let x = j as f64 * dx;
                c((k * x).sin() + 0.3 * (2.0 * k * x).cos(), 0.5 * (k * x).cos())
            };
            let values: Vec<Complex64> = (0..n).map(f).collect();
            let shifted: Vec<Complex64> = (0..n).map(|j| f((j + shift) % n)).collect();
            let d = spectral_second_derivative(&values, dx).unwrap();
            let d_shifted = spectral_second_derivative(&shifted, dx).unwrap();
            for j in 0..n {
                prop_assert!((d[(j + shift) % n] - d_shifted[j]).norm() < 1e-9);
            }
        }
    }
}
