//! The asymmetric two-mode model: gain-loss Hamiltonian, linear and
//! nonlinear spectra, the crossing point where one eigenvalue becomes real,
//! Bogoliubov-de Gennes stability, time evolution and Bloch coordinates.
//!
//! Conventions. Well 1 is the gain well, well 2 the loss well. Stationary
//! states carry the gauge `c1` real and nonnegative. Perturbations evolve
//! as `exp(-i omega t)`, so a positive imaginary part of a stability
//! eigenvalue means growth.

use crate::numerics::{
    self, eig_values, newton_solve, ComplexMatrix, NewtonConfig, NumericsError,
};
use num_complex::Complex64;
use std::f64::consts::PI;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TwoModeError {
    #[error("invalid two-mode parameters: {0}")]
    InvalidParams(String),
    #[error(
        "no isolated crossing exists at a_I = 0: the imaginary part of the spectrum \
         vanishes identically below the exceptional point"
    )]
    NoIsolatedCrossing,
    #[error(
        "gain dominates for this asymmetry pair (negative radicand); \
         no stationary point exists at any coupling strength"
    )]
    GainDominates,
    #[error("crossing search failed: {0}")]
    CrossingFailed(String),
    #[error("no stationary solution found from any seed")]
    NoSolutionFound,
    #[error("input violates the stationarity bound: residual {residual:.3e} > {bound:.3e}")]
    NotStationary { residual: f64, bound: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Imaginary-part tolerance for the three-way stability classification.
pub const STABILITY_TOL: f64 = 1e-8;

/// Dimensionless parameters of the two-mode model.
///
/// `gamma` is the overall in/out-coupling strength, `a_i` the imaginary
/// (gain-loss) asymmetry, `a_r` the real on-site asymmetry and `u` the
/// macroscopic interaction strength. Negative `a_i` means the particle
/// loss is stronger than the gain; the sign is stored as given.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeParams {
    pub gamma: f64,
    pub a_i: f64,
    pub a_r: f64,
    pub u: f64,
}

impl TwoModeParams {
    pub fn new(gamma: f64, a_i: f64, a_r: f64, u: f64) -> Result<Self, TwoModeError> {
        let p = Self { gamma, a_i, a_r, u };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TwoModeError> {
        if !(self.gamma.is_finite()
            && self.a_i.is_finite()
            && self.a_r.is_finite()
            && self.u.is_finite())
        {
            return Err(TwoModeError::InvalidParams("non-finite parameter".into()));
        }
        if self.gamma < 0.0 {
            return Err(TwoModeError::InvalidParams(format!(
                "gamma = {} must be nonnegative",
                self.gamma
            )));
        }
        if self.a_i.abs() >= 1.0 {
            return Err(TwoModeError::InvalidParams(format!(
                "|a_I| = {} must be below 1",
                self.a_i.abs()
            )));
        }
        Ok(())
    }
}

/// Two complex mode amplitudes; well 1 first.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoModeState {
    pub c1: Complex64,
    pub c2: Complex64,
}

impl TwoModeState {
    pub fn new(c1: Complex64, c2: Complex64) -> Self {
        Self { c1, c2 }
    }

    pub fn zero() -> Self {
        Self::new(Complex64::default(), Complex64::default())
    }

    pub fn norm_sqr(&self) -> f64 {
        self.c1.norm_sqr() + self.c2.norm_sqr()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::new(self.c1 * factor, self.c2 * factor)
    }

    pub fn distance(&self, other: &Self) -> f64 {
        ((self.c1 - other.c1).norm_sqr() + (self.c2 - other.c2).norm_sqr()).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.c1.re.is_finite()
            && self.c1.im.is_finite()
            && self.c2.re.is_finite()
            && self.c2.im.is_finite()
    }
}

/// Bloch-space point: norm as radius, polar angle `theta` in [0, pi]
/// (theta = 0 is the gain well), azimuth `phi` in [0, 2 pi).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlochPoint {
    pub r: f64,
    pub theta: f64,
    pub phi: f64,
}

impl BlochPoint {
    pub fn new(r: f64, theta: f64, phi: f64) -> Self {
        Self { r, theta, phi }
    }

    /// Cartesian embedding: z = R cos(theta), x = R sin(theta) cos(phi),
    /// y = R sin(theta) sin(phi).
    pub fn cartesian(&self) -> [f64; 3] {
        let (st, ct) = (self.theta.sin(), self.theta.cos());
        [
            self.r * st * self.phi.cos(),
            self.r * st * self.phi.sin(),
            self.r * ct,
        ]
    }

    /// Euclidean distance in the Cartesian embedding.
    pub fn distance(&self, other: &Self) -> f64 {
        let a = self.cartesian();
        let b = other.cartesian();
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }
}

/// Branch tag of a stationary state. `Minus` marks the branch holding the
/// ground state at gamma = 0; along the paper-relevant parameter regimes it
/// is also the branch whose imaginary part crosses zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BranchLabel {
    Minus,
    Plus,
}

impl fmt::Display for BranchLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BranchLabel::Minus => write!(f, "minus"),
            BranchLabel::Plus => write!(f, "plus"),
        }
    }
}

/// A solved stationary state of the two-mode Gross-Pitaevskii equation.
#[derive(Debug, Clone)]
pub struct TwoModeStationary {
    pub state: TwoModeState,
    pub mu: Complex64,
    pub params: TwoModeParams,
    pub branch_label: BranchLabel,
}

impl TwoModeStationary {
    pub fn norm(&self) -> f64 {
        self.state.norm()
    }

    /// Infinity norm of `H(psi) psi - mu psi`.
    pub fn residual_norm(&self) -> f64 {
        let (r1, r2) = gpe_residual(&self.params, &self.state, self.mu);
        r1.norm().max(r2.norm())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stability {
    Stable,
    Attractor,
    Unstable,
}

impl fmt::Display for Stability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stability::Stable => write!(f, "stable"),
            Stability::Attractor => write!(f, "attractor"),
            Stability::Unstable => write!(f, "unstable"),
        }
    }
}

/// Bogoliubov-de Gennes eigenvalues with their three-way classification.
#[derive(Debug, Clone)]
pub struct BdGSpectrum {
    pub omegas: Vec<Complex64>,
    pub classification: Stability,
}

impl BdGSpectrum {
    /// Eigenvalues without the trivial phase mode (the one closest to zero).
    pub fn nontrivial(&self) -> Vec<Complex64> {
        let trivial = trivial_index(&self.omegas);
        self.omegas
            .iter()
            .enumerate()
            .filter(|(k, _)| Some(*k) != trivial)
            .map(|(_, w)| *w)
            .collect()
    }
}

pub(crate) fn trivial_index(omegas: &[Complex64]) -> Option<usize> {
    omegas
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.norm().total_cmp(&b.norm()))
        .map(|(k, _)| k)
}

/// Classifies a BdG spectrum after removing the trivial phase mode.
pub(crate) fn classify_bdg(omegas: &[Complex64], tol: f64) -> Stability {
    let trivial = trivial_index(omegas);
    let mut any_growing = false;
    let mut all_decaying = true;
    for (k, w) in omegas.iter().enumerate() {
        if Some(k) == trivial {
            continue;
        }
        if w.im > tol {
            any_growing = true;
        }
        if w.im >= -tol {
            all_decaying = false;
        }
    }
    if any_growing {
        Stability::Unstable
    } else if all_decaying {
        Stability::Attractor
    } else {
        Stability::Stable
    }
}

/// Laboratory time scale of the trapping potential, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabScale {
    pub tau: f64,
}

// ---------------------------------------------------------------------------
// Hamiltonian and linear spectrum
// ---------------------------------------------------------------------------

/// The 2x2 two-mode Hamiltonian. With a state supplied, the nonlinear
/// diagonal `u |c_i|^2` is included.
pub fn hamiltonian(params: &TwoModeParams, state: Option<&TwoModeState>) -> ComplexMatrix {
    let g = params.gamma;
    let mut h11 = Complex64::new(params.a_r, g * (1.0 + params.a_i));
    let mut h22 = Complex64::new(-params.a_r, -g * (1.0 - params.a_i));
    if let Some(s) = state {
        h11 += params.u * s.c1.norm_sqr();
        h22 += params.u * s.c2.norm_sqr();
    }
    let minus_one = Complex64::new(-1.0, 0.0);
    ComplexMatrix::from_rows(&[&[h11, minus_one], &[minus_one, h22]])
}

/// Closed-form linear eigenvalues `i gamma a_I -+ sqrt(1 + (a_R + i gamma)^2)`,
/// returned as `(mu_minus, mu_plus)` with `mu_minus` the ground state at
/// gamma = 0.
pub fn linear_eigenvalues(params: &TwoModeParams) -> (Complex64, Complex64) {
    let shift = Complex64::new(0.0, params.gamma * params.a_i);
    let z = Complex64::new(params.a_r, params.gamma);
    let s = (Complex64::new(1.0, 0.0) + z * z).sqrt();
    (shift - s, shift + s)
}

/// Eigenvector of the linear Hamiltonian for eigenvalue `mu`, unit norm.
fn linear_eigenvector(params: &TwoModeParams, mu: Complex64) -> TwoModeState {
    // (h11 - mu) c1 - c2 = 0 with coupling -1, so (1, h11 - mu) solves it.
    let h = hamiltonian(params, None);
    let c2 = h.at(0, 0) - mu;
    let norm = (1.0 + c2.norm_sqr()).sqrt();
    TwoModeState::new(Complex64::new(1.0 / norm, 0.0), c2 / norm)
}

// ---------------------------------------------------------------------------
// Crossing point of the linear spectrum
// ---------------------------------------------------------------------------

/// Gap function whose positive root is the crossing: one branch satisfies
/// `Im mu = gamma a_I +- Im sqrt(1 + (a_R + i gamma)^2) = 0` exactly when
/// the magnitudes |Im sqrt(...)| and gamma |a_I| coincide.
fn crossing_gap(a_i: f64, a_r: f64, gamma: f64) -> f64 {
    let z = Complex64::new(a_r, gamma);
    let s = (Complex64::new(1.0, 0.0) + z * z).sqrt();
    s.im.abs() - gamma * a_i.abs()
}

/// Right-hand side of the closed-form crossing condition,
/// `(1 - a_R^2 (a_I^-2 - 1)) / (1 - a_I^2)`. Deriving the condition from
/// the spectrum shows this equals the *square* of the crossing coupling,
/// so callers take its square root; the bisection in [`crossing_gamma`]
/// verifies that reading.
pub fn crossing_gamma_squared(a_i: f64, a_r: f64) -> Result<f64, TwoModeError> {
    if a_i == 0.0 {
        return Err(TwoModeError::NoIsolatedCrossing);
    }
    if a_i.abs() >= 1.0 {
        return Err(TwoModeError::InvalidParams(format!(
            "|a_I| = {} must be below 1",
            a_i.abs()
        )));
    }
    let radicand = (1.0 - a_r * a_r * (1.0 / (a_i * a_i) - 1.0)) / (1.0 - a_i * a_i);
    if radicand < -1e-14 {
        return Err(TwoModeError::GainDominates);
    }
    Ok(radicand.max(0.0))
}

fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, iterations: usize) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        let f_mid = f(mid);
        if (f_mid <= 0.0) == (f_lo <= 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// The coupling strength `gamma_0 >= 0` at which one linear eigenvalue
/// becomes real. Computed from the closed form and refined/verified by a
/// bisection root find on the spectrum itself.
pub fn crossing_gamma(a_i: f64, a_r: f64) -> Result<f64, TwoModeError> {
    let gamma_sq = crossing_gamma_squared(a_i, a_r)?;
    let gamma_formula = gamma_sq.sqrt();
    if gamma_formula < 1e-9 {
        // Depletion boundary: the crossing sits at gamma = 0 where the
        // spectrum is trivially real.
        return Ok(0.0);
    }

    // Bracket the sign change of the gap around the closed-form value.
    let gap = |g: f64| crossing_gap(a_i, a_r, g);
    let mut lo = 0.5 * gamma_formula;
    let mut hi = 1.5 * gamma_formula;
    let mut widen = 0;
    while gap(lo) >= 0.0 && widen < 40 {
        lo *= 0.5;
        widen += 1;
    }
    while gap(hi) <= 0.0 && widen < 80 {
        hi *= 1.5;
        widen += 1;
    }
    if gap(lo) >= 0.0 || gap(hi) <= 0.0 {
        return Err(TwoModeError::CrossingFailed(format!(
            "could not bracket the crossing near gamma = {gamma_formula}"
        )));
    }
    let gamma0 = bisect(gap, lo, hi, 200);

    // Verify on the actual branch values.
    let params = TwoModeParams {
        gamma: gamma0,
        a_i,
        a_r,
        u: 0.0,
    };
    let (mu_minus, mu_plus) = linear_eigenvalues(&params);
    let im_min = mu_minus.im.abs().min(mu_plus.im.abs());
    if im_min > 1e-10 {
        return Err(TwoModeError::CrossingFailed(format!(
            "residual imaginary part {im_min:.3e} at gamma = {gamma0}"
        )));
    }
    Ok(gamma0)
}

// ---------------------------------------------------------------------------
// Nonlinear stationary states
// ---------------------------------------------------------------------------

fn gpe_residual(
    params: &TwoModeParams,
    state: &TwoModeState,
    mu: Complex64,
) -> (Complex64, Complex64) {
    let h11 = Complex64::new(params.a_r, params.gamma * (1.0 + params.a_i))
        + params.u * state.c1.norm_sqr();
    let h22 = Complex64::new(-params.a_r, -params.gamma * (1.0 - params.a_i))
        + params.u * state.c2.norm_sqr();
    (
        (h11 - mu) * state.c1 - state.c2,
        (h22 - mu) * state.c2 - state.c1,
    )
}

/// Stationarity gap in polar form. With `c1 = A cos(theta/2)` and
/// `c2 = A sin(theta/2) e^{i phi}` (global phase gauged away), eliminating
/// the chemical potential leaves
/// `sin(phi) = gamma sin(theta)` together with
/// `(2 a_R + u A^2 cos(theta)) sin(theta) + 2 cos(theta) cos(phi) = 0`,
/// where `cos(phi) = sign * sqrt(1 - gamma^2 sin^2(theta))`. Scanning both
/// signs over theta finds every stationary state, including branches
/// disconnected from the linear eigenvectors.
fn polar_gap(params: &TwoModeParams, norm: f64, theta: f64, sign: f64) -> Option<f64> {
    let st = theta.sin();
    let ct = theta.cos();
    let disc = 1.0 - (params.gamma * st).powi(2);
    if disc < 0.0 {
        return None;
    }
    let cos_phi = sign * disc.sqrt();
    Some((2.0 * params.a_r + params.u * norm * norm * ct) * st + 2.0 * ct * cos_phi)
}

fn state_from_polar(norm: f64, theta: f64, phi: f64) -> TwoModeState {
    TwoModeState::new(
        Complex64::new(norm * (theta / 2.0).cos(), 0.0),
        Complex64::from_polar(norm * (theta / 2.0).sin(), phi),
    )
}

fn mu_from_polar(params: &TwoModeParams, norm: f64, theta: f64, phi: f64) -> Complex64 {
    // First stationarity equation solved for the chemical potential:
    // mu = h11 + u A^2 cos^2(theta/2) - tan(theta/2) e^{i phi}.
    let h11 = Complex64::new(params.a_r, params.gamma * (1.0 + params.a_i));
    h11 + params.u * (norm * (theta / 2.0).cos()).powi(2)
        - (theta / 2.0).tan() * Complex64::from_polar(1.0, phi)
}

/// Candidate stationary states from the polar reduction, prior to the
/// Newton polish. Deterministic: fixed scan grid, fixed bisection depth.
fn polar_candidates(params: &TwoModeParams, norm: f64) -> Vec<(TwoModeState, Complex64)> {
    const SCAN_POINTS: usize = 2048;
    let eps = 1e-7;
    let mut out = Vec::new();
    for sign in [1.0, -1.0] {
        let mut prev: Option<(f64, f64)> = None;
        for k in 0..=SCAN_POINTS {
            let theta = eps + (PI - 2.0 * eps) * k as f64 / SCAN_POINTS as f64;
            let value = polar_gap(params, norm, theta, sign);
            if let (Some((t_prev, v_prev)), Some(v)) = (prev, value) {
                if v_prev == 0.0 || (v_prev < 0.0) != (v < 0.0) {
                    let root = bisect(
                        |t| polar_gap(params, norm, t, sign).unwrap_or(f64::NAN),
                        t_prev,
                        theta,
                        100,
                    );
                    let sin_phi = params.gamma * root.sin();
                    let cos_phi = sign * (1.0 - sin_phi * sin_phi).max(0.0).sqrt();
                    let phi = sin_phi.atan2(cos_phi).rem_euclid(2.0 * PI);
                    out.push((
                        state_from_polar(norm, root, phi),
                        mu_from_polar(params, norm, root, phi),
                    ));
                }
            }
            prev = value.map(|v| (theta, v));
        }
    }
    // Boundary of the valid azimuth region, cos(phi) = 0: hosts the broken
    // states of the non-interacting limit, which the sign-change scan
    // cannot see (the gap only touches zero there).
    if params.gamma > 1.0 {
        for theta in [
            (1.0 / params.gamma).asin(),
            PI - (1.0 / params.gamma).asin(),
        ] {
            let phi = PI / 2.0;
            out.push((
                state_from_polar(norm, theta, phi),
                mu_from_polar(params, norm, theta, phi),
            ));
        }
    }
    out
}

/// Newton-polishes a candidate at fixed norm. Unknowns are
/// `[Re c1, Re c2, Im c2, Re mu, Im mu]` with the gauge `Im c1 = 0`.
fn polish_fixed_norm(
    params: &TwoModeParams,
    norm: f64,
    seed_state: &TwoModeState,
    seed_mu: Complex64,
) -> Option<(TwoModeState, Complex64)> {
    let target = norm * norm;
    let p = *params;
    let residual = move |x: &[f64], r: &mut [f64]| {
        let state = TwoModeState::new(Complex64::new(x[0], 0.0), Complex64::new(x[1], x[2]));
        let mu = Complex64::new(x[3], x[4]);
        let (r1, r2) = gpe_residual(&p, &state, mu);
        r[0] = r1.re;
        r[1] = r1.im;
        r[2] = r2.re;
        r[3] = r2.im;
        r[4] = state.norm_sqr() - target;
    };
    // Rotate the seed into the gauge before polishing.
    let seed = gauge_fixed(seed_state);
    let guess = [seed.c1.re, seed.c2.re, seed.c2.im, seed_mu.re, seed_mu.im];
    let config = NewtonConfig {
        max_iterations: 60,
        residual_tolerance: 1e-12,
        ..NewtonConfig::default()
    };
    let sol = newton_solve(residual, &guess, &config).ok()?;
    let state = TwoModeState::new(
        Complex64::new(sol.x[0], 0.0),
        Complex64::new(sol.x[1], sol.x[2]),
    );
    let mu = Complex64::new(sol.x[3], sol.x[4]);
    Some((gauge_fixed(&state), mu))
}

/// Applies the gauge `c1` real and nonnegative (falling back to `c2` real
/// and nonnegative when well 1 is empty).
fn gauge_fixed(state: &TwoModeState) -> TwoModeState {
    let pivot = if state.c1.norm() > 1e-14 {
        state.c1
    } else if state.c2.norm() > 1e-14 {
        state.c2
    } else {
        return *state;
    };
    let phase = pivot / pivot.norm();
    TwoModeState::new(state.c1 / phase, state.c2 / phase)
}

/// All stationary states of the two-mode Gross-Pitaevskii equation at the
/// given norm. States are gauge-fixed, deduplicated and sorted by
/// descending imaginary part of the chemical potential (ties by ascending
/// real part); the first state carries the `Minus` label.
pub fn nonlinear_eigenstates(
    params: &TwoModeParams,
    norm: f64,
) -> Result<Vec<TwoModeStationary>, TwoModeError> {
    nonlinear_eigenstates_with_seeds(params, norm, &[])
}

/// Like [`nonlinear_eigenstates`] but with additional caller seeds, e.g.
/// continuation states from a neighbouring coupling strength.
pub fn nonlinear_eigenstates_with_seeds(
    params: &TwoModeParams,
    norm: f64,
    extra_seeds: &[(TwoModeState, Complex64)],
) -> Result<Vec<TwoModeStationary>, TwoModeError> {
    params.validate()?;
    if !(norm > 0.0) {
        return Err(TwoModeError::InvalidParams(format!(
            "norm = {norm} must be positive"
        )));
    }

    let mut candidates = polar_candidates(params, norm);
    let (mu_minus, mu_plus) = linear_eigenvalues(params);
    for mu in [mu_minus, mu_plus] {
        let v = linear_eigenvector(params, mu);
        candidates.push((v.scaled(norm), mu));
    }
    candidates.extend_from_slice(extra_seeds);

    let mut solved: Vec<(TwoModeState, Complex64)> = Vec::new();
    for (state, mu) in &candidates {
        if let Some((s, m)) = polish_fixed_norm(params, norm, state, *mu) {
            let duplicate = solved
                .iter()
                .any(|(s0, m0)| s.distance(s0) + (m - m0).norm() < 1e-8);
            if !duplicate {
                solved.push((s, m));
            }
        }
    }

    solved.sort_by(|(_, ma), (_, mb)| mb.im.total_cmp(&ma.im).then(ma.re.total_cmp(&mb.re)));
    Ok(solved
        .into_iter()
        .enumerate()
        .map(|(k, (state, mu))| TwoModeStationary {
            state,
            mu,
            params: *params,
            branch_label: if k == 0 {
                BranchLabel::Minus
            } else {
                BranchLabel::Plus
            },
        })
        .collect())
}

/// Coupling strength at which the crossing branch of the unit-norm
/// nonlinear spectrum reaches `Im mu = 0`, for effective interaction
/// `u_eff`. Reduces to [`crossing_gamma`] at `u_eff = 0`.
pub fn nonlinear_crossing_gamma(a_i: f64, a_r: f64, u_eff: f64) -> Result<f64, TwoModeError> {
    if a_i == 0.0 {
        return Err(TwoModeError::NoIsolatedCrossing);
    }
    if u_eff.abs() < 1e-12 {
        return crossing_gamma(a_i, a_r);
    }
    // The branch that can cross is extremal in the direction opposite to
    // the overall gain-loss shift: maximal Im mu for a_i < 0, minimal for
    // a_i > 0. Candidate chemical potentials from the polar reduction are
    // accurate enough here; no Newton polish needed inside the bisection.
    let sign = if a_i < 0.0 { 1.0 } else { -1.0 };
    let f = |gamma: f64| -> Result<f64, TwoModeError> {
        let params = TwoModeParams {
            gamma,
            a_i,
            a_r,
            u: u_eff,
        };
        let candidates = polar_candidates(&params, 1.0);
        let im = if a_i < 0.0 {
            candidates
                .iter()
                .map(|(_, mu)| mu.im)
                .fold(f64::NEG_INFINITY, f64::max)
        } else {
            candidates
                .iter()
                .map(|(_, mu)| mu.im)
                .fold(f64::INFINITY, f64::min)
        };
        if !im.is_finite() {
            return Err(TwoModeError::NoSolutionFound);
        }
        Ok(sign * im)
    };

    let mut lo = 1e-4;
    let mut f_lo = f(lo)?;
    if f_lo > 0.0 {
        return Err(TwoModeError::CrossingFailed(
            "crossing branch already real at vanishing coupling".into(),
        ));
    }
    let mut hi = lo;
    let mut found = false;
    while hi < 4.0 {
        hi += 0.05;
        let f_hi = f(hi)?;
        if (f_hi > 0.0) != (f_lo > 0.0) {
            found = true;
            break;
        }
        lo = hi;
        f_lo = f_hi;
    }
    if !found {
        return Err(TwoModeError::CrossingFailed(format!(
            "no crossing of the nonlinear branch below gamma = {hi}"
        )));
    }
    Ok(bisect(|g| f(g).unwrap_or(f64::NAN), lo, hi, 100))
}

/// The self-selected stationary state with a real chemical potential at the
/// given coupling. Exploits the norm scaling `psi = N phi`, which maps the
/// problem onto the unit-norm one with `u_eff = u N^2`: the returned norm
/// solves `crossing(u N^2) = gamma`. `Ok(None)` means no nonnegative norm
/// does so and the condensate depletes (or, past the turning point of the
/// crossing curve, no attracting norm exists).
pub fn stationary_norm(params: &TwoModeParams) -> Result<Option<TwoModeStationary>, TwoModeError> {
    params.validate()?;
    if params.u == 0.0 {
        return Err(TwoModeError::InvalidParams(
            "stationary_norm needs a nonzero interaction".into(),
        ));
    }
    if params.a_i == 0.0 {
        return Err(TwoModeError::NoIsolatedCrossing);
    }
    let gamma0 = crossing_gamma(params.a_i, params.a_r)?;
    let target = params.gamma;
    if (target - gamma0).abs() <= 1e-12 {
        return Ok(Some(TwoModeStationary {
            state: TwoModeState::zero(),
            mu: Complex64::new(-params.a_r / params.a_i, 0.0),
            params: *params,
            branch_label: BranchLabel::Minus,
        }));
    }

    // March the effective interaction away from zero (with the sign of u)
    // until the crossing curve brackets the requested coupling.
    let direction = params.u.signum();
    let step = 0.25;
    let mut u_lo = 0.0;
    let mut f_lo = gamma0 - target;
    let mut bracket = None;
    for k in 1..=256 {
        let u_hi = direction * step * k as f64;
        let f_hi = match nonlinear_crossing_gamma(params.a_i, params.a_r, u_hi) {
            Ok(g) => g - target,
            Err(_) => break,
        };
        if (f_hi > 0.0) != (f_lo > 0.0) {
            bracket = Some((u_lo, u_hi));
            break;
        }
        u_lo = u_hi;
        f_lo = f_hi;
    }
    let Some((mut b_lo, mut b_hi)) = bracket else {
        return Ok(None);
    };
    for _ in 0..80 {
        let mid = 0.5 * (b_lo + b_hi);
        let f_mid = match nonlinear_crossing_gamma(params.a_i, params.a_r, mid) {
            Ok(g) => g - target,
            Err(_) => f64::NAN,
        };
        if !f_mid.is_finite() {
            break;
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            b_lo = mid;
            f_lo = f_mid;
        } else {
            b_hi = mid;
        }
    }
    let u_eff = 0.5 * (b_lo + b_hi);
    let norm = (u_eff / params.u).max(0.0).sqrt();

    // Unit-norm crossing state at the solved effective interaction, then
    // rescale; the chemical potential is invariant under the scaling.
    let unit_params = TwoModeParams {
        gamma: target,
        u: u_eff,
        ..*params
    };
    let states = nonlinear_eigenstates(&unit_params, 1.0)?;
    let Some(best) = states
        .into_iter()
        .min_by(|a, b| a.mu.im.abs().total_cmp(&b.mu.im.abs()))
    else {
        return Err(TwoModeError::NoSolutionFound);
    };

    // Final polish with Im mu = 0 imposed structurally and the norm free.
    let p = *params;
    let seed_state = best.state.scaled(norm);
    let residual = move |x: &[f64], r: &mut [f64]| {
        let state = TwoModeState::new(Complex64::new(x[0], 0.0), Complex64::new(x[1], x[2]));
        let mu = Complex64::new(x[3], 0.0);
        let (r1, r2) = gpe_residual(&p, &state, mu);
        r[0] = r1.re;
        r[1] = r1.im;
        r[2] = r2.re;
        r[3] = r2.im;
    };
    let seed = gauge_fixed(&seed_state);
    let guess = [seed.c1.re, seed.c2.re, seed.c2.im, best.mu.re];
    let config = NewtonConfig {
        max_iterations: 60,
        residual_tolerance: 1e-12,
        ..NewtonConfig::default()
    };
    let sol = newton_solve(residual, &guess, &config)?;
    let state = gauge_fixed(&TwoModeState::new(
        Complex64::new(sol.x[0], 0.0),
        Complex64::new(sol.x[1], sol.x[2]),
    ));
    Ok(Some(TwoModeStationary {
        state,
        mu: Complex64::new(sol.x[3], 0.0),
        params: *params,
        branch_label: BranchLabel::Minus,
    }))
}

// ---------------------------------------------------------------------------
// Bogoliubov-de Gennes stability
// ---------------------------------------------------------------------------

/// Stability eigenvalues of a stationary state from the 4x4 linearization
/// [[A, B], [-B*, -A*]] with `A = H_lin + 2u diag(|psi_i|^2) - mu` and
/// `B = u diag(psi_i^2)`; the stars are entrywise conjugation.
pub fn bdg_two_mode(stationary: &TwoModeStationary) -> Result<BdGSpectrum, TwoModeError> {
    let residual = stationary.residual_norm();
    let bound = 1e-8 * stationary.norm().max(1.0);
    if residual > bound {
        return Err(TwoModeError::NotStationary { residual, bound });
    }
    let p = &stationary.params;
    let s = &stationary.state;
    let h_lin = hamiltonian(p, None);
    let a = ComplexMatrix::from_fn(2, 2, |i, j| {
        let mut v = h_lin.at(i, j);
        if i == j {
            let density = if i == 0 {
                s.c1.norm_sqr()
            } else {
                s.c2.norm_sqr()
            };
            v += 2.0 * p.u * density - stationary.mu;
        }
        v
    });
    let b = ComplexMatrix::from_fn(2, 2, |i, j| {
        if i == j {
            let amp = if i == 0 { s.c1 } else { s.c2 };
            p.u * amp * amp
        } else {
            Complex64::default()
        }
    });
    let minus_b_conj = ComplexMatrix::from_fn(2, 2, |i, j| -b.at(i, j).conj());
    let minus_a_conj = ComplexMatrix::from_fn(2, 2, |i, j| -a.at(i, j).conj());
    let m = ComplexMatrix::from_blocks(&a, &b, &minus_b_conj, &minus_a_conj);
    let omegas = eig_values(&m)?;
    let classification = classify_bdg(&omegas, STABILITY_TOL);
    Ok(BdGSpectrum {
        omegas,
        classification,
    })
}

// ---------------------------------------------------------------------------
// Time evolution
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: TwoModeState,
    pub bloch: BlochPoint,
    pub norm: f64,
}

/// Blow-up marker: the time and norm at which a trajectory exceeded the
/// divergence cap (or turned non-finite).
#[derive(Debug, Clone, Copy)]
pub struct Divergence {
    pub t: f64,
    pub norm: f64,
}

#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    pub samples: Vec<TrajectorySample>,
    pub divergence: Option<Divergence>,
}

impl TrajectoryRecord {
    pub fn final_sample(&self) -> &TrajectorySample {
        self.samples.last().expect("trajectory is never empty")
    }
}

/// Right-hand side of `i psi' = H(psi) psi`.
#[inline]
pub(crate) fn equation_of_motion(
    params: &TwoModeParams,
    c1: Complex64,
    c2: Complex64,
) -> (Complex64, Complex64) {
    let h11 =
        Complex64::new(params.a_r, params.gamma * (1.0 + params.a_i)) + params.u * c1.norm_sqr();
    let h22 =
        Complex64::new(-params.a_r, -params.gamma * (1.0 - params.a_i)) + params.u * c2.norm_sqr();
    let i = Complex64::i();
    (-i * (h11 * c1 - c2), -i * (h22 * c2 - c1))
}

/// Exact norm derivative along the flow:
/// `d(N^2)/dt = 2 gamma [(1 + a_I)|c1|^2 - (1 - a_I)|c2|^2]`.
pub fn norm_law_rate(params: &TwoModeParams, state: &TwoModeState) -> f64 {
    2.0 * params.gamma
        * ((1.0 + params.a_i) * state.c1.norm_sqr() - (1.0 - params.a_i) * state.c2.norm_sqr())
}

/// RK4 evolution with the default divergence cap `10 max(1, initial norm)`
/// and every step recorded.
pub fn evolve_two_mode(
    initial: &TwoModeState,
    params: &TwoModeParams,
    t_final: f64,
    dt: f64,
) -> Result<TrajectoryRecord, TwoModeError> {
    let cap = 10.0 * initial.norm().max(1.0);
    evolve_two_mode_with(initial, params, t_final, dt, 1, cap)
}

/// RK4 evolution recording every `stride`-th step, halting early with a
/// divergence flag once the norm exceeds `norm_cap`.
pub fn evolve_two_mode_with(
    initial: &TwoModeState,
    params: &TwoModeParams,
    t_final: f64,
    dt: f64,
    stride: usize,
    norm_cap: f64,
) -> Result<TrajectoryRecord, TwoModeError> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(TwoModeError::InvalidParams(format!(
            "dt = {dt} must be positive"
        )));
    }
    let stride = stride.max(1);
    let steps = (t_final / dt - 1e-9).ceil().max(1.0) as usize;
    let sample = |t: f64, s: &TwoModeState| TrajectorySample {
        t,
        state: *s,
        bloch: bloch_from_state(s),
        norm: s.norm(),
    };

    let mut y = [initial.c1, initial.c2];
    let mut samples = vec![sample(0.0, initial)];
    let mut divergence = None;
    let p = *params;
    let mut rhs = move |_t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let (d1, d2) = equation_of_motion(&p, y[0], y[1]);
        dy[0] = d1;
        dy[1] = d2;
    };
    let mut k1 = [Complex64::default(); 2];
    let mut k2 = [Complex64::default(); 2];
    let mut k3 = [Complex64::default(); 2];
    let mut k4 = [Complex64::default(); 2];
    let mut work = [Complex64::default(); 2];

    for step in 0..steps {
        let t = step as f64 * dt;
        numerics::rk4_step(
            &mut rhs, t, &mut y, dt, &mut k1, &mut k2, &mut k3, &mut k4, &mut work,
        );
        let t_next = (step + 1) as f64 * dt;
        let state = TwoModeState::new(y[0], y[1]);
        let finite = state.is_finite();
        let norm = if finite { state.norm() } else { f64::INFINITY };
        if !finite || norm > norm_cap {
            divergence = Some(Divergence { t: t_next, norm });
            if finite {
                samples.push(sample(t_next, &state));
            }
            break;
        }
        if (step + 1) % stride == 0 || step + 1 == steps {
            samples.push(sample(t_next, &state));
        }
    }
    Ok(TrajectoryRecord {
        samples,
        divergence,
    })
}

// ---------------------------------------------------------------------------
// Bloch coordinates
// ---------------------------------------------------------------------------

/// Bloch coordinates of a state: `R = ||psi||`,
/// `theta = 2 atan2(|c2|, |c1|)`, `phi = arg(c2) - arg(c1)` in [0, 2 pi).
pub fn bloch_from_state(state: &TwoModeState) -> BlochPoint {
    let r = state.norm();
    if r == 0.0 {
        return BlochPoint::new(0.0, 0.0, 0.0);
    }
    let theta = 2.0 * state.c2.norm().atan2(state.c1.norm());
    let phi = if state.c2.norm() == 0.0 || state.c1.norm() == 0.0 {
        0.0
    } else {
        (state.c2.arg() - state.c1.arg()).rem_euclid(2.0 * PI)
    };
    BlochPoint::new(r, theta, phi)
}

/// The canonical representative `R (cos(theta/2) e^{-i phi/2},
/// sin(theta/2) e^{+i phi/2})`.
pub fn state_from_bloch(point: &BlochPoint) -> TwoModeState {
    TwoModeState::new(
        Complex64::from_polar(point.r * (point.theta / 2.0).cos(), -point.phi / 2.0),
        Complex64::from_polar(point.r * (point.theta / 2.0).sin(), point.phi / 2.0),
    )
}

/// Relative particle loss rate in the loss well, `2 gamma / tau`, in 1/s.
pub fn lab_loss_rate(gamma: f64, scale: &LabScale) -> f64 {
    assert!(scale.tau > 0.0, "lab time scale must be positive");
    2.0 * gamma / scale.tau
}
