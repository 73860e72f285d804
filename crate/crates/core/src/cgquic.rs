//! Quadratic-approximation solver for the penalized chain-graph precision problem
//!
//! ```text
//! min_Ω  −log|Ω| + tr(SΩ) + tr(MΩ⁻¹) + Σ_{k,k'} Ξ_kk'·|ω_kk'|
//! ```
//!
//! over positive definite Ω. Each outer iteration builds a second-order model of
//! the smooth part, finds a Newton direction by coordinate descent on the free
//! coordinates, and takes an Armijo step that keeps Ω positive definite.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky, Chol};

/// S, M, Ξ and the starting point of one solve.
#[derive(Debug, Clone)]
pub struct CglassoProblem {
    s: DMatrix<f64>,
    m: DMatrix<f64>,
    xi: DMatrix<f64>,
    omega_init: DMatrix<f64>,
}

impl CglassoProblem {
    /// Checks that S and M are symmetric PSD (eigenvalues ≥ −1e-10 relative to
    /// their scale), Ξ is symmetric and nonnegative, and `omega_init` is PD.
    /// Mirrored entries are averaged so every stored matrix is exactly symmetric.
    pub fn new(
        s: DMatrix<f64>,
        m: DMatrix<f64>,
        xi: DMatrix<f64>,
        omega_init: DMatrix<f64>,
    ) -> Result<Self> {
        let q = s.nrows();
        for (name, mat) in [("S", &s), ("M", &m), ("Ξ", &xi), ("initial Ω", &omega_init)] {
            if mat.nrows() != q || mat.ncols() != q {
                return Err(Error::Dimension(format!(
                    "{name} is {}×{}, expected {q}×{q}",
                    mat.nrows(),
                    mat.ncols()
                )));
            }
            if !mat.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} has non-finite entries")));
            }
            let scale = linalg::max_abs(mat).max(1.0);
            if (mat - mat.transpose()).amax() > 1e-10 * scale {
                return Err(Error::InvalidArgument(format!("{name} is not symmetric")));
            }
        }
        if q == 0 {
            return Err(Error::Dimension("empty problem".into()));
        }
        let (mut s, mut m, mut xi, mut omega_init) = (s, m, xi, omega_init);
        for mat in [&mut s, &mut m, &mut xi, &mut omega_init] {
            linalg::symmetrize(mat);
        }
        for (name, mat) in [("S", &s), ("M", &m)] {
            let floor = -1e-10 * linalg::max_abs(mat).max(1.0);
            if mat.symmetric_eigenvalues().min() < floor {
                return Err(Error::InvalidArgument(format!(
                    "{name} is not positive semidefinite"
                )));
            }
        }
        if xi.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidArgument("Ξ has negative entries".into()));
        }
        cholesky(&omega_init, "initial Ω")?;
        Ok(CglassoProblem {
            s,
            m,
            xi,
            omega_init,
        })
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    pub fn omega_init(&self) -> &DMatrix<f64> {
        &self.omega_init
    }

    pub fn q(&self) -> usize {
        self.s.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CgquicOptions {
    /// Armijo sufficient-decrease constant, in (0, ½).
    pub sigma: f64,
    /// Step shrink factor, in (0, 1).
    pub beta: f64,
    /// Relative objective decrease below which the outer loop may stop.
    pub outer_tol: f64,
    pub max_outer_iter: usize,
    pub max_inner_sweeps: usize,
    /// Inner sweeps stop once every |μ| is below this fraction of max|D|.
    pub inner_tol: f64,
    /// The outer loop stops only when the minimum-norm subgradient is also below this.
    pub subgrad_tol: f64,
}

impl Default for CgquicOptions {
    fn default() -> Self {
        CgquicOptions {
            sigma: 0.25,
            beta: 0.5,
            outer_tol: 1e-6,
            max_outer_iter: 200,
            max_inner_sweeps: 20,
            inner_tol: 1e-4,
            subgrad_tol: 1e-10,
        }
    }
}

impl CgquicOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma < 0.5) {
            return Err(Error::InvalidArgument(format!("sigma = {} outside (0, 0.5)", self.sigma)));
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return Err(Error::InvalidArgument(format!("beta = {} outside (0, 1)", self.beta)));
        }
        if !(self.outer_tol > 0.0 && self.inner_tol > 0.0 && self.subgrad_tol > 0.0) {
            return Err(Error::InvalidArgument("cgQUIC tolerances must be positive".into()));
        }
        if self.max_outer_iter == 0 || self.max_inner_sweeps == 0 {
            return Err(Error::InvalidArgument("cgQUIC iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Iterate, inverse and the caches used while computing a Newton direction.
#[derive(Debug, Clone)]
pub struct CgquicState {
    pub omega: DMatrix<f64>,
    /// Ω⁻¹.
    pub w: DMatrix<f64>,
    /// Newton direction, kept exactly symmetric.
    pub d: DMatrix<f64>,
    /// D·W.
    pub u: DMatrix<f64>,
    /// M·W.
    pub q: DMatrix<f64>,
    /// W·M·W.
    pub p: DMatrix<f64>,
    /// D·W·M·W.
    pub v: DMatrix<f64>,
    pub objective: f64,
}

impl CgquicState {
    /// State at `omega` with a zero direction.
    pub fn new(omega: DMatrix<f64>, prob: &CglassoProblem) -> Result<Self> {
        let chol = cholesky(&omega, "Ω")?;
        Ok(Self::from_factor(omega, &chol, prob))
    }

    fn from_factor(omega: DMatrix<f64>, chol: &Chol, prob: &CglassoProblem) -> Self {
        let w = linalg::spd_inverse(chol);
        let mw = prob.m() * &w;
        let mut p = &w * &mw;
        linalg::symmetrize(&mut p);
        let objective = objective_with(&omega, &w, chol, prob);
        let q = omega.nrows();
        CgquicState {
            omega,
            w,
            d: DMatrix::zeros(q, q),
            u: DMatrix::zeros(q, q),
            q: mw,
            p,
            v: DMatrix::zeros(q, q),
            objective,
        }
    }

    fn reset_direction(&mut self) {
        self.d.fill(0.0);
        self.u.fill(0.0);
        self.v.fill(0.0);
    }
}

/// Σ_{k,k'} Ξ_kk'·|ω_kk'| over all ordered pairs.
pub fn penalty(omega: &DMatrix<f64>, xi: &DMatrix<f64>) -> f64 {
    omega.iter().zip(xi.iter()).map(|(o, x)| x * o.abs()).sum()
}

fn objective_with(omega: &DMatrix<f64>, w: &DMatrix<f64>, chol: &Chol, prob: &CglassoProblem) -> f64 {
    -linalg::log_det(chol)
        + linalg::frobenius_dot(prob.s(), omega)
        + linalg::frobenius_dot(prob.m(), w)
        + penalty(omega, prob.xi())
}

/// f(Ω) = −log|Ω| + tr(SΩ) + tr(MΩ⁻¹) + Σ_{k,k'} Ξ_kk'|ω_kk'|.
pub fn objective(omega: &DMatrix<f64>, prob: &CglassoProblem) -> Result<f64> {
    let chol = cholesky(omega, "Ω")?;
    let w = linalg::spd_inverse(&chol);
    Ok(objective_with(omega, &w, &chol, prob))
}

/// ∇g(Ω) = S − W − W·M·W with W = Ω⁻¹.
pub fn gradient_smooth(omega: &DMatrix<f64>, prob: &CglassoProblem) -> Result<DMatrix<f64>> {
    let w = linalg::spd_inverse(&cholesky(omega, "Ω")?);
    Ok(gradient_from_inverse(&w, prob))
}

fn gradient_from_inverse(w: &DMatrix<f64>, prob: &CglassoProblem) -> DMatrix<f64> {
    let mut g = prob.s() - w - w * prob.m() * w;
    linalg::symmetrize(&mut g);
    g
}

/// Splits the upper-triangle coordinates (k ≤ k') into fixed and free sets.
///
/// A coordinate is fixed when ω_kk' = 0 and |∇g_kk'| < Ξ_kk'.
pub fn partition_active(
    omega: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    xi: &DMatrix<f64>,
) -> (Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let q = omega.nrows();
    let mut fixed = Vec::new();
    let mut free = Vec::new();
    for k in 0..q {
        for kp in k..q {
            if omega[(k, kp)] == 0.0 && grad[(k, kp)].abs() < xi[(k, kp)] {
                fixed.push((k, kp));
            } else {
                free.push((k, kp));
            }
        }
    }
    (fixed, free)
}

/// Coefficients (a, b, c) of the one-dimensional model ½aμ² + bμ + Ξ_kk'|c + μ|.
pub(crate) fn step_coefficients(
    k: usize,
    kp: usize,
    state: &CgquicState,
    prob: &CglassoProblem,
) -> (f64, f64, f64) {
    let w = &state.w;
    let p = &state.p;
    let q = w.nrows();
    let wu = |i: usize, j: usize| (0..q).map(|l| w[(i, l)] * state.u[(l, j)]).sum::<f64>();
    let wv = |i: usize, j: usize| (0..q).map(|l| w[(i, l)] * state.v[(l, j)]).sum::<f64>();
    let c = state.omega[(k, kp)] + state.d[(k, kp)];
    if k == kp {
        let a = w[(k, k)] * w[(k, k)] + 2.0 * w[(k, k)] * p[(k, k)];
        let b = prob.s()[(k, k)] - w[(k, k)] + wu(k, k) - p[(k, k)] + 2.0 * wv(k, k);
        (a, b, c)
    } else {
        let a = w[(k, kp)] * w[(k, kp)]
            + w[(k, k)] * w[(kp, kp)]
            + w[(k, k)] * p[(kp, kp)]
            + w[(kp, kp)] * p[(k, k)]
            + 2.0 * w[(k, kp)] * p[(k, kp)];
        let b = prob.s()[(k, kp)] - w[(k, kp)] + wu(k, kp) - p[(k, kp)] + wv(kp, k) + wv(k, kp);
        (a, b, c)
    }
}

/// One coordinate-descent step on the quadratic model at (k, k').
///
/// Updates D (both mirrored entries) and the D·W and D·W·M·W caches, and
/// returns the step μ.
pub fn newton_coordinate_step(
    k: usize,
    kp: usize,
    state: &mut CgquicState,
    prob: &CglassoProblem,
) -> Result<f64> {
    let (a, b, c) = step_coefficients(k, kp, state, prob);
    if !(a > 0.0) {
        return Err(Error::NotPositiveDefinite { what: "Ω⁻¹" });
    }
    let xi = prob.xi()[(k, kp)];
    let mu = -c + linalg::soft_threshold(c - b / a, xi / a);
    if mu != 0.0 {
        state.d[(k, kp)] += mu;
        let (w, p) = (&state.w, &state.p);
        if k == kp {
            for j in 0..w.ncols() {
                state.u[(k, j)] += mu * w[(k, j)];
                state.v[(k, j)] += mu * p[(k, j)];
            }
        } else {
            state.d[(kp, k)] += mu;
            for j in 0..w.ncols() {
                state.u[(k, j)] += mu * w[(kp, j)];
                state.u[(kp, j)] += mu * w[(k, j)];
                state.v[(k, j)] += mu * p[(kp, j)];
                state.v[(kp, j)] += mu * p[(k, j)];
            }
        }
    }
    Ok(mu)
}

/// Accepted Armijo step.
#[derive(Debug, Clone)]
pub struct ArmijoStep {
    pub alpha: f64,
    pub omega: DMatrix<f64>,
    pub chol: Chol,
    pub objective: f64,
    /// tr(∇g·D) + ‖Ω + D‖₁,Ξ − ‖Ω‖₁,Ξ.
    pub delta: f64,
}

/// δ = tr(∇g(Ω)·D) + ‖Ω + D‖₁,Ξ − ‖Ω‖₁,Ξ.
pub fn descent_measure(
    omega: &DMatrix<f64>,
    d: &DMatrix<f64>,
    grad: &DMatrix<f64>,
    xi: &DMatrix<f64>,
) -> f64 {
    let mut delta = 0.0;
    for i in 0..omega.len() {
        let (o, di, g, x) = (omega[i], d[i], grad[i], xi[i]);
        let moved = o + di;
        delta += if o != 0.0 && moved.signum() == o.signum() {
            (g + x * o.signum()) * di
        } else {
            g * di + x * (moved.abs() - o.abs())
        };
    }
    delta
}

/// Backtracking over α ∈ {1, β, β², …} until Ω + αD is PD and the Armijo
/// condition f(Ω + αD) ≤ f(Ω) + ασδ holds.
pub fn armijo_step(
    omega: &DMatrix<f64>,
    d_star: &DMatrix<f64>,
    prob: &CglassoProblem,
    opts: &CgquicOptions,
) -> Result<ArmijoStep> {
    let f_current = objective(omega, prob)?;
    let grad = gradient_smooth(omega, prob)?;
    let delta = descent_measure(omega, d_star, &grad, prob.xi());
    armijo_from(omega, d_star, prob, opts, f_current, delta)
}

fn armijo_from(
    omega: &DMatrix<f64>,
    d_star: &DMatrix<f64>,
    prob: &CglassoProblem,
    opts: &CgquicOptions,
    f_current: f64,
    delta: f64,
) -> Result<ArmijoStep> {
    let mut alpha = 1.0;
    let mut f_trial = f64::NAN;
    while alpha >= 1e-12 {
        let trial = omega + d_star * alpha;
        if let Ok(chol) = cholesky(&trial, "Ω") {
            let w = linalg::spd_inverse(&chol);
            f_trial = objective_with(&trial, &w, &chol, prob);
            if f_trial.is_finite() && f_trial <= f_current + alpha * opts.sigma * delta {
                return Ok(ArmijoStep {
                    alpha,
                    omega: trial,
                    chol,
                    objective: f_trial,
                    delta,
                });
            }
        }
        alpha *= opts.beta;
    }
    Err(Error::LineSearch {
        delta,
        f_current,
        f_trial,
    })
}

/// Full Newton step for when the predicted decrease is below the resolution of
/// f and Armijo cannot tell the trial point apart. Taken only if it stays
/// positive definite, does not raise f beyond `floor` and shrinks the
/// minimum-norm subgradient.
fn polish_step(state: &CgquicState, prob: &CglassoProblem, subgrad_max: f64, floor: f64) -> Option<ArmijoStep> {
    let trial = &state.omega + &state.d;
    let chol = cholesky(&trial, "Ω").ok()?;
    let w = linalg::spd_inverse(&chol);
    let f_trial = objective_with(&trial, &w, &chol, prob);
    if !(f_trial.is_finite() && f_trial <= state.objective + floor) {
        return None;
    }
    let sub = subgradient_from(&trial, &gradient_from_inverse(&w, prob), prob.xi());
    (sub.amax() < subgrad_max).then_some(ArmijoStep {
        alpha: 1.0,
        omega: trial,
        chol,
        objective: f_trial,
        delta: 0.0,
    })
}

/// Minimum-norm subgradient of f at Ω.
pub fn min_norm_subgradient(omega: &DMatrix<f64>, prob: &CglassoProblem) -> Result<DMatrix<f64>> {
    let grad = gradient_smooth(omega, prob)?;
    Ok(subgradient_from(omega, &grad, prob.xi()))
}

fn subgradient_from(omega: &DMatrix<f64>, grad: &DMatrix<f64>, xi: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(omega.nrows(), omega.ncols(), |i, j| {
        let (o, g, x) = (omega[(i, j)], grad[(i, j)], xi[(i, j)]);
        if o > 0.0 {
            g + x
        } else if o < 0.0 {
            g - x
        } else {
            linalg::soft_threshold(g, x)
        }
    })
}

/// Output of [`solve`].
#[derive(Debug, Clone)]
pub struct CgquicFit {
    pub omega: DMatrix<f64>,
    /// Objective at the starting point followed by one value per accepted step.
    pub trace: Vec<f64>,
    /// Accepted step sizes, one per outer iteration that moved.
    pub step_sizes: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

const STATIONARY_DELTA: f64 = 1e-12;

/// Runs the solver from the problem's initial Ω.
pub fn solve(prob: &CglassoProblem, opts: &CgquicOptions) -> Result<CgquicFit> {
    opts.validate()?;
    let mut state = CgquicState::new(prob.omega_init().clone(), prob)?;
    if !state.objective.is_finite() {
        return Err(Error::NonFinite {
            iteration: 0,
            row: 0,
            col: 0,
        });
    }
    let mut trace = vec![state.objective];
    let mut step_sizes = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for outer in 1..=opts.max_outer_iter {
        iterations = outer;
        let grad = gradient_from_inverse(&state.w, prob);
        let subgrad = subgradient_from(&state.omega, &grad, prob.xi());
        if subgrad.amax() <= opts.subgrad_tol {
            converged = true;
            iterations = outer - 1;
            break;
        }
        let (_, free) = partition_active(&state.omega, &grad, prob.xi());
        state.reset_direction();
        newton_direction(&mut state, prob, &free, opts)?;

        let delta = descent_measure(&state.omega, &state.d, &grad, prob.xi());
        // Decreases this small are below the resolution of f itself.
        let floor = STATIONARY_DELTA * state.objective.abs().max(1.0);
        if !(delta < 0.0) {
            converged = delta.abs() <= floor;
            break;
        }
        let step = if delta >= -floor {
            match polish_step(&state, prob, subgrad.amax(), floor) {
                Some(step) => step,
                None => {
                    converged = true;
                    break;
                }
            }
        } else {
            armijo_from(&state.omega, &state.d, prob, opts, state.objective, delta)?
        };
        let f_old = state.objective;
        step_sizes.push(step.alpha);
        state = CgquicState::from_factor(step.omega, &step.chol, prob);
        trace.push(state.objective);

        let rel_decrease = (f_old - state.objective) / f_old.abs().max(1.0);
        if rel_decrease < opts.outer_tol {
            let grad = gradient_from_inverse(&state.w, prob);
            let subgrad = subgradient_from(&state.omega, &grad, prob.xi());
            if subgrad.amax() <= opts.subgrad_tol {
                converged = true;
                break;
            }
        }
    }
    Ok(CgquicFit {
        omega: state.omega,
        trace,
        step_sizes,
        iterations,
        converged,
    })
}

fn newton_direction(
    state: &mut CgquicState,
    prob: &CglassoProblem,
    free: &[(usize, usize)],
    opts: &CgquicOptions,
) -> Result<()> {
    for _ in 0..opts.max_inner_sweeps {
        let mut max_mu = 0.0_f64;
        for &(k, kp) in free {
            let mu = newton_coordinate_step(k, kp, state, prob)?;
            max_mu = max_mu.max(mu.abs());
        }
        if max_mu <= opts.inner_tol * linalg::max_abs(&state.d).max(1e-12) {
            break;
        }
    }
    Ok(())
}
