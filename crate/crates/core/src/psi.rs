//! Conditional maximization over (Ψ, θ): cyclic coordinate ascent on Ψ with
//! adaptive soft/hard thresholding, and a safeguarded Newton update for θ.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky};
use crate::model::{residual_of, Dataset, SslConfig};
use crate::penalty::{self, lambda_star, pstar};

const THETA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsiSolveOptions {
    /// Stop once the largest relative change over active coordinates drops below this.
    pub inner_tol: f64,
    pub max_inner_iter: usize,
    pub max_theta_newton_iter: usize,
    /// Newton steps for θ shorter than this end the iteration.
    pub theta_tol: f64,
}

impl Default for PsiSolveOptions {
    fn default() -> Self {
        PsiSolveOptions {
            inner_tol: 1e-3,
            max_inner_iter: 10_000,
            max_theta_newton_iter: 100,
            theta_tol: 1e-10,
        }
    }
}

impl PsiSolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.inner_tol > 0.0 && self.theta_tol > 0.0) {
            return Err(Error::InvalidArgument("Ψ solver tolerances must be positive".into()));
        }
        if self.max_inner_iter == 0 || self.max_theta_newton_iter == 0 {
            return Err(Error::InvalidArgument("Ψ solver iteration caps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of [`update_psi`].
#[derive(Debug, Clone)]
pub struct PsiFit {
    pub psi: DMatrix<f64>,
    /// R = YΩ − XΨ, maintained incrementally during the sweeps.
    pub residual: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Coordinate statistic z_jk = n_j·ψ_jk + Σ_k' (Ω⁻¹)_kk'/(Ω⁻¹)_kk · X_jᵀr_k'
/// with n_j = ‖X_j‖² (equal to n on a standardized design).
pub fn compute_z(
    j: usize,
    k: usize,
    psi: &DMatrix<f64>,
    r: &DMatrix<f64>,
    omega_inv: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<f64> {
    let s_kk = omega_inv[(k, k)];
    if !(s_kk > 0.0) {
        return Err(Error::NotPositiveDefinite { what: "Ω" });
    }
    let xj = x.column(j);
    let mut acc = 0.0;
    for kp in 0..r.ncols() {
        acc += omega_inv[(k, kp)] * xj.dot(&r.column(kp));
    }
    Ok(xj.norm_squared() * psi[(j, k)] + acc / s_kk)
}

/// n⁻¹·[|z| − lam_star]₊·sign(z), zeroed when |z| ≤ threshold.
pub fn coordinate_update(z: f64, n: f64, lam_star: f64, threshold: f64) -> f64 {
    if z.abs() <= threshold {
        return 0.0;
    }
    linalg::soft_threshold(z, lam_star) / n
}

/// Penalized objective in Ψ with θ and Ω held fixed:
/// −½·tr(RΩ⁻¹Rᵀ) + Σ_jk log π(ψ_jk | θ).
pub fn psi_objective(
    psi: &DMatrix<f64>,
    theta: f64,
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &SslConfig,
) -> Result<f64> {
    let r = residual_of(psi, omega, x, y)?;
    let chol = cholesky(omega, "Ω")?;
    let quad = chol.solve(&r.transpose()).component_mul(&r.transpose()).sum();
    let rates = cfg.psi_rates(theta);
    let prior: f64 = psi.iter().map(|&v| rates.log_density(v)).sum();
    Ok(-0.5 * quad + prior)
}

/// Coordinate ascent on Ψ for a [`Dataset`].
pub fn update_psi(
    psi_init: &DMatrix<f64>,
    theta: f64,
    omega: &DMatrix<f64>,
    data: &Dataset,
    cfg: &SslConfig,
    opts: &PsiSolveOptions,
) -> Result<PsiFit> {
    update_psi_matrices(psi_init, theta, omega, data.x(), data.y(), cfg, opts)
}

/// Coordinate ascent on Ψ for raw matrices (any q ≥ 1).
///
/// Sweeps run row-major over (j, k). Each coordinate uses λ⋆ at its current
/// value and the hard threshold Δᵁ, or plain soft thresholding at λ⋆(0) when
/// Δᵁ is not applicable. A candidate that lowers the coordinate objective is
/// rejected, so the objective never decreases.
pub fn update_psi_matrices(
    psi_init: &DMatrix<f64>,
    theta: f64,
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &SslConfig,
    opts: &PsiSolveOptions,
) -> Result<PsiFit> {
    opts.validate()?;
    if !psi_init.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidArgument("initial Ψ has non-finite entries".into()));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!("θ = {theta} outside (0, 1)")));
    }
    let mut psi = psi_init.clone();
    let mut r = residual_of(&psi, omega, x, y)?;
    let sigma = linalg::spd_inverse(&cholesky(omega, "Ω")?);
    let (p, q) = (psi.nrows(), psi.ncols());
    let rates = cfg.psi_rates(theta);

    let col_sq: Vec<f64> = x.column_iter().map(|c| c.norm_squared()).collect();
    let lam0 = lambda_star(0.0, &rates);
    let mut thresholds = DMatrix::zeros(p, q);
    for j in 0..p {
        for k in 0..q {
            let c = sigma[(k, k)];
            let (upper, valid) = penalty::upper_threshold(c, col_sq[j], &rates)?;
            thresholds[(j, k)] = if valid { upper } else { lam0 / c };
        }
    }

    let mut v = vec![0.0; q];
    for sweep in 1..=opts.max_inner_iter {
        let mut max_change = 0.0_f64;
        for j in 0..p {
            let n_j = col_sq[j];
            if n_j == 0.0 {
                continue;
            }
            let xj = x.column(j);
            for (k, vk) in v.iter_mut().enumerate() {
                *vk = xj.dot(&r.column(k));
            }
            for k in 0..q {
                let c = sigma[(k, k)];
                let old = psi[(j, k)];
                let sv: f64 = (0..q).map(|kp| sigma[(k, kp)] * v[kp]).sum();
                let z = n_j * old + sv / c;
                let lam = lambda_star(old, &rates) / c;
                let mut cand = coordinate_update(z, n_j, lam, thresholds[(j, k)]);
                if !(z.is_finite() && cand.is_finite()) {
                    return Err(Error::NonFinite {
                        iteration: sweep,
                        row: j,
                        col: k,
                    });
                }
                let h = |t: f64| c * (t * z - 0.5 * n_j * t * t) + rates.log_density(t);
                if cand != old && h(cand) < h(old) {
                    cand = old;
                }
                if cand != old {
                    let delta = cand - old;
                    psi[(j, k)] = cand;
                    r.column_mut(k).axpy(-delta, &xj, 1.0);
                    v[k] -= delta * n_j;
                }
                if old != 0.0 || cand != 0.0 {
                    let rel = (cand - old).abs() / old.abs().max(1e-12);
                    max_change = max_change.max(rel);
                }
            }
        }
        if max_change < opts.inner_tol {
            return Ok(PsiFit {
                psi,
                residual: r,
                iterations: sweep,
                converged: true,
            });
        }
    }
    Ok(PsiFit {
        psi,
        residual: r,
        iterations: opts.max_inner_iter,
        converged: false,
    })
}

/// Σ_jk log(θλ₁e^{−λ₁|ψ|} + (1−θ)λ₀e^{−λ₀|ψ|}) + (a_θ−1)·log θ + (b_θ−1)·log(1−θ).
pub fn theta_objective(psi: &DMatrix<f64>, theta: f64, cfg: &SslConfig) -> f64 {
    let rates = cfg.psi_rates(theta);
    let mix: f64 = psi.iter().map(|&v| rates.log_density(v)).sum();
    mix + (cfg.a_theta - 1.0) * theta.ln() + (cfg.b_theta - 1.0) * (-theta).ln_1p()
}

/// First and second derivatives of [`theta_objective`] in θ.
pub fn theta_derivatives(psi: &DMatrix<f64>, theta: f64, cfg: &SslConfig) -> (f64, f64) {
    let rates = cfg.psi_rates(theta);
    let (mut d1, mut d2) = (0.0, 0.0);
    for &v in psi.iter() {
        let ps = pstar(v, &rates);
        let g = ps / theta - (1.0 - ps) / (1.0 - theta);
        d1 += g;
        d2 -= g * g;
    }
    let om = 1.0 - theta;
    d1 += (cfg.a_theta - 1.0) / theta - (cfg.b_theta - 1.0) / om;
    d2 -= (cfg.a_theta - 1.0) / (theta * theta) + (cfg.b_theta - 1.0) / (om * om);
    (d1, d2)
}

/// Maximizes [`theta_objective`] over θ with Ψ fixed.
///
/// Newton steps are halved while they leave (1e-8, 1 − 1e-8) or lower the
/// objective; after 50 halvings the search switches to golden section.
pub fn update_theta(
    psi: &DMatrix<f64>,
    theta_init: f64,
    cfg: &SslConfig,
    opts: &PsiSolveOptions,
) -> f64 {
    let obj = |t: f64| theta_objective(psi, t, cfg);
    maximize_mixing_weight(obj, |t| theta_derivatives(psi, t, cfg), theta_init, opts)
}

pub(crate) fn maximize_mixing_weight(
    obj: impl Fn(f64) -> f64,
    derivs: impl Fn(f64) -> (f64, f64),
    init: f64,
    opts: &PsiSolveOptions,
) -> f64 {
    let (lo, hi) = (THETA_FLOOR, 1.0 - THETA_FLOOR);
    let mut t = if init.is_finite() { init.clamp(lo, hi) } else { 0.5 };
    let mut f = obj(t);
    for _ in 0..opts.max_theta_newton_iter {
        let (d1, d2) = derivs(t);
        if d1 == 0.0 {
            break;
        }
        let mut step = if d2 < 0.0 {
            -d1 / d2
        } else {
            d1.signum() * 0.5 * t.min(1.0 - t)
        };
        if step.abs() < opts.theta_tol {
            let cand = t + step;
            if cand > lo && cand < hi {
                t = cand;
            }
            break;
        }
        let mut accepted = false;
        for _ in 0..50 {
            let cand = t + step;
            if cand > lo && cand < hi {
                let fc = obj(cand);
                if fc >= f - 4.0 * f64::EPSILON * f.abs() {
                    t = cand;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !accepted {
            let g = golden_section_max(&obj, lo, hi, 1e-12);
            if obj(g) >= f {
                t = g;
            }
            break;
        }
    }
    t
}

/// Maximizer of a unimodal function on [a, b].
pub(crate) fn golden_section_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::standardize_design;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_spd(rng: &mut ChaCha8Rng, q: usize) -> DMatrix<f64> {
        let a = normal_matrix(rng, q, q);
        let mut m = &a * a.transpose() / q as f64 + DMatrix::identity(q, q);
        linalg::symmetrize(&mut m);
        m
    }

    fn cfg(l0: f64, l1: f64, p: usize, q: usize) -> SslConfig {
        SslConfig::with_default_priors(l0, l1, 10.0, 1.0, p, q)
    }

    #[test]
    fn z_at_identity_is_lasso_statistic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (x, _, _) = standardize_design(&normal_matrix(&mut rng, 8, 3)).unwrap();
        let y = normal_matrix(&mut rng, 8, 2);
        let psi = normal_matrix(&mut rng, 3, 2);
        let eye = DMatrix::identity(2, 2);
        let r = residual_of(&psi, &eye, &x, &y).unwrap();
        for j in 0..3 {
            for k in 0..2 {
                let z = compute_z(j, k, &psi, &r, &eye, &x).unwrap();
                let expected = 8.0 * psi[(j, k)] + x.column(j).dot(&r.column(k));
                assert!((z - expected).abs() < 1e-10);
            }
        }
        let zero = DMatrix::zeros(3, 2);
        let r0 = residual_of(&zero, &eye, &x, &y).unwrap();
        let z = compute_z(1, 1, &zero, &r0, &eye, &x).unwrap();
        assert!((z - x.column(1).dot(&y.column(1))).abs() < 1e-12);
    }

    #[test]
    fn z_matches_naive_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (x, _, _) = standardize_design(&normal_matrix(&mut rng, 5, 2)).unwrap();
        let y = normal_matrix(&mut rng, 5, 3);
        let psi = normal_matrix(&mut rng, 2, 3);
        let omega = random_spd(&mut rng, 3);
        let omega_inv = omega.clone().try_inverse().unwrap();
        let r = residual_of(&psi, &omega, &x, &y).unwrap();
        for j in 0..2 {
            for k in 0..3 {
                let xr = |kk: usize| (0..5).map(|i| x[(i, j)] * r[(i, kk)]).sum::<f64>();
                let mut naive = 5.0 * psi[(j, k)] + xr(k);
                for kp in 0..3 {
                    if kp != k {
                        naive += omega_inv[(k, kp)] / omega_inv[(k, k)] * xr(kp);
                    }
                }
                let z = compute_z(j, k, &psi, &r, &omega_inv, &x).unwrap();
                assert!((z - naive).abs() < 1e-10, "{z} vs {naive}");
            }
        }
    }

    #[test]
    fn z_rejects_nonpositive_diagonal() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let r = DMatrix::zeros(2, 2);
        let psi = DMatrix::zeros(1, 2);
        let bad = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]);
        assert!(compute_z(0, 0, &psi, &r, &bad, &x).is_err());
    }

    #[test]
    fn coordinate_update_examples() {
        assert_eq!(coordinate_update(5.0, 1.0, 2.0, 0.0), 3.0);
        assert_eq!(coordinate_update(-5.0, 1.0, 2.0, 6.0), 0.0);
        assert_eq!(coordinate_update(-5.0, 1.0, 2.0, 4.0), -3.0);
        assert_eq!(coordinate_update(1.5, 1.0, 2.0, 0.0), 0.0);
        assert_eq!(coordinate_update(10.0, 4.0, 2.0, 0.0), 2.0);
    }

    fn single_signal_data(seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _, _) = standardize_design(&normal_matrix(&mut rng, 100, 5)).unwrap();
        let noise = normal_matrix(&mut rng, 100, 1);
        let y = DMatrix::from_fn(100, 1, |i, _| 3.0 * x[(i, 0)] + noise[(i, 0)]);
        (x, y)
    }

    #[test]
    fn single_response_recovers_single_signal() {
        let (x, y) = single_signal_data(21);
        let c = SslConfig::with_default_priors(50.0, 1.0, 10.0, 1.0, 5, 1);
        let opts = PsiSolveOptions {
            inner_tol: 1e-10,
            ..Default::default()
        };
        let fit = update_psi_matrices(
            &DMatrix::zeros(5, 1),
            0.5,
            &DMatrix::identity(1, 1),
            &x,
            &y,
            &c,
            &opts,
        )
        .unwrap();
        assert!(fit.converged);
        let support: Vec<usize> = (0..5).filter(|&j| fit.psi[(j, 0)] != 0.0).collect();
        assert_eq!(support, vec![0]);

        // With the other coordinates at zero the objective in ψ₁ is one-dimensional.
        let rates = c.psi_rates(0.5);
        let f = |b: f64| {
            let resid = y.column(0) - x.column(0) * b;
            -0.5 * resid.norm_squared() + rates.log_density(b)
        };
        let mut best = (f64::NEG_INFINITY, 0.0);
        let mut b = 0.0;
        while b <= 6.0 {
            let v = f(b);
            if v > best.0 {
                best = (v, b);
            }
            b += 1e-5;
        }
        assert!((fit.psi[(0, 0)] - best.1).abs() < 1e-4, "{} vs {}", fit.psi[(0, 0)], best.1);
    }

    #[test]
    fn zero_response_is_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (x, _, _) = standardize_design(&normal_matrix(&mut rng, 10, 3)).unwrap();
        let y = DMatrix::zeros(10, 2);
        let fit = update_psi_matrices(
            &DMatrix::zeros(3, 2),
            0.5,
            &DMatrix::identity(2, 2),
            &x,
            &y,
            &cfg(10.0, 1.0, 3, 2),
            &PsiSolveOptions::default(),
        )
        .unwrap();
        assert!(fit.psi.iter().all(|&v| v == 0.0));
        assert!(fit.converged);
        assert_eq!(fit.iterations, 1);
    }

    struct Problem {
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        omega: DMatrix<f64>,
        psi0: DMatrix<f64>,
    }

    fn random_problem(seed: u64, n: usize, p: usize, q: usize) -> Problem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, _, _) = standardize_design(&normal_matrix(&mut rng, n, p)).unwrap();
        let mut truth = DMatrix::zeros(p, q);
        for j in 0..p {
            for k in 0..q {
                if rng.random_bool(0.3) {
                    truth[(j, k)] = rng.random_range(-2.0..2.0);
                }
            }
        }
        let omega = random_spd(&mut rng, q);
        let b = omega.clone().try_inverse().unwrap();
        let y = &x * &truth * &b + normal_matrix(&mut rng, n, q);
        let psi0 = normal_matrix(&mut rng, p, q) * 0.5;
        Problem { x, y, omega, psi0 }
    }

    #[test]
    fn kkt_fixed_point_and_residual_coherence() {
        for seed in 0..5 {
            let pr = random_problem(100 + seed, 40, 6, 3);
            let c = cfg(20.0, 0.5, 6, 3);
            let opts = PsiSolveOptions {
                inner_tol: 1e-8,
                ..Default::default()
            };
            let fit =
                update_psi_matrices(&pr.psi0, 0.3, &pr.omega, &pr.x, &pr.y, &c, &opts).unwrap();
            assert!(fit.converged);
            let exact = residual_of(&fit.psi, &pr.omega, &pr.x, &pr.y).unwrap();
            assert!((&fit.residual - &exact).amax() <= 1e-8);

            let sigma = pr.omega.clone().try_inverse().unwrap();
            let rates = c.psi_rates(0.3);
            for j in 0..6 {
                for k in 0..3 {
                    let psi = fit.psi[(j, k)];
                    if psi == 0.0 {
                        continue;
                    }
                    let z = compute_z(j, k, &fit.psi, &exact, &sigma, &pr.x).unwrap();
                    let lam = lambda_star(psi, &rates) / sigma[(k, k)];
                    let target = linalg::soft_threshold(z, lam) / 40.0;
                    assert!((psi - target).abs() <= 10.0 * opts.inner_tol * (1.0 + psi.abs()));
                }
            }
        }
    }

    #[test]
    fn kkt_at_identity_matches_unscaled_form() {
        let pr = random_problem(7, 50, 4, 2);
        let eye = DMatrix::identity(2, 2);
        let c = cfg(15.0, 1.0, 4, 2);
        let opts = PsiSolveOptions {
            inner_tol: 1e-9,
            ..Default::default()
        };
        let fit = update_psi_matrices(&pr.psi0, 0.5, &eye, &pr.x, &pr.y, &c, &opts).unwrap();
        let rates = c.psi_rates(0.5);
        for j in 0..4 {
            for k in 0..2 {
                let psi = fit.psi[(j, k)];
                if psi != 0.0 {
                    let z = compute_z(j, k, &fit.psi, &fit.residual, &eye, &pr.x).unwrap();
                    let target = linalg::soft_threshold(z, lambda_star(psi, &rates)) / 50.0;
                    assert!((psi - target).abs() <= 10.0 * opts.inner_tol * (1.0 + psi.abs()));
                }
            }
        }
    }

    #[test]
    fn objective_does_not_decrease() {
        for seed in 0..10 {
            let pr = random_problem(200 + seed, 15, 5, 3);
            for &(l0, l1, theta) in &[(30.0, 1.0, 0.2), (5.0, 0.1, 0.6), (100.0, 2.0, 0.05)] {
                let c = cfg(l0, l1, 5, 3);
                let before = psi_objective(&pr.psi0, theta, &pr.omega, &pr.x, &pr.y, &c).unwrap();
                let fit = update_psi_matrices(
                    &pr.psi0,
                    theta,
                    &pr.omega,
                    &pr.x,
                    &pr.y,
                    &c,
                    &PsiSolveOptions::default(),
                )
                .unwrap();
                let after = psi_objective(&fit.psi, theta, &pr.omega, &pr.x, &pr.y, &c).unwrap();
                assert!(after >= before - 1e-9, "{after} < {before}");
            }
        }
    }

    fn lasso_prox_gradient(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
        let xtx = x.transpose() * x;
        let step = 1.0 / xtx.symmetric_eigenvalues().max();
        let xty = x.transpose() * y;
        let mut b = DMatrix::zeros(x.ncols(), y.ncols());
        for _ in 0..200_000 {
            let grad = &xtx * &b - &xty;
            let next = (&b - grad * step).map(|v| linalg::soft_threshold(v, step * lambda));
            let diff = (&next - &b).amax();
            b = next;
            if diff < 1e-14 {
                break;
            }
        }
        b
    }

    #[test]
    fn degenerate_prior_reduces_to_lasso() {
        let pr = random_problem(31, 20, 3, 2);
        let lambda = 4.0;
        let c = cfg(lambda, lambda, 3, 2);
        let opts = PsiSolveOptions {
            inner_tol: 1e-12,
            ..Default::default()
        };
        let fit = update_psi_matrices(
            &DMatrix::zeros(3, 2),
            1.0 - 1e-12,
            &DMatrix::identity(2, 2),
            &pr.x,
            &pr.y,
            &c,
            &opts,
        )
        .unwrap();
        let oracle = lasso_prox_gradient(&pr.x, &pr.y, lambda);
        assert!((&fit.psi - &oracle).amax() < 1e-4, "{} vs {}", fit.psi, oracle);
    }

    #[test]
    fn non_finite_input_is_reported() {
        let pr = random_problem(3, 10, 2, 2);
        let mut y = pr.y.clone();
        y[(0, 0)] = f64::NAN;
        let err = update_psi_matrices(
            &DMatrix::zeros(2, 2),
            0.5,
            &DMatrix::identity(2, 2),
            &pr.x,
            &y,
            &cfg(10.0, 1.0, 2, 2),
            &PsiSolveOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { iteration: 1, row: 0, col: 0 }));
    }

    #[test]
    fn theta_beta_mode_when_rates_coincide() {
        let psi = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -3.0, 0.5]);
        let mut c = cfg(2.0, 2.0, 2, 2);
        c.a_theta = 2.0;
        c.b_theta = 3.0;
        let t = update_theta(&psi, 0.9, &c, &PsiSolveOptions::default());
        assert!((t - 1.0 / 3.0).abs() < 1e-9, "{t}");
    }

    #[test]
    fn theta_matches_grid_search() {
        let psi = DMatrix::from_element(1, 1, 2.0);
        let mut c = cfg(10.0, 1.0, 1, 1);
        c.a_theta = 1.0;
        c.b_theta = 1.0;
        let t = update_theta(&psi, 0.5, &c, &PsiSolveOptions::default());
        let mut best = (f64::NEG_INFINITY, 0.0);
        for i in 1..1_000_000 {
            let th = i as f64 * 1e-6;
            let v = theta_objective(&psi, th, &c);
            if v > best.0 {
                best = (v, th);
            }
        }
        assert!((t - best.1).abs() < 1e-4, "{t} vs {}", best.1);
    }

    #[test]
    fn theta_is_stationary_and_improves() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..20 {
            let mut psi = DMatrix::zeros(10, 4);
            for v in psi.iter_mut() {
                if rng.random_bool(0.2) {
                    *v = rng.random_range(-3.0..3.0);
                }
            }
            let c = cfg(40.0, 0.5, 10, 4);
            let init = rng.random_range(0.01..0.99);
            let opts = PsiSolveOptions::default();
            let t = update_theta(&psi, init, &c, &opts);
            assert!(t > 0.0 && t < 1.0);
            assert!(theta_objective(&psi, t, &c) >= theta_objective(&psi, init, &c));
            let (d1, _) = theta_derivatives(&psi, t, &c);
            assert!(d1.abs() <= 1e-6, "trial {trial}: derivative {d1} at {t}");
        }
    }

    #[test]
    fn theta_derivatives_match_finite_differences() {
        let psi = DMatrix::from_row_slice(1, 3, &[0.0, 0.3, -2.0]);
        let c = cfg(25.0, 1.0, 1, 3);
        for &t in &[0.1, 0.4, 0.8] {
            let h = 1e-5;
            let f = |s: f64| theta_objective(&psi, s, &c);
            let fd1 = (f(t + h) - f(t - h)) / (2.0 * h);
            let fd2 = (f(t + h) - 2.0 * f(t) + f(t - h)) / (h * h);
            let (d1, d2) = theta_derivatives(&psi, t, &c);
            assert!((d1 - fd1).abs() < 1e-6 * (1.0 + d1.abs()));
            assert!((d2 - fd2).abs() < 1e-3 * (1.0 + d2.abs()));
        }
    }

    #[test]
    fn golden_section_finds_parabola_peak() {
        let x = golden_section_max(&|t: f64| -(t - 0.3) * (t - 0.3), 0.0, 1.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-9);
    }
}
