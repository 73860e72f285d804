//! Expectation/conditional-maximization fitting of the full model.
//!
//! Each iteration computes the expected slab indicators for Ω, updates (Ψ, θ)
//! by coordinate ascent and Newton's method, and then updates η in closed form
//! and Ω with the cgQUIC solver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cgquic::{self, CglassoProblem, CgquicOptions};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{self, log_posterior, ChainGraphParams, Dataset, SslConfig};
use crate::penalty::pstar;
use crate::psi::{self, PsiSolveOptions};

const ETA_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EcmOptions {
    /// Stop once the largest relative entry change in Ψ and Ω is below this.
    pub ecm_tol: f64,
    pub max_ecm_iter: usize,
    /// The fit is abandoned when cond(YΩ − XΨ) exceeds this multiple of n.
    pub guard_multiplier: f64,
    pub psi_opts: PsiSolveOptions,
    pub quic_opts: CgquicOptions,
}

impl Default for EcmOptions {
    fn default() -> Self {
        EcmOptions {
            ecm_tol: 1e-3,
            max_ecm_iter: 500,
            guard_multiplier: 10.0,
            psi_opts: PsiSolveOptions::default(),
            // Each Ω-step only needs to improve on the warm start, not solve exactly.
            quic_opts: CgquicOptions {
                subgrad_tol: 1e-6,
                ..CgquicOptions::default()
            },
        }
    }
}

impl EcmOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.ecm_tol > 0.0 && self.guard_multiplier > 0.0) || self.max_ecm_iter == 0 {
            return Err(Error::InvalidArgument(
                "ECM tolerance, iteration cap and guard multiplier must be positive".into(),
            ));
        }
        self.psi_opts.validate()?;
        self.quic_opts.validate()
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ChainGraphParams,
    /// Log posterior at the initial point and after every completed iteration.
    pub log_posterior_trace: Vec<f64>,
    pub ecm_iterations: usize,
    pub converged: bool,
    pub guardrail_triggered: bool,
    /// Nonzero entries (j, k) of Ψ, row-major.
    pub support_psi: Vec<(usize, usize)>,
    /// Nonzero off-diagonal entries (k, k') of Ω with k < k'.
    pub support_omega: Vec<(usize, usize)>,
}

impl FitResult {
    pub fn from_params(
        params: ChainGraphParams,
        log_posterior_trace: Vec<f64>,
        ecm_iterations: usize,
        converged: bool,
        guardrail_triggered: bool,
    ) -> Self {
        let support_psi = psi_support(params.psi());
        let support_omega = omega_support(params.omega());
        FitResult {
            params,
            log_posterior_trace,
            ecm_iterations,
            converged,
            guardrail_triggered,
            support_psi,
            support_omega,
        }
    }
}

pub fn psi_support(psi: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for j in 0..psi.nrows() {
        for k in 0..psi.ncols() {
            if psi[(j, k)] != 0.0 {
                out.push((j, k));
            }
        }
    }
    out
}

pub fn omega_support(omega: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let q = omega.nrows();
    let mut out = Vec::new();
    for k in 0..q {
        for kp in (k + 1)..q {
            if omega[(k, kp)] != 0.0 {
                out.push((k, kp));
            }
        }
    }
    out
}

/// Expected slab indicators q⋆(ω_kk', η) for k ≠ k'; the diagonal is zero.
pub fn e_step(omega: &DMatrix<f64>, eta: f64, cfg: &SslConfig) -> DMatrix<f64> {
    let rates = cfg.omega_rates(eta);
    let q = omega.nrows();
    let mut out = DMatrix::zeros(q, q);
    for k in 0..q {
        for kp in (k + 1)..q {
            let v = pstar(omega[(k, kp)], &rates);
            out[(k, kp)] = v;
            out[(kp, k)] = v;
        }
    }
    out
}

/// Closed-form η: (a_η − 1 + Σ_{k<k'} q⋆) / (a_η + b_η − 2 + q(q−1)/2), clamped
/// to [1e-8, 1 − 1e-8].
pub fn update_eta(qstar: &DMatrix<f64>, a_eta: f64, b_eta: f64, q: usize) -> Result<f64> {
    if q < 2 || qstar.nrows() != q || qstar.ncols() != q {
        return Err(Error::Dimension(format!(
            "η update needs a q×q indicator matrix with q ≥ 2, got {}×{} for q = {q}",
            qstar.nrows(),
            qstar.ncols()
        )));
    }
    let pairs = (q * (q - 1) / 2) as f64;
    let denom = a_eta + b_eta - 2.0 + pairs;
    if !(denom > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "η update denominator a_η + b_η − 2 + q(q−1)/2 = {denom} is not positive"
        )));
    }
    let mut total = 0.0;
    for k in 0..q {
        for kp in (k + 1)..q {
            total += qstar[(k, kp)];
        }
    }
    Ok(((a_eta - 1.0 + total) / denom).clamp(ETA_FLOOR, 1.0 - ETA_FLOOR))
}

/// Ξ for the cgQUIC subproblem: (ξ₁q⋆ + ξ₀(1 − q⋆))/n off the diagonal and
/// 2ξ/n on it.
pub fn build_omega_penalty(qstar: &DMatrix<f64>, cfg: &SslConfig, n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let q = qstar.nrows();
    DMatrix::from_fn(q, q, |k, kp| {
        if k == kp {
            2.0 * cfg.xi_diag / nf
        } else {
            let w = qstar[(k, kp)];
            (cfg.xi1 * w + cfg.xi0 * (1.0 - w)) / nf
        }
    })
}

/// S = YᵀY/n.
pub(crate) fn response_gram(data: &Dataset) -> DMatrix<f64> {
    let mut s = data.y().transpose() * data.y() / data.n() as f64;
    linalg::symmetrize(&mut s);
    s
}

/// M = (XΨ)ᵀ(XΨ)/n.
pub(crate) fn fitted_gram(data: &Dataset, psi: &DMatrix<f64>) -> DMatrix<f64> {
    let xp = data.x() * psi;
    let mut m = xp.transpose() * &xp / data.n() as f64;
    linalg::symmetrize(&mut m);
    m
}

/// First non-finite entry of a Gram matrix, reported against `iteration`.
fn ensure_finite(m: &DMatrix<f64>, iteration: usize) -> Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(idx) => Err(Error::NonFinite {
            iteration,
            row: idx % m.nrows(),
            col: idx / m.nrows(),
        }),
    }
}

/// Which conditional blocks an ECM run updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Blocks {
    All,
    PsiTheta,
    OmegaEta,
}

/// Fits all parameters at one penalty setting.
pub fn ecm_fit(
    data: &Dataset,
    cfg: &SslConfig,
    init: &ChainGraphParams,
    opts: &EcmOptions,
) -> Result<FitResult> {
    run(data, cfg, init, opts, Blocks::All)
}

/// Updates only (Ψ, θ), holding Ω and η at their initial values.
pub fn fit_psi_theta(
    data: &Dataset,
    cfg: &SslConfig,
    init: &ChainGraphParams,
    opts: &EcmOptions,
) -> Result<FitResult> {
    run(data, cfg, init, opts, Blocks::PsiTheta)
}

/// Updates only (Ω, η), holding Ψ and θ at their initial values.
pub fn fit_omega_eta(
    data: &Dataset,
    cfg: &SslConfig,
    init: &ChainGraphParams,
    opts: &EcmOptions,
) -> Result<FitResult> {
    run(data, cfg, init, opts, Blocks::OmegaEta)
}

pub(crate) fn run(
    data: &Dataset,
    cfg: &SslConfig,
    init: &ChainGraphParams,
    opts: &EcmOptions,
    blocks: Blocks,
) -> Result<FitResult> {
    cfg.validate()?;
    opts.validate()?;
    if init.p() != data.p() || init.q() != data.q() {
        return Err(Error::Dimension(format!(
            "initial parameters are {}×{} but data has p = {}, q = {}",
            init.p(),
            init.q(),
            data.p(),
            data.q()
        )));
    }
    let (n, p, q) = (data.n(), data.p(), data.q());
    let (mut psi, mut omega, mut theta, mut eta) = init.clone().into_parts();
    theta = theta.clamp(ETA_FLOOR, 1.0 - ETA_FLOOR);
    eta = eta.clamp(ETA_FLOOR, 1.0 - ETA_FLOOR);
    let start = ChainGraphParams::new(psi.clone(), omega.clone(), theta, eta)?;
    let mut trace = vec![log_posterior(&start, data, cfg)?];
    let s = response_gram(data);
    let update_psi_block = blocks != Blocks::OmegaEta;
    let update_omega_block = blocks != Blocks::PsiTheta;

    for iter in 1..=opts.max_ecm_iter {
        let at = |e: Error| e.at_ecm_iteration(iter);
        let qstar = e_step(&omega, eta, cfg);

        let mut new_psi = psi.clone();
        let mut new_theta = theta;
        if update_psi_block {
            let fit = psi::update_psi(&psi, theta, &omega, data, cfg, &opts.psi_opts).map_err(at)?;
            new_theta = psi::update_theta(&fit.psi, theta, cfg, &opts.psi_opts);
            let cond = model::condition_number(&fit.residual).map_err(at)?;
            if cond > opts.guard_multiplier * n as f64 {
                let reset = ChainGraphParams::default_init(p, q);
                return Ok(FitResult::from_params(reset, trace, iter, false, true));
            }
            new_psi = fit.psi;
        }

        let mut new_omega = omega.clone();
        let mut new_eta = eta;
        if update_omega_block {
            new_eta = update_eta(&qstar, cfg.a_eta, cfg.b_eta, q).map_err(at)?;
            let xi = build_omega_penalty(&qstar, cfg, n);
            let m = fitted_gram(data, &new_psi);
            ensure_finite(&s, iter).and_then(|_| ensure_finite(&m, iter)).map_err(at)?;
            let prob = CglassoProblem::new(s.clone(), m, xi, omega.clone()).map_err(at)?;
            new_omega = cgquic::solve(&prob, &opts.quic_opts).map_err(at)?.omega;
        }

        let change = linalg::max_relative_change(&psi, &new_psi, 1e-8)
            .max(linalg::max_relative_change(&omega, &new_omega, 1e-8));
        psi = new_psi;
        omega = new_omega;
        theta = new_theta;
        eta = new_eta;
        let current = ChainGraphParams::new(psi.clone(), omega.clone(), theta, eta).map_err(at)?;
        trace.push(log_posterior(&current, data, cfg).map_err(at)?);
        if change < opts.ecm_tol {
            return Ok(FitResult::from_params(current, trace, iter, true, false));
        }
    }
    let last = ChainGraphParams::new(psi, omega, theta, eta)?;
    Ok(FitResult::from_params(last, trace, opts.max_ecm_iter, false, false))
}
