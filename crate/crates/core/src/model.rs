//! Chain graph model state, data, hyperparameters and the log posterior.
//!
//! The model is `y | x ~ N(Ω⁻¹Ψᵀx, Ω⁻¹)`: Ψ (p×q) holds direct effects of the
//! predictors on the responses and Ω (q×q) the residual conditional
//! dependence among responses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cholesky};
use crate::penalty::MixtureRates;

/// Design and response matrices; the design columns are centered and scaled so
/// that each has squared Euclidean norm n.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DMatrix<f64>,
    col_centers: DVector<f64>,
    col_scales: DVector<f64>,
}

impl Dataset {
    /// Standardizes `raw_x` and pairs it with `y`.
    pub fn from_raw(raw_x: &DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        check_rows(raw_x.nrows(), y.nrows())?;
        let (x, col_centers, col_scales) = standardize_design(raw_x)?;
        Self::validated(x, y, col_centers, col_scales)
    }

    /// Wraps an already standardized design, checking the column invariants.
    pub fn from_standardized(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        check_rows(x.nrows(), y.nrows())?;
        let n = x.nrows() as f64;
        for (j, col) in x.column_iter().enumerate() {
            let mean = col.sum() / n;
            let sq = col.norm_squared();
            if mean.abs() > 1e-10 || (sq - n).abs() > 1e-10 * n {
                return Err(Error::InvalidArgument(format!(
                    "design column {j} is not standardized (mean {mean:e}, squared norm {sq})"
                )));
            }
        }
        let p = x.ncols();
        Self::validated(x, y, DVector::zeros(p), DVector::from_element(p, 1.0))
    }

    fn validated(
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        col_centers: DVector<f64>,
        col_scales: DVector<f64>,
    ) -> Result<Self> {
        if x.nrows() < 2 || x.ncols() < 1 || y.ncols() < 2 {
            return Err(Error::Dimension(format!(
                "need n ≥ 2, p ≥ 1, q ≥ 2; got n = {}, p = {}, q = {}",
                x.nrows(),
                x.ncols(),
                y.ncols()
            )));
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("response matrix has non-finite entries".into()));
        }
        Ok(Dataset {
            x,
            y,
            col_centers,
            col_scales,
        })
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.y.ncols()
    }

    pub fn col_centers(&self) -> &DVector<f64> {
        &self.col_centers
    }

    pub fn col_scales(&self) -> &DVector<f64> {
        &self.col_scales
    }

    /// Rescales a Ψ fitted on the standardized design back to raw predictor units.
    pub fn psi_to_raw_scale(&self, psi: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = psi.clone();
        for (j, mut row) in out.row_iter_mut().enumerate() {
            row /= self.col_scales[j];
        }
        out
    }
}

fn check_rows(nx: usize, ny: usize) -> Result<()> {
    if nx != ny {
        return Err(Error::Dimension(format!(
            "X has {nx} rows but Y has {ny} rows"
        )));
    }
    Ok(())
}

/// Centers each column and rescales it to squared norm n.
///
/// Returns the standardized matrix, the column means and the scale factors
/// (raw centered column = standardized column × scale).
pub fn standardize_design(
    raw_x: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let n = raw_x.nrows();
    if n < 2 {
        return Err(Error::Dimension(format!("need at least 2 rows, got {n}")));
    }
    let nf = n as f64;
    let p = raw_x.ncols();
    let mut x = raw_x.clone();
    let mut centers = DVector::zeros(p);
    let mut scales = DVector::zeros(p);
    for (j, mut col) in x.column_iter_mut().enumerate() {
        if !col.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("column {j} has non-finite entries")));
        }
        let mean = col.sum() / nf;
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        let magnitude = raw_x.column(j).amax().max(1.0);
        if norm <= 1e-12 * magnitude * nf.sqrt() {
            return Err(Error::ConstantColumn(j));
        }
        let scale = norm / nf.sqrt();
        col /= scale;
        centers[j] = mean;
        scales[j] = scale;
    }
    Ok((x, centers, scales))
}

/// Ψ, Ω, θ and η: the quantities the ECM algorithm optimizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainGraphParams {
    psi: DMatrix<f64>,
    omega: DMatrix<f64>,
    theta: f64,
    eta: f64,
}

impl ChainGraphParams {
    /// Validates Ω (exactly symmetric, positive definite) and θ, η ∈ [0, 1].
    pub fn new(psi: DMatrix<f64>, omega: DMatrix<f64>, theta: f64, eta: f64) -> Result<Self> {
        if omega.nrows() != psi.ncols() || !omega.is_square() {
            return Err(Error::Dimension(format!(
                "Ψ is {}×{} but Ω is {}×{}",
                psi.nrows(),
                psi.ncols(),
                omega.nrows(),
                omega.ncols()
            )));
        }
        if !linalg::is_exactly_symmetric(&omega) {
            return Err(Error::InvalidArgument("Ω must be exactly symmetric".into()));
        }
        cholesky(&omega, "Ω")?;
        if !psi.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("Ψ has non-finite entries".into()));
        }
        for (name, v) in [("θ", theta), ("η", eta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(ChainGraphParams {
            psi,
            omega,
            theta,
            eta,
        })
    }

    /// Ψ = 0, Ω = I, θ = η = ½.
    pub fn default_init(p: usize, q: usize) -> Self {
        ChainGraphParams {
            psi: DMatrix::zeros(p, q),
            omega: DMatrix::identity(q, q),
            theta: 0.5,
            eta: 0.5,
        }
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn omega(&self) -> &DMatrix<f64> {
        &self.omega
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn p(&self) -> usize {
        self.psi.nrows()
    }

    pub fn q(&self) -> usize {
        self.psi.ncols()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DMatrix<f64>, f64, f64) {
        (self.psi, self.omega, self.theta, self.eta)
    }
}

/// Penalty and prior hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    /// Spike rate for Ψ.
    pub lambda0: f64,
    /// Slab rate for Ψ.
    pub lambda1: f64,
    /// Spike rate for the off-diagonal of Ω.
    pub xi0: f64,
    /// Slab rate for the off-diagonal of Ω.
    pub xi1: f64,
    /// Exponential rate on the diagonal of Ω.
    pub xi_diag: f64,
    pub a_theta: f64,
    pub b_theta: f64,
    pub a_eta: f64,
    pub b_eta: f64,
}

impl SslConfig {
    /// Penalties as given; Beta hyperparameters a_θ = 1, b_θ = pq, a_η = 1,
    /// b_η = q and diagonal rate 1.
    pub fn with_default_priors(
        lambda0: f64,
        lambda1: f64,
        xi0: f64,
        xi1: f64,
        p: usize,
        q: usize,
    ) -> Self {
        SslConfig {
            lambda0,
            lambda1,
            xi0,
            xi1,
            xi_diag: 1.0,
            a_theta: 1.0,
            b_theta: (p * q) as f64,
            a_eta: 1.0,
            b_eta: q as f64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda0,
            self.lambda1,
            self.xi0,
            self.xi1,
            self.xi_diag,
            self.a_theta,
            self.b_theta,
            self.a_eta,
            self.b_eta,
        ];
        if !all.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Err(Error::InvalidArgument(
                "all penalty and prior hyperparameters must be positive".into(),
            ));
        }
        if !(self.lambda1 < self.lambda0) {
            return Err(Error::InvalidArgument(format!(
                "need lambda1 < lambda0, got {} and {}",
                self.lambda1, self.lambda0
            )));
        }
        if !(self.xi1 < self.xi0) {
            return Err(Error::InvalidArgument(format!(
                "need xi1 < xi0, got {} and {}",
                self.xi1, self.xi0
            )));
        }
        Ok(())
    }

    /// (λ₀, λ₁, θ) mixture for entries of Ψ. Not validated.
    pub fn psi_rates(&self, theta: f64) -> MixtureRates {
        MixtureRates {
            rate_spike: self.lambda0,
            rate_slab: self.lambda1,
            mix: theta,
        }
    }

    /// (ξ₀, ξ₁, η) mixture for off-diagonal entries of Ω. Not validated.
    pub fn omega_rates(&self, eta: f64) -> MixtureRates {
        MixtureRates {
            rate_spike: self.xi0,
            rate_slab: self.xi1,
            mix: eta,
        }
    }
}

/// R = YΩ − XΨ.
pub fn residual_matrix(params: &ChainGraphParams, data: &Dataset) -> Result<DMatrix<f64>> {
    residual_of(params.psi(), params.omega(), data.x(), data.y())
}

pub(crate) fn residual_of(
    psi: &DMatrix<f64>,
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if x.ncols() != psi.nrows()
        || y.ncols() != psi.ncols()
        || omega.nrows() != y.ncols()
        || omega.ncols() != y.ncols()
        || x.nrows() != y.nrows()
    {
        return Err(Error::Dimension(format!(
            "X {}×{}, Y {}×{}, Ψ {}×{}, Ω {}×{}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            psi.nrows(),
            psi.ncols(),
            omega.nrows(),
            omega.ncols()
        )));
    }
    Ok(y * omega - x * psi)
}

/// Gaussian chain-graph log-likelihood, up to −(nq/2)·log 2π:
/// (n/2)·log|Ω| − ½·tr(RΩ⁻¹Rᵀ) with R = YΩ − XΨ.
pub fn log_likelihood(params: &ChainGraphParams, data: &Dataset) -> Result<f64> {
    let r = residual_matrix(params, data)?;
    let chol = cholesky(params.omega(), "Ω")?;
    let half_quad = 0.5 * chol.solve(&r.transpose()).component_mul(&r.transpose()).sum();
    Ok(0.5 * data.n() as f64 * linalg::log_det(&chol) - half_quad)
}

/// Log prior of (Ψ, θ, Ω, η) with parameter-free normalizers dropped.
pub fn log_prior(params: &ChainGraphParams, cfg: &SslConfig) -> Result<f64> {
    let (theta, eta) = (params.theta(), params.eta());
    if !(theta > 0.0 && theta < 1.0 && eta > 0.0 && eta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "θ = {theta} and η = {eta} must lie strictly inside (0, 1)"
        )));
    }
    let psi_rates = cfg.psi_rates(theta);
    let omega_rates = cfg.omega_rates(eta);
    let psi_term: f64 = params.psi().iter().map(|&v| psi_rates.log_density(v)).sum();
    let omega = params.omega();
    let q = omega.nrows();
    let mut omega_term = 0.0;
    for k in 0..q {
        omega_term -= cfg.xi_diag * omega[(k, k)];
        for kp in (k + 1)..q {
            omega_term += omega_rates.log_density(omega[(k, kp)]);
        }
    }
    let beta_terms = (cfg.a_theta - 1.0) * theta.ln()
        + (cfg.b_theta - 1.0) * (-theta).ln_1p()
        + (cfg.a_eta - 1.0) * eta.ln()
        + (cfg.b_eta - 1.0) * (-eta).ln_1p();
    Ok(psi_term + omega_term + beta_terms)
}

/// Log posterior density (larger is better), additive constants dropped.
pub fn log_posterior(params: &ChainGraphParams, data: &Dataset, cfg: &SslConfig) -> Result<f64> {
    if params.p() != data.p() || params.q() != data.q() {
        return Err(Error::Dimension(format!(
            "parameters are {}×{} but data has p = {}, q = {}",
            params.p(),
            params.q(),
            data.p(),
            data.q()
        )));
    }
    Ok(log_likelihood(params, data)? + log_prior(params, cfg)?)
}

/// B = ΨΩ⁻¹ via a Cholesky solve.
pub fn marginal_coefficients(params: &ChainGraphParams) -> Result<DMatrix<f64>> {
    let chol = cholesky(params.omega(), "Ω")?;
    // Ω symmetric: B = (Ω⁻¹Ψᵀ)ᵀ.
    Ok(chol.solve(&params.psi().transpose()).transpose())
}

/// Direct effect of predictor `j` on response `k`: −ψ_jk / ω_kk (zero-based indices).
pub fn direct_effect(params: &ChainGraphParams, j: usize, k: usize) -> Result<f64> {
    if j >= params.p() || k >= params.q() {
        return Err(Error::InvalidArgument(format!(
            "index ({j}, {k}) out of range for p = {}, q = {}",
            params.p(),
            params.q()
        )));
    }
    Ok(-params.psi()[(j, k)] / params.omega()[(k, k)])
}

/// Ratio of the largest to the smallest singular value; `f64::INFINITY` when
/// the matrix is numerically rank deficient.
pub fn condition_number(r: &DMatrix<f64>) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::InvalidArgument("condition number of an empty matrix".into()));
    }
    if !r.iter().all(|v| v.is_finite()) {
        return Ok(f64::INFINITY);
    }
    let sv = r.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    let rank_tol = max * f64::EPSILON * r.nrows().max(r.ncols()) as f64;
    if max == 0.0 || min <= rank_tol {
        return Ok(f64::INFINITY);
    }
    Ok(max / min)
}
