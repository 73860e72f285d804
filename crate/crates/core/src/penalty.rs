//! Spike-and-slab LASSO penalty mathematics.
//!
//! Everything here works on a two-component Laplace mixture
//! `mix·Laplace(rate_slab) + (1 − mix)·Laplace(rate_spike)` and is evaluated in
//! log space, so rates up to 1e8 and arguments up to 1e8 stay finite.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Spike rate, slab rate and slab weight of one mixture prior.
///
/// Used with `(λ₀, λ₁, θ)` for entries of Ψ and `(ξ₀, ξ₁, η)` for off-diagonal
/// entries of Ω.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureRates {
    pub rate_spike: f64,
    pub rate_slab: f64,
    pub mix: f64,
}

impl MixtureRates {
    pub fn new(rate_spike: f64, rate_slab: f64, mix: f64) -> Result<Self> {
        if !(rate_slab > 0.0 && rate_slab < rate_spike && rate_spike.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mixture rates need 0 < slab < spike, got slab {rate_slab}, spike {rate_spike}"
            )));
        }
        if !(mix > 0.0 && mix < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "mixture weight must lie in (0, 1), got {mix}"
            )));
        }
        Ok(MixtureRates {
            rate_spike,
            rate_slab,
            mix,
        })
    }

    /// log[(1−mix)·spike / (mix·slab)] − (spike − slab)|x|: the log odds of the
    /// spike component at `x`.
    #[inline]
    fn spike_log_odds(&self, x: f64) -> f64 {
        (-self.mix).ln_1p() + self.rate_spike.ln()
            - self.mix.ln()
            - self.rate_slab.ln()
            - (self.rate_spike - self.rate_slab) * x.abs()
    }

    /// Log of the mixture density (without the Laplace ½ factors):
    /// log(mix·slab·e^{−slab|x|} + (1−mix)·spike·e^{−spike|x|}).
    pub fn log_density(&self, x: f64) -> f64 {
        self.mix.ln() + self.rate_slab.ln() - self.rate_slab * x.abs()
            + softplus(self.spike_log_odds(x))
    }
}

/// log(1 + eᵗ) without overflow.
#[inline]
pub(crate) fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Conditional probability that `x` was drawn from the slab.
pub fn pstar(x: f64, r: &MixtureRates) -> f64 {
    let t = r.spike_log_odds(x);
    if t > 0.0 {
        let e = (-t).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + t.exp())
    }
}

/// log p⋆(x), accurate where p⋆ underflows.
pub fn log_pstar(x: f64, r: &MixtureRates) -> f64 {
    -softplus(r.spike_log_odds(x))
}

/// Adaptive penalty: slab·p⋆(x) + spike·(1 − p⋆(x)).
pub fn lambda_star(x: f64, r: &MixtureRates) -> f64 {
    let p = pstar(x, r);
    r.rate_slab * p + r.rate_spike * (1.0 - p)
}

/// log[π(x)/π(0)] = −slab·|x| + log[p⋆(0)/p⋆(x)].
pub fn pen(x: f64, r: &MixtureRates) -> f64 {
    -r.rate_slab * x.abs() + log_pstar(0.0, r) - log_pstar(x, r)
}

/// Second derivative of `pen` away from the origin: (spike − slab)²·p⋆(1 − p⋆).
pub fn pen_second_derivative(x: f64, r: &MixtureRates) -> f64 {
    let p = pstar(x, r);
    let gap = r.rate_spike - r.rate_slab;
    gap * gap * p * (1.0 - p)
}

/// Bounds on the hard threshold applied to the coordinate statistic z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdBounds {
    /// Lower bound Δᴸ; `None` when the curvature root does not exist or the
    /// radicand is negative.
    pub lower: Option<f64>,
    /// Upper bound Δᵁ, always computable.
    pub upper: f64,
    /// Whether `spike − slab > 2·sqrt(n·(Ω⁻¹)_kk)` holds.
    pub valid: bool,
}

/// Δᴸ and Δᵁ for a coordinate in response column k, given (Ω⁻¹)_kk.
pub fn threshold_bounds(omega_inv_kk: f64, n: usize, r: &MixtureRates) -> Result<ThresholdBounds> {
    if !(omega_inv_kk > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "(Ω⁻¹)_kk must be positive, got {omega_inv_kk}"
        )));
    }
    let c = omega_inv_kk;
    let nf = n as f64;
    let (upper, valid) = upper_threshold(c, nf, r)?;
    let log_p0 = log_pstar(0.0, r);

    let lower = curvature_root(nf * c, r).and_then(|root| {
        let excess = lambda_star(root, r) - r.rate_slab;
        let d = -excess * excess - 2.0 * nf * c * log_pstar(root, r);
        let radicand = -2.0 * nf / c * log_p0 - d / (c * c);
        (radicand >= 0.0).then(|| radicand.sqrt() + r.rate_slab / c)
    });

    Ok(ThresholdBounds {
        lower,
        upper,
        valid,
    })
}

/// Δᵁ and the validity flag for a column with squared norm `n`.
pub(crate) fn upper_threshold(c: f64, n: f64, r: &MixtureRates) -> Result<(f64, bool)> {
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("(Ω⁻¹)_kk must be positive, got {c}")));
    }
    let log_p0 = log_pstar(0.0, r);
    if !(log_p0 < 0.0) {
        return Err(Error::InvalidArgument(
            "p⋆(0) must be below one for a threshold to exist".into(),
        ));
    }
    let upper = (-2.0 * n / c * log_p0).sqrt() + r.rate_slab / c;
    let valid = r.rate_spike - r.rate_slab > 2.0 * (n * c).sqrt();
    Ok((upper, valid))
}

/// Largest x ≥ 0 with pen''(x) = level, by bisection on [0, 50/(spike − slab)].
fn curvature_root(level: f64, r: &MixtureRates) -> Option<f64> {
    let gap = r.rate_spike - r.rate_slab;
    if !(gap > 0.0) {
        return None;
    }
    let hi_end = 50.0 / gap;
    // pen'' peaks where p⋆ = ½ and decreases beyond it.
    let peak = (r.spike_log_odds(0.0) / gap).clamp(0.0, hi_end);
    let excess = |x: f64| pen_second_derivative(x, r) - level;
    let (mut lo, mut hi) = (peak, hi_end);
    if !(excess(lo) > 0.0 && excess(hi) < 0.0) {
        return None;
    }
    while hi - lo > 1e-10 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Point where the two weighted mixture components have equal density.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntersectionThreshold {
    pub value: f64,
    /// Set when the slab dominates everywhere and the value was floored at 0.
    pub floored: bool,
}

pub fn intersection_threshold(r: &MixtureRates) -> Result<IntersectionThreshold> {
    let gap = r.rate_spike - r.rate_slab;
    if !(gap > 0.0) {
        return Err(Error::InvalidArgument(
            "intersection threshold needs slab rate < spike rate".into(),
        ));
    }
    let log_arg = r.spike_log_odds(0.0);
    if log_arg < 0.0 {
        Ok(IntersectionThreshold {
            value: 0.0,
            floored: true,
        })
    } else {
        Ok(IntersectionThreshold {
            value: log_arg / gap,
            floored: false,
        })
    }
}

/// Number of entries with |value| > delta; with `off_diagonal_only` only the
/// strict lower triangle is counted.
pub fn effective_dimension(m: &DMatrix<f64>, delta: f64, off_diagonal_only: bool) -> usize {
    let mut count = 0;
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if off_diagonal_only && i <= j {
                continue;
            }
            if m[(i, j)].abs() > delta {
                count += 1;
            }
        }
    }
    count
}
