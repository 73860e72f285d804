//! Synthetic chain-graph data and support-recovery scoring.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecm::{EcmOptions, FitResult};
use crate::error::{Error, Result};
use crate::linalg::cholesky;
use crate::model::{Dataset, SslConfig};
use crate::path::{self, default_ladders};

/// Structure of the true precision matrix Ω₀.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OmegaKind {
    Ar1,
    Ar2,
    Block,
    Star,
    Dense,
}

impl OmegaKind {
    pub const ALL: [OmegaKind; 5] = [
        OmegaKind::Ar1,
        OmegaKind::Ar2,
        OmegaKind::Block,
        OmegaKind::Star,
        OmegaKind::Dense,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OmegaKind::Ar1 => "ar1",
            OmegaKind::Ar2 => "ar2",
            OmegaKind::Block => "block",
            OmegaKind::Star => "star",
            OmegaKind::Dense => "dense",
        }
    }
}

impl fmt::Display for OmegaKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OmegaKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        OmegaKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown pattern '{s}' (expected ar1, ar2, block, star or dense)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OmegaPattern {
    pub kind: OmegaKind,
    pub q: usize,
}

impl OmegaPattern {
    pub fn new(kind: OmegaKind, q: usize) -> Result<Self> {
        if q < 2 {
            return Err(Error::InvalidArgument(format!("pattern needs q ≥ 2, got {q}")));
        }
        if kind == OmegaKind::Ar2 && q < 3 {
            return Err(Error::InvalidArgument("AR(2) pattern needs q ≥ 3".into()));
        }
        if kind == OmegaKind::Block && q % 2 != 0 {
            return Err(Error::InvalidArgument(format!("block pattern needs even q, got {q}")));
        }
        Ok(OmegaPattern { kind, q })
    }
}

/// Ω₀ for a pattern. Zeros are exact: AR(1) and block use closed-form inverses.
pub fn gen_omega(pattern: OmegaPattern) -> Result<DMatrix<f64>> {
    let OmegaPattern { kind, q } = OmegaPattern::new(pattern.kind, pattern.q)?;
    let omega = match kind {
        OmegaKind::Ar1 => {
            let rho: f64 = 0.7;
            let scale = 1.0 / (1.0 - rho * rho);
            DMatrix::from_fn(q, q, |i, j| {
                if i == j {
                    if i == 0 || i == q - 1 {
                        scale
                    } else {
                        (1.0 + rho * rho) * scale
                    }
                } else if i.abs_diff(j) == 1 {
                    -rho * scale
                } else {
                    0.0
                }
            })
        }
        OmegaKind::Ar2 => DMatrix::from_fn(q, q, |i, j| match i.abs_diff(j) {
            0 => 1.0,
            1 => 0.5,
            2 => 0.25,
            _ => 0.0,
        }),
        OmegaKind::Block => {
            // Inverse of (1 − ρ)I + ρJ on each m×m block.
            let m = q / 2;
            let rho = 0.5;
            let c = rho / (1.0 + (m as f64 - 1.0) * rho);
            let inv = 1.0 / (1.0 - rho);
            DMatrix::from_fn(q, q, |i, j| {
                if i / m != j / m {
                    0.0
                } else if i == j {
                    inv * (1.0 - c)
                } else {
                    -inv * c
                }
            })
        }
        OmegaKind::Star => DMatrix::from_fn(q, q, |i, j| {
            if i == j {
                1.0
            } else if i == 0 || j == 0 {
                0.1
            } else {
                0.0
            }
        }),
        OmegaKind::Dense => DMatrix::from_fn(q, q, |i, j| {
            if i == j {
                2.0 * q as f64 - 1.0
            } else {
                2.0
            }
        }),
    };
    cholesky(&omega, "Ω₀")?;
    Ok(omega)
}

/// Ψ₀ with round(density·p·q) nonzero entries at uniformly chosen positions,
/// each drawn from Uniform(−2, 2).
pub fn gen_psi(p: usize, q: usize, density: f64, rng: &mut impl Rng) -> Result<DMatrix<f64>> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::InvalidArgument(format!("density {density} outside (0, 1]")));
    }
    let total = p * q;
    let count = ((density * total as f64).round() as usize).min(total);
    let mut psi = DMatrix::zeros(p, q);
    let values = Uniform::new(-2.0, 2.0).expect("valid range");
    let mut positions = index::sample(rng, total, count).into_vec();
    positions.sort_unstable();
    for pos in positions {
        // Row-major position so that the layout does not depend on storage order.
        psi[(pos / q, pos % q)] = rng.sample(values);
    }
    Ok(psi)
}

/// Raw design, standardized dataset and the truth it was generated from.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub raw_x: DMatrix<f64>,
    pub data: Dataset,
}

/// X with iid N(0, 1) entries and Y = XΨ₀Ω₀⁻¹ + E, where the rows of E are
/// N(0, Ω₀⁻¹) draws obtained by solving Lᵀz = u with LLᵀ = Ω₀.
pub fn gen_dataset(
    psi0: &DMatrix<f64>,
    omega0: &DMatrix<f64>,
    n: usize,
    rng: &mut impl Rng,
) -> Result<SimulatedData> {
    let (p, q) = (psi0.nrows(), psi0.ncols());
    if n <= p {
        return Err(Error::InvalidArgument(format!("need n > p, got n = {n}, p = {p}")));
    }
    if omega0.nrows() != q || omega0.ncols() != q {
        return Err(Error::Dimension(format!(
            "Ψ₀ has {q} columns but Ω₀ is {}×{}",
            omega0.nrows(),
            omega0.ncols()
        )));
    }
    let chol = cholesky(omega0, "Ω₀")?;
    let raw_x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let noise = gen_noise(&chol, n, rng);
    let mean = chol.solve(&(&raw_x * psi0).transpose()).transpose();
    let y = mean + noise;
    let data = Dataset::from_raw(&raw_x, y)?;
    Ok(SimulatedData { raw_x, data })
}

fn gen_noise(chol: &crate::linalg::Chol, n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let q = chol.l_dirty().nrows();
    // Column i of U is the standard normal draw for row i of E.
    let u = DMatrix::from_fn(q, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let lt = chol.l().transpose();
    lt.solve_upper_triangular(&u).expect("Cholesky factor is nonsingular").transpose()
}

/// Confusion counts, rates and Frobenius error of an estimated support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// TP/(TP + FN); absent when the truth has no nonzeros.
    pub sensitivity: Option<f64>,
    /// TP/(TP + FP); absent when the estimate has no nonzeros.
    pub precision: Option<f64>,
    pub frob: f64,
}

/// Scores exact nonzeros of `estimate` against those of `truth`, over all
/// entries or over the strict lower triangle.
pub fn support_metrics(
    estimate: &DMatrix<f64>,
    truth: &DMatrix<f64>,
    off_diagonal_only: bool,
) -> Result<SupportMetrics> {
    if estimate.shape() != truth.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?} but truth is {:?}",
            estimate.shape(),
            truth.shape()
        )));
    }
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for j in 0..truth.ncols() {
        for i in 0..truth.nrows() {
            if off_diagonal_only && i <= j {
                continue;
            }
            match (estimate[(i, j)] != 0.0, truth[(i, j)] != 0.0) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let ratio = |a: usize, b: usize| (a + b > 0).then(|| a as f64 / (a + b) as f64);
    Ok(SupportMetrics {
        tp,
        tn,
        fp,
        fn_,
        sensitivity: ratio(tp, fn_),
        precision: ratio(tp, fp),
        frob: (estimate - truth).norm(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dpe,
    Dcpe,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dpe => "dpe",
            Method::Dcpe => "dcpe",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dpe" => Ok(Method::Dpe),
            "dcpe" => Ok(Method::Dcpe),
            _ => Err(Error::InvalidArgument(format!(
                "unknown method '{s}' (expected dpe or dcpe)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub pattern: OmegaKind,
    pub replicates: usize,
    pub method: Method,
    pub seed: u64,
    #[serde(default = "default_density")]
    pub density: f64,
}

fn default_density() -> f64 {
    0.2
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        OmegaPattern::new(self.pattern, self.q)?;
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("need at least one replicate".into()));
        }
        if self.n <= self.p || self.n < 3 || self.p == 0 {
            return Err(Error::InvalidArgument(format!(
                "need n > p ≥ 1 and n ≥ 3, got n = {}, p = {}",
                self.n, self.p
            )));
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::InvalidArgument(format!("density {} outside (0, 1]", self.density)));
        }
        Ok(())
    }
}

/// Seed for replicate `r`: one SplitMix64 step applied to `seed + r`.
pub fn replicate_seed(seed: u64, r: usize) -> u64 {
    let mut z = seed.wrapping_add(r as u64).wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateResult {
    pub index: usize,
    pub seed: u64,
    pub psi: Option<SupportMetrics>,
    pub omega: Option<SupportMetrics>,
    pub guardrail_triggered: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two values.
    pub sd: Option<f64>,
    pub count: usize,
}

impl MetricSummary {
    pub fn of(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return MetricSummary {
                mean: None,
                sd: None,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = (count > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (count - 1) as f64).sqrt()
        });
        MetricSummary {
            mean: Some(mean),
            sd,
            count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixSummary {
    pub sensitivity: MetricSummary,
    pub precision: MetricSummary,
    pub frob: MetricSummary,
}

impl MatrixSummary {
    fn of(metrics: &[SupportMetrics]) -> Self {
        let sens: Vec<f64> = metrics.iter().filter_map(|m| m.sensitivity).collect();
        let prec: Vec<f64> = metrics.iter().filter_map(|m| m.precision).collect();
        let frob: Vec<f64> = metrics.iter().map(|m| m.frob).collect();
        MatrixSummary {
            sensitivity: MetricSummary::of(&sens),
            precision: MetricSummary::of(&prec),
            frob: MetricSummary::of(&frob),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub psi: MatrixSummary,
    pub omega: MatrixSummary,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResults {
    pub config: BenchmarkConfig,
    pub replicates: Vec<ReplicateResult>,
    pub summary: BenchmarkSummary,
}

/// Truth for one replicate together with the generated data.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub psi0: DMatrix<f64>,
    pub omega0: DMatrix<f64>,
    pub sim: SimulatedData,
}

/// Generates the truth and data of replicate `r` exactly as [`run_benchmark`] does.
pub fn gen_replicate(config: &BenchmarkConfig, r: usize) -> Result<Replicate> {
    let mut rng = ChaCha8Rng::seed_from_u64(replicate_seed(config.seed, r));
    let omega0 = gen_omega(OmegaPattern::new(config.pattern, config.q)?)?;
    let psi0 = gen_psi(config.p, config.q, config.density, &mut rng)?;
    let sim = gen_dataset(&psi0, &omega0, config.n, &mut rng)?;
    Ok(Replicate { psi0, omega0, sim })
}

/// Fits a dataset with the default ladders and priors using `method`.
pub fn fit_with_method(data: &Dataset, method: Method, opts: &EcmOptions) -> Result<FitResult> {
    let ladders = default_ladders(data.n(), data.p(), data.q())?;
    let base = SslConfig::with_default_priors(
        ladders.lambda0[0],
        ladders.lambda1,
        ladders.xi0[0],
        ladders.xi1,
        data.p(),
        data.q(),
    );
    match method {
        Method::Dpe => Ok(path::dpe(data, &ladders, &base, opts)?.final_fit().clone()),
        Method::Dcpe => Ok(path::dcpe(data, &ladders, &base, opts)?.final_fit),
    }
}

fn score_replicate(config: &BenchmarkConfig, r: usize, opts: &EcmOptions) -> ReplicateResult {
    let seed = replicate_seed(config.seed, r);
    let attempt = || -> Result<(SupportMetrics, SupportMetrics, bool)> {
        let rep = gen_replicate(config, r)?;
        let fit = fit_with_method(&rep.sim.data, config.method, opts)?;
        let psi_raw = rep.sim.data.psi_to_raw_scale(fit.params.psi());
        let psi = support_metrics(&psi_raw, &rep.psi0, false)?;
        let omega = support_metrics(fit.params.omega(), &rep.omega0, true)?;
        Ok((psi, omega, fit.guardrail_triggered))
    };
    match attempt() {
        Ok((psi, omega, guardrail_triggered)) => ReplicateResult {
            index: r,
            seed,
            psi: Some(psi),
            omega: Some(omega),
            guardrail_triggered,
            error: None,
        },
        Err(e) => ReplicateResult {
            index: r,
            seed,
            psi: None,
            omega: None,
            guardrail_triggered: false,
            error: Some(e.to_string()),
        },
    }
}

/// Runs every replicate (in parallel on the current rayon pool) and aggregates
/// the metrics in replicate order. Failed replicates are recorded, not fatal.
pub fn run_benchmark(config: &BenchmarkConfig, opts: &EcmOptions) -> Result<BenchmarkResults> {
    config.validate()?;
    opts.validate()?;
    let replicates: Vec<ReplicateResult> = (0..config.replicates)
        .into_par_iter()
        .map(|r| score_replicate(config, r, opts))
        .collect();
    let psi: Vec<SupportMetrics> = replicates.iter().filter_map(|r| r.psi).collect();
    let omega: Vec<SupportMetrics> = replicates.iter().filter_map(|r| r.omega).collect();
    let summary = BenchmarkSummary {
        psi: MatrixSummary::of(&psi),
        omega: MatrixSummary::of(&omega),
        failed: replicates.iter().filter(|r| r.error.is_some()).count(),
    };
    Ok(BenchmarkResults {
        config: config.clone(),
        replicates,
        summary,
    })
}
