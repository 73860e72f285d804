//! Warm-started exploration over ladders of spike penalties.
//!
//! [`dpe`] fits every (λ₀, ξ₀) pair on a grid, starting each cell from the best
//! of its already-fitted neighbours. [`dcpe`] walks the λ₀ ladder with Ω fixed,
//! then the ξ₀ ladder with Ψ fixed, and finishes with one full fit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ecm::{self, EcmOptions, FitResult};
use crate::error::{Error, Result};
use crate::model::{log_posterior, ChainGraphParams, Dataset, SslConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyLadders {
    pub lambda0: Vec<f64>,
    pub xi0: Vec<f64>,
    pub lambda1: f64,
    pub xi1: f64,
}

impl PenaltyLadders {
    pub fn new(lambda0: Vec<f64>, xi0: Vec<f64>, lambda1: f64, xi1: f64) -> Result<Self> {
        let ladders = PenaltyLadders {
            lambda0,
            xi0,
            lambda1,
            xi1,
        };
        ladders.validate()?;
        Ok(ladders)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, ladder, slab) in [
            ("lambda0", &self.lambda0, self.lambda1),
            ("xi0", &self.xi0, self.xi1),
        ] {
            if ladder.is_empty() {
                return Err(Error::InvalidArgument(format!("{name} ladder is empty")));
            }
            if !(slab > 0.0 && slab.is_finite()) {
                return Err(Error::InvalidArgument(format!("slab rate for {name} must be positive")));
            }
            if !ladder.iter().all(|v| v.is_finite()) || ladder.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidArgument(format!(
                    "{name} ladder must be finite and strictly increasing"
                )));
            }
            if !(slab < ladder[0]) {
                return Err(Error::InvalidArgument(format!(
                    "{name} ladder must start above its slab rate {slab}"
                )));
            }
        }
        Ok(())
    }

    /// `base` with the slab rates of the ladders and spike rates at rungs (s, t).
    pub fn config_at(&self, base: &SslConfig, s: usize, t: usize) -> SslConfig {
        SslConfig {
            lambda0: self.lambda0[s],
            lambda1: self.lambda1,
            xi0: self.xi0[t],
            xi1: self.xi1,
            ..*base
        }
    }
}

/// λ₁ = 1, ξ₁ = 0.01n and ten equally spaced spike rates from slab + 1 to n.
pub fn default_ladders(n: usize, p: usize, q: usize) -> Result<PenaltyLadders> {
    if n < 3 || p == 0 || q == 0 {
        return Err(Error::InvalidArgument(format!(
            "default ladders need n ≥ 3 and p, q ≥ 1; got n = {n}, p = {p}, q = {q}"
        )));
    }
    let nf = n as f64;
    let lambda1 = 1.0;
    let xi1 = 0.01 * nf;
    PenaltyLadders::new(linspace(lambda1 + 1.0, nf, 10), linspace(xi1 + 1.0, nf, 10), lambda1, xi1)
}

fn linspace(a: f64, b: f64, len: usize) -> Vec<f64> {
    let step = (b - a) / (len - 1) as f64;
    (0..len)
        .map(|i| if i + 1 == len { b } else { a + step * i as f64 })
        .collect()
}

/// Where a grid cell took its starting point from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WarmStart {
    Default,
    Neighbor { row: usize, col: usize },
}

#[derive(Debug, Clone)]
pub struct DpeCell {
    pub lambda0: f64,
    pub xi0: f64,
    pub warm_start: WarmStart,
    pub init: ChainGraphParams,
    pub fit: FitResult,
}

#[derive(Debug, Clone)]
pub struct DpeResult {
    /// `grid[s][t]` is the fit at (λ₀ ladder[s], ξ₀ ladder[t]).
    pub grid: Vec<Vec<DpeCell>>,
}

impl DpeResult {
    /// The fit at the largest spike penalties.
    pub fn final_fit(&self) -> &FitResult {
        &self.grid.last().and_then(|row| row.last()).expect("grid is non-empty").fit
    }
}

/// Dynamic posterior exploration over the full penalty grid.
///
/// Cells are processed by anti-diagonals (s + t increasing); cells on one
/// anti-diagonal are independent and run in parallel on the current rayon pool.
pub fn dpe(
    data: &Dataset,
    ladders: &PenaltyLadders,
    cfg_base: &SslConfig,
    opts: &EcmOptions,
) -> Result<DpeResult> {
    ladders.validate()?;
    let (rows, cols) = (ladders.lambda0.len(), ladders.xi0.len());
    let mut grid: Vec<Vec<Option<DpeCell>>> = vec![vec![None; cols]; rows];
    for wave in 0..(rows + cols - 1) {
        let cells: Vec<(usize, usize)> = (0..rows)
            .filter_map(|s| wave.checked_sub(s).filter(|&t| t < cols).map(|t| (s, t)))
            .collect();
        let done = &grid;
        let fitted: Vec<Result<DpeCell>> = cells
            .par_iter()
            .map(|&(s, t)| {
                fit_cell(data, ladders, cfg_base, opts, done, s, t).map_err(|e| Error::GridCell {
                    row: s,
                    col: t,
                    source: Box::new(e),
                })
            })
            .collect();
        for (&(s, t), cell) in cells.iter().zip(fitted) {
            grid[s][t] = Some(cell?);
        }
    }
    let grid = grid
        .into_iter()
        .map(|row| row.into_iter().map(|c| c.expect("every cell fitted")).collect())
        .collect();
    Ok(DpeResult { grid })
}

fn fit_cell(
    data: &Dataset,
    ladders: &PenaltyLadders,
    cfg_base: &SslConfig,
    opts: &EcmOptions,
    done: &[Vec<Option<DpeCell>>],
    s: usize,
    t: usize,
) -> Result<DpeCell> {
    let cfg = ladders.config_at(cfg_base, s, t);
    let mut neighbours = Vec::new();
    if s > 0 && t > 0 {
        neighbours.push((s - 1, t - 1));
    }
    if t > 0 {
        neighbours.push((s, t - 1));
    }
    if s > 0 {
        neighbours.push((s - 1, t));
    }
    let mut best: Option<(f64, usize, usize)> = None;
    for (row, col) in neighbours {
        let cell = done[row][col].as_ref().expect("neighbour fitted earlier");
        let value = log_posterior(&cell.fit.params, data, &cfg)?;
        if best.is_none_or(|(b, _, _)| value > b) {
            best = Some((value, row, col));
        }
    }
    let (warm_start, init) = match best {
        None => (
            WarmStart::Default,
            ChainGraphParams::default_init(data.p(), data.q()),
        ),
        Some((_, row, col)) => {
            let chosen = &done[row][col].as_ref().expect("neighbour fitted earlier").fit;
            let init = if chosen.guardrail_triggered {
                ChainGraphParams::default_init(data.p(), data.q())
            } else {
                chosen.params.clone()
            };
            (WarmStart::Neighbor { row, col }, init)
        }
    };
    let fit = ecm::ecm_fit(data, &cfg, &init, opts)?;
    Ok(DpeCell {
        lambda0: ladders.lambda0[s],
        xi0: ladders.xi0[t],
        warm_start,
        init,
        fit,
    })
}

#[derive(Debug, Clone)]
pub struct DcpeResult {
    /// One (Ψ, θ)-only fit per λ₀ rung, with Ω = I and η = ½.
    pub phase1: Vec<FitResult>,
    /// One (Ω, η)-only fit per ξ₀ rung at the last λ₀.
    pub phase2: Vec<FitResult>,
    /// Full fit at the last rung of both ladders.
    pub final_fit: FitResult,
}

/// Dynamic conditional posterior exploration.
pub fn dcpe(
    data: &Dataset,
    ladders: &PenaltyLadders,
    cfg_base: &SslConfig,
    opts: &EcmOptions,
) -> Result<DcpeResult> {
    ladders.validate()?;
    let phase_err = |phase: usize| move |e: Error| Error::Phase {
        phase,
        source: Box::new(e),
    };
    let (last_s, last_t) = (ladders.lambda0.len() - 1, ladders.xi0.len() - 1);
    let default = ChainGraphParams::default_init(data.p(), data.q());

    let mut phase1 = Vec::with_capacity(ladders.lambda0.len());
    let mut current = default.clone();
    for s in 0..=last_s {
        let cfg = ladders.config_at(cfg_base, s, 0);
        let fit = ecm::fit_psi_theta(data, &cfg, &current, opts).map_err(phase_err(1))?;
        current = if fit.guardrail_triggered {
            default.clone()
        } else {
            fit.params.clone()
        };
        phase1.push(fit);
    }

    let mut phase2 = Vec::with_capacity(ladders.xi0.len());
    for t in 0..=last_t {
        let cfg = ladders.config_at(cfg_base, last_s, t);
        let fit = ecm::fit_omega_eta(data, &cfg, &current, opts).map_err(phase_err(2))?;
        current = fit.params.clone();
        phase2.push(fit);
    }

    let cfg = ladders.config_at(cfg_base, last_s, last_t);
    let final_fit = ecm::ecm_fit(data, &cfg, &current, opts).map_err(phase_err(3))?;
    Ok(DcpeResult {
        phase1,
        phase2,
        final_fit,
    })
}
