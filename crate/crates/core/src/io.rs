//! File formats: matrix CSV, TOML run configuration, JSON run summaries and
//! benchmark results, the text report, and count preprocessing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::ecm::{self, EcmOptions, FitResult};
use crate::error::{Error, Result};
use crate::model::{ChainGraphParams, Dataset, SslConfig};
use crate::path::{self, default_ladders, PenaltyLadders, WarmStart};
use crate::sim::{
    BenchmarkConfig, BenchmarkResults, BenchmarkSummary, MetricSummary, ReplicateResult,
};

pub const RUN_SCHEMA: &str = "cgssl.run/1";
pub const BENCHMARK_SCHEMA: &str = "cgssl.benchmark/1";

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

/// A numeric matrix with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub values: DMatrix<f64>,
}

/// Reads a CSV whose first row holds column names and whose remaining rows
/// are numeric. Line numbers in errors count the header as row 1.
pub fn read_table_csv(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let columns: Vec<String> = reader
        .headers()
        .map_err(|e| format_err(path, e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if columns.is_empty() || columns.iter().all(String::is_empty) {
        return Err(format_err(path, "missing header row"));
    }
    let width = columns.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let line = record.position().map_or(rows + 2, |p| p.line() as usize);
        if record.len() != width {
            return Err(format_err(
                path,
                format!("row {line}: expected {width} fields, got {}", record.len()),
            ));
        }
        for (c, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| {
                format_err(path, format!("row {line}, column {}: '{cell}' is not a number", c + 1))
            })?;
            data.push(value);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(format_err(path, "no data rows"));
    }
    Ok(Table {
        columns,
        values: DMatrix::from_row_slice(rows, width, &data),
    })
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    Ok(read_table_csv(path)?.values)
}

/// Writes a header row and one line per matrix row, every value with 17
/// significant digits so that reading it back is exact.
pub fn write_matrix_csv(path: &Path, matrix: &DMatrix<f64>, columns: &[String]) -> Result<()> {
    if columns.len() != matrix.ncols() {
        return Err(Error::Dimension(format!(
            "{} column names for a matrix with {} columns",
            columns.len(),
            matrix.ncols()
        )));
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    writer.write_record(columns).map_err(csv_err)?;
    for i in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols()).map(|j| format!("{:.16e}", matrix[(i, j)])).collect();
        writer.write_record(&row).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

/// `prefix1, prefix2, …, prefixN`.
pub fn numbered_names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|i| format!("{prefix}{i}")).collect()
}

/// Writes index pairs as a two-column integer CSV.
pub fn write_support_csv(path: &Path, support: &[(usize, usize)], header: [&str; 2]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| format_err(path, e.to_string()))?;
    let csv_err = |e: csv::Error| format_err(path, e.to_string());
    writer.write_record(header).map_err(csv_err)?;
    for &(a, b) in support {
        writer.write_record([a.to_string(), b.to_string()]).map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

fn check_counts(counts: &DMatrix<f64>) -> Result<()> {
    if counts.nrows() == 0 || counts.ncols() == 0 {
        return Err(Error::InvalidArgument("count matrix is empty".into()));
    }
    for i in 0..counts.nrows() {
        let row = counts.row(i);
        if let Some(bad) = row.iter().find(|c| !(c.is_finite() && **c >= 0.0 && c.fract() == 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "sample {}: count {bad} is not a nonnegative integer",
                i + 1
            )));
        }
        if row.sum() <= 0.0 {
            return Err(Error::InvalidArgument(format!("sample {} has no counts", i + 1)));
        }
    }
    Ok(())
}

/// Genera whose relative abundance exceeds `min_rel_abundance` in more than
/// `min_samples` samples, in input order.
pub fn select_focal(counts: &DMatrix<f64>, min_rel_abundance: f64, min_samples: usize) -> Result<Vec<usize>> {
    check_counts(counts)?;
    let totals: Vec<f64> = counts.row_iter().map(|r| r.sum()).collect();
    Ok((0..counts.ncols())
        .filter(|&g| {
            let abundant = (0..counts.nrows())
                .filter(|&i| counts[(i, g)] / totals[i] > min_rel_abundance)
                .count();
            abundant > min_samples
        })
        .collect())
}

/// Log ratio of each focal genus's relative abundance to that of the pooled
/// non-focal genera. A zero focal count is replaced by 0.5.
pub fn logit_transform(counts: &DMatrix<f64>, focal: &[usize]) -> Result<DMatrix<f64>> {
    check_counts(counts)?;
    let g = counts.ncols();
    let mut is_focal = vec![false; g];
    for &f in focal {
        if f >= g {
            return Err(Error::InvalidArgument(format!("focal genus {f} out of range for {g} genera")));
        }
        if is_focal[f] {
            return Err(Error::InvalidArgument(format!("focal genus {f} listed twice")));
        }
        is_focal[f] = true;
    }
    if focal.is_empty() {
        return Err(Error::InvalidArgument("no focal genera selected".into()));
    }
    if focal.len() == g {
        return Err(Error::InvalidArgument("every genus is focal; the reference group is empty".into()));
    }
    let mut y = DMatrix::zeros(counts.nrows(), focal.len());
    for i in 0..counts.nrows() {
        let total = counts.row(i).sum();
        let reference: f64 = (0..g).filter(|&c| !is_focal[c]).map(|c| counts[(i, c)]).sum();
        if reference <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "sample {}: reference group has zero abundance",
                i + 1
            )));
        }
        for (col, &f) in focal.iter().enumerate() {
            let count = if counts[(i, f)] == 0.0 { 0.5 } else { counts[(i, f)] };
            y[(i, col)] = ((count / total) / (reference / total)).ln();
        }
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitMethod {
    #[default]
    Dpe,
    Dcpe,
    /// One ECM run at the last rung of both ladders from the default start.
    Single,
}

impl std::str::FromStr for FitMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dpe" => Ok(FitMethod::Dpe),
            "dcpe" => Ok(FitMethod::Dcpe),
            "single" => Ok(FitMethod::Single),
            _ => Err(Error::InvalidArgument(format!(
                "unknown method '{s}' (expected dpe, dcpe or single)"
            ))),
        }
    }
}

/// Settings for `fit`. Unset fields fall back to the dimension-dependent defaults.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub method: FitMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub xi_diag: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_eta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_eta: Option<f64>,
    pub ecm: EcmOptions,
}

/// A run configuration with every default filled in for given dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub method: FitMethod,
    pub ladders: PenaltyLadders,
    pub priors: SslConfig,
    pub ecm: EcmOptions,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| format_err(path, e.to_string()))
    }

    pub fn resolve(&self, n: usize, p: usize, q: usize) -> Result<ResolvedRun> {
        let defaults = default_ladders(n, p, q)?;
        let ladders = PenaltyLadders::new(
            self.lambda0.clone().unwrap_or(defaults.lambda0),
            self.xi0.clone().unwrap_or(defaults.xi0),
            self.lambda1.unwrap_or(defaults.lambda1),
            self.xi1.unwrap_or(defaults.xi1),
        )?;
        let mut priors = SslConfig::with_default_priors(
            ladders.lambda0[0],
            ladders.lambda1,
            ladders.xi0[0],
            ladders.xi1,
            p,
            q,
        );
        priors.xi_diag = self.xi_diag.unwrap_or(priors.xi_diag);
        priors.a_theta = self.a_theta.unwrap_or(priors.a_theta);
        priors.b_theta = self.b_theta.unwrap_or(priors.b_theta);
        priors.a_eta = self.a_eta.unwrap_or(priors.a_eta);
        priors.b_eta = self.b_eta.unwrap_or(priors.b_eta);
        priors.validate()?;
        self.ecm.validate()?;
        Ok(ResolvedRun {
            method: self.method,
            ladders,
            priors,
            ecm: self.ecm,
        })
    }
}

/// One exploration step, reduced to the numbers worth keeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub stage: String,
    pub lambda_index: usize,
    pub xi_index: usize,
    pub lambda0: f64,
    pub xi0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<WarmStart>,
    pub psi_nonzero: usize,
    pub omega_edges: usize,
    pub theta: f64,
    pub eta: f64,
    pub ecm_iterations: usize,
    pub converged: bool,
    pub guardrail_triggered: bool,
    pub log_posterior: f64,
}

impl PathStep {
    fn new(stage: &str, s: usize, t: usize, ladders: &PenaltyLadders, fit: &FitResult) -> Self {
        PathStep {
            stage: stage.to_string(),
            lambda_index: s,
            xi_index: t,
            lambda0: ladders.lambda0[s],
            xi0: ladders.xi0[t],
            warm_start: None,
            psi_nonzero: fit.support_psi.len(),
            omega_edges: fit.support_omega.len(),
            theta: fit.params.theta(),
            eta: fit.params.eta(),
            ecm_iterations: fit.ecm_iterations,
            converged: fit.converged,
            guardrail_triggered: fit.guardrail_triggered,
            log_posterior: fit.log_posterior_trace.last().copied().unwrap_or(f64::NAN),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitRun {
    pub resolved: ResolvedRun,
    pub path: Vec<PathStep>,
    pub final_fit: FitResult,
}

/// Runs the configured method on a dataset.
pub fn run_fit(data: &Dataset, config: &RunConfig) -> Result<FitRun> {
    let resolved = config.resolve(data.n(), data.p(), data.q())?;
    let ladders = &resolved.ladders;
    let (last_s, last_t) = (ladders.lambda0.len() - 1, ladders.xi0.len() - 1);
    let (path, final_fit) = match resolved.method {
        FitMethod::Dpe => {
            let res = path::dpe(data, ladders, &resolved.priors, &resolved.ecm)?;
            let mut steps = Vec::new();
            for (s, row) in res.grid.iter().enumerate() {
                for (t, cell) in row.iter().enumerate() {
                    let mut step = PathStep::new("dpe", s, t, ladders, &cell.fit);
                    step.warm_start = Some(cell.warm_start);
                    steps.push(step);
                }
            }
            (steps, res.final_fit().clone())
        }
        FitMethod::Dcpe => {
            let res = path::dcpe(data, ladders, &resolved.priors, &resolved.ecm)?;
            let mut steps: Vec<PathStep> = res
                .phase1
                .iter()
                .enumerate()
                .map(|(s, fit)| PathStep::new("psi", s, 0, ladders, fit))
                .collect();
            steps.extend(
                res.phase2
                    .iter()
                    .enumerate()
                    .map(|(t, fit)| PathStep::new("omega", last_s, t, ladders, fit)),
            );
            steps.push(PathStep::new("joint", last_s, last_t, ladders, &res.final_fit));
            (steps, res.final_fit)
        }
        FitMethod::Single => {
            let cfg = ladders.config_at(&resolved.priors, last_s, last_t);
            let init = ChainGraphParams::default_init(data.p(), data.q());
            let fit = ecm::ecm_fit(data, &cfg, &init, &resolved.ecm)?;
            (vec![PathStep::new("single", last_s, last_t, ladders, &fit)], fit)
        }
    };
    Ok(FitRun {
        resolved,
        path,
        final_fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalFitSummary {
    pub theta: f64,
    pub eta: f64,
    pub ecm_iterations: usize,
    pub converged: bool,
    pub guardrail_triggered: bool,
    pub log_posterior_trace: Vec<f64>,
    /// Zero-based (predictor, response) indices of nonzero Ψ entries.
    pub support_psi: Vec<(usize, usize)>,
    /// Zero-based (k, k') indices, k < k', of nonzero off-diagonal Ω entries.
    pub support_omega: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: String,
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub config: ResolvedRun,
    #[serde(rename = "final")]
    pub final_fit: FinalFitSummary,
    pub path: Vec<PathStep>,
}

impl RunSummary {
    pub fn new(data: &Dataset, run: &FitRun) -> Self {
        let fit = &run.final_fit;
        RunSummary {
            schema_version: RUN_SCHEMA.to_string(),
            n: data.n(),
            p: data.p(),
            q: data.q(),
            config: run.resolved.clone(),
            final_fit: FinalFitSummary {
                theta: fit.params.theta(),
                eta: fit.params.eta(),
                ecm_iterations: fit.ecm_iterations,
                converged: fit.converged,
                guardrail_triggered: fit.guardrail_triggered,
                log_posterior_trace: fit.log_posterior_trace.clone(),
                support_psi: fit.support_psi.clone(),
                support_omega: fit.support_omega.clone(),
            },
            path: run.path.clone(),
        }
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// On-disk form of [`BenchmarkResults`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkFile {
    pub schema_version: String,
    pub config: BenchmarkConfig,
    pub summary: BenchmarkSummary,
    pub replicates: Vec<ReplicateResult>,
}

impl From<BenchmarkResults> for BenchmarkFile {
    fn from(r: BenchmarkResults) -> Self {
        BenchmarkFile {
            schema_version: BENCHMARK_SCHEMA.to_string(),
            config: r.config,
            summary: r.summary,
            replicates: r.replicates,
        }
    }
}

pub fn write_benchmark(path: &Path, results: BenchmarkResults) -> Result<()> {
    write_json(path, &BenchmarkFile::from(results))
}

pub fn read_benchmark(path: &Path) -> Result<BenchmarkFile> {
    let text = fs::read_to_string(path)?;
    let file: BenchmarkFile = serde_json::from_str(&text).map_err(|e| format_err(path, e.to_string()))?;
    if file.schema_version != BENCHMARK_SCHEMA {
        return Err(format_err(
            path,
            format!("schema version '{}', expected '{BENCHMARK_SCHEMA}'", file.schema_version),
        ));
    }
    Ok(file)
}

fn mean_sd(m: &MetricSummary) -> String {
    match (m.mean, m.sd) {
        (Some(mean), Some(sd)) => format!("{mean:.2} ({sd:.2})"),
        (Some(mean), None) => format!("{mean:.2} (NA)"),
        _ => "NA".to_string(),
    }
}

/// Aggregate metrics as a plain aligned table.
pub fn render_report(file: &BenchmarkFile) -> String {
    let c = &file.config;
    let s = &file.summary;
    let guardrails = file.replicates.iter().filter(|r| r.guardrail_triggered).count();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "pattern {}  method {}  n {}  p {}  q {}",
        c.pattern,
        c.method,
        c.n,
        c.p,
        c.q
    );
    let _ = writeln!(
        out,
        "replicates {}  failed {}  guardrail {}  seed {}",
        c.replicates, s.failed, guardrails, c.seed
    );
    out.push('\n');

    let mut rows = vec![vec![
        "".to_string(),
        "SEN".to_string(),
        "PREC".to_string(),
        "FROB".to_string(),
    ]];
    for (name, m) in [("Psi", &s.psi), ("Omega", &s.omega)] {
        rows.push(vec![
            name.to_string(),
            mean_sd(&m.sensitivity),
            mean_sd(&m.precision),
            mean_sd(&m.frob),
        ]);
    }
    let widths: Vec<usize> = (0..4)
        .map(|j| rows.iter().map(|r| r[j].chars().count()).max().unwrap_or(0))
        .collect();
    for row in &rows {
        let mut line = String::new();
        for (j, cell) in row.iter().enumerate() {
            if j > 0 {
                line.push_str("  ");
            }
            let pad = widths[j] - cell.chars().count();
            line.push_str(cell);
            line.extend(std::iter::repeat_n(' ', pad));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
