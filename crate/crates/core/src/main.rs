use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use cgssl::ecm::EcmOptions;
use cgssl::io::{self, FitMethod, RunConfig, RunSummary};
use cgssl::sim::{self, BenchmarkConfig, Method, OmegaKind};
use cgssl::{Dataset, Error, Result};

#[derive(Parser, Debug)]
#[command(name = "cgssl", version, about = "Sparse Gaussian chain graphs with spike-and-slab LASSO priors")]
struct Cli {
    /// Worker threads (default: logical cores; CGSSL_THREADS caps it).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a chain graph to X/Y matrices.
    Fit(FitArgs),
    /// Generate Ψ₀, Ω₀, X and Y.
    Simulate(SimulateArgs),
    /// Run replicated simulations and score support recovery.
    Benchmark(BenchmarkArgs),
    /// Turn a count table into log-ratio responses.
    Preprocess(PreprocessArgs),
    /// Print a benchmark results file as a table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long, default_value = "X.csv")]
    x: PathBuf,
    #[arg(long, default_value = "Y.csv")]
    y: PathBuf,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// dpe, dcpe or single; overrides the config file.
    #[arg(long)]
    method: Option<FitMethod>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DimArgs {
    #[arg(long)]
    pattern: OmegaKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    p: usize,
    #[arg(long)]
    q: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of nonzero Ψ₀ entries.
    #[arg(long, default_value_t = 0.2)]
    density: f64,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    #[command(flatten)]
    dims: DimArgs,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long, default_value = "dpe")]
    method: Method,
    /// Results file (JSON).
    #[arg(long, default_value = "benchmark.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Count table: header of genus names, one row per sample.
    #[arg(long)]
    counts: PathBuf,
    #[arg(long, default_value_t = 0.005)]
    min_rel_abundance: f64,
    #[arg(long, default_value_t = 50)]
    min_samples: usize,
    #[arg(long, default_value = "Y.csv")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Benchmark results file.
    input: PathBuf,
    /// Write the table here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}

fn run(args: impl IntoIterator<Item = OsString>) -> u8 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    if let Err(message) = configure_threads(cli.threads) {
        eprintln!("error: {message}");
        return 1;
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

fn configure_threads(requested: Option<usize>) -> std::result::Result<(), String> {
    let mut threads = requested
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Some(cap) = std::env::var_os("CGSSL_THREADS") {
        let cap: usize = cap
            .to_str()
            .and_then(|s| s.trim().parse().ok())
            .filter(|&c| c > 0)
            .ok_or_else(|| format!("CGSSL_THREADS must be a positive integer, got {cap:?}"))?;
        threads = threads.min(cap);
    }
    if threads == 0 {
        return Err("--threads must be positive".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| e.to_string())
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Fit(args) => fit(args),
        Command::Simulate(args) => simulate(args),
        Command::Benchmark(args) => benchmark(args),
        Command::Preprocess(args) => preprocess(args),
        Command::Report(args) => report(args),
    }
}

fn fit(args: FitArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::read(path)?,
        None => RunConfig::default(),
    };
    if let Some(method) = args.method {
        config.method = method;
    }
    let x = io::read_table_csv(&args.x)?;
    let y = io::read_table_csv(&args.y)?;
    if x.values.nrows() != y.values.nrows() {
        return Err(Error::Dimension(format!(
            "X has {} rows but Y has {} rows",
            x.values.nrows(),
            y.values.nrows()
        )));
    }
    let data = Dataset::from_raw(&x.values, y.values)?;
    let run = io::run_fit(&data, &config)?;

    fs::create_dir_all(&args.out)?;
    let out = |name: &str| args.out.join(name);
    let psi = data.psi_to_raw_scale(run.final_fit.params.psi());
    io::write_matrix_csv(&out("Psi.csv"), &psi, &y.columns)?;
    io::write_matrix_csv(&out("Omega.csv"), run.final_fit.params.omega(), &y.columns)?;
    io::write_support_csv(&out("support_psi.csv"), &run.final_fit.support_psi, ["predictor", "response"])?;
    io::write_support_csv(&out("support_omega.csv"), &run.final_fit.support_omega, ["response", "response2"])?;
    io::write_json(&out("summary.json"), &RunSummary::new(&data, &run))?;
    Ok(())
}

fn benchmark_config(dims: &DimArgs, replicates: usize, method: Method) -> BenchmarkConfig {
    BenchmarkConfig {
        n: dims.n,
        p: dims.p,
        q: dims.q,
        pattern: dims.pattern,
        replicates,
        method,
        seed: dims.seed,
        density: dims.density,
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = benchmark_config(&args.dims, 1, Method::Dpe);
    config.validate()?;
    let rep = sim::gen_replicate(&config, 0)?;
    let (p, q) = (config.p, config.q);
    let responses = io::numbered_names("Y", q);
    fs::create_dir_all(&args.out)?;
    let out = |name: &str| args.out.join(name);
    io::write_matrix_csv(&out("X.csv"), &rep.sim.raw_x, &io::numbered_names("X", p))?;
    io::write_matrix_csv(&out("Y.csv"), rep.sim.data.y(), &responses)?;
    io::write_matrix_csv(&out("Psi0.csv"), &rep.psi0, &responses)?;
    io::write_matrix_csv(&out("Omega0.csv"), &rep.omega0, &responses)?;
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let config = benchmark_config(&args.dims, args.replicates, args.method);
    let results = sim::run_benchmark(&config, &EcmOptions::default())?;
    create_parent(&args.out)?;
    io::write_benchmark(&args.out, results)
}

fn preprocess(args: PreprocessArgs) -> Result<()> {
    let counts = io::read_table_csv(&args.counts)?;
    let focal = io::select_focal(&counts.values, args.min_rel_abundance, args.min_samples)?;
    let y = io::logit_transform(&counts.values, &focal)?;
    let names: Vec<String> = focal.iter().map(|&g| counts.columns[g].clone()).collect();
    create_parent(&args.out)?;
    io::write_matrix_csv(&args.out, &y, &names)
}

fn report(args: ReportArgs) -> Result<()> {
    let file = io::read_benchmark(&args.input)?;
    let text = io::render_report(&file);
    match args.out {
        Some(path) => {
            create_parent(&path)?;
            fs::write(path, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => Ok(fs::create_dir_all(dir)?),
        _ => Ok(()),
    }
}
