//! `lqmm` command-line program: `fit`, `bench` and `simulate`.

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lqmm::bench::{run_benchmark, BenchConfig};
use lqmm::error::{Error, Result};
use lqmm::fit::{run_fit, Algorithm, FitRequest};
use lqmm::input::{parse_taus, read_dataset_file, write_dataset, DesignSpec};
use lqmm::report::{emit_report, EmitOptions};
use lqmm_core::estimation::BootstrapOptions;
use lqmm_core::{generate_dataset, CovarianceKind, FitControl, QuantileLevel, SaemControl};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "lqmm", version, about = "Linear quantile mixed models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model to a CSV file.
    Fit(FitArgs),
    /// Run the simulation benchmark and write report tables.
    Bench(BenchArgs),
    /// Write one simulated dataset as CSV.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AlgorithmArg {
    Quadrature,
    Saem,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Quadrature => Algorithm::Quadrature,
            AlgorithmArg::Saem => Algorithm::Saem,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioSet {
    /// Every M × τ combination of the design.
    Full,
    /// M ∈ {50, 300} and τ ∈ {0.05, 0.5, 0.95}.
    Selected,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV file with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Response column.
    #[arg(long)]
    response: String,
    /// Comma-separated fixed-effects columns (an intercept is added unless --no-intercept).
    #[arg(long, default_value = "")]
    fixed: String,
    /// Comma-separated random-effects columns; `1` denotes a random intercept.
    #[arg(long, default_value = "1")]
    random: String,
    /// Cluster identifier column.
    #[arg(long)]
    group: String,
    /// Quantile levels, e.g. `0.1,0.5,0.9` or `1:19/20`.
    #[arg(long, default_value = "0.5")]
    tau: String,
    /// Random-effects covariance: pdsymm, pddiag, pdident or pdcompsymm.
    #[arg(long, default_value = "pddiag")]
    covariance: CovarianceKind,
    /// Gauss–Hermite knots per random effect.
    #[arg(long, default_value_t = 7)]
    knots: usize,
    /// Bootstrap replicates for standard errors (0 = none).
    #[arg(long, default_value_t = 0)]
    boot: usize,
    /// Bootstrap seed; replicate r uses seed + r.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Start bootstrap replicates from fresh start values instead of the full-data fit.
    #[arg(long)]
    boot_cold_start: bool,
    /// Optimizer iteration limit.
    #[arg(long, default_value_t = 2000)]
    max_iter: usize,
    /// Log-likelihood convergence tolerance.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    /// Start from least squares rather than a fixed-effects quantile regression.
    #[arg(long)]
    ols_start: bool,
    /// Do not add a fixed intercept.
    #[arg(long)]
    no_intercept: bool,
    #[arg(long, value_enum, default_value = "quadrature")]
    algorithm: AlgorithmArg,
    /// SAEM Monte Carlo draws per cluster and iteration.
    #[arg(long, default_value_t = 20)]
    mc_samples: usize,
    /// SAEM iteration limit.
    #[arg(long, default_value_t = 500)]
    saem_max_iter: usize,
    /// SAEM fraction of initial iterations without memory.
    #[arg(long, default_value_t = 0.2)]
    cutpoint: f64,
    /// Worker threads for the bootstrap (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Write the JSON report here (`-` for standard output).
    #[arg(long, default_value = "fit_report.json")]
    json: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// JSON design file; its fields mirror the scenario configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    scenarios: Option<ScenarioSet>,
    /// Comma-separated algorithms: quadrature, saem.
    #[arg(long)]
    algorithms: Option<String>,
    #[arg(long)]
    replications: Option<usize>,
    /// Run SAEM only on the first N replications of each scenario.
    #[arg(long)]
    saem_replications: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "bench_out")]
    out: PathBuf,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Omit wall times and the worker count so reruns are byte-identical.
    #[arg(long)]
    redact_runtime: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON design file (only the scenario fields are used).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of clusters.
    #[arg(long, default_value_t = 50)]
    clusters: usize,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output CSV (`-` or omitted for standard output).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&PathBuf>) -> Result<BenchConfig> {
    match path {
        None => Ok(BenchConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn fit(args: FitArgs) -> Result<()> {
    let spec = DesignSpec {
        response: args.response,
        fixed: split_list(&args.fixed),
        random: split_list(&args.random),
        group: args.group,
        intercept: !args.no_intercept,
    };
    let loaded = read_dataset_file(&args.data, &spec)?;
    let request = FitRequest {
        taus: parse_taus(&args.tau)?,
        algorithm: args.algorithm.into(),
        covariance: args.covariance,
        control: FitControl {
            max_iter: args.max_iter,
            loglik_tol: args.tol,
            start_from_quantreg: !args.ols_start,
            knots: args.knots,
            ..FitControl::default()
        },
        saem: SaemControl {
            mc_samples: args.mc_samples,
            max_iter: args.saem_max_iter,
            memory_cutpoint: args.cutpoint,
            seed: args.seed,
            ..SaemControl::default()
        },
        bootstrap: (args.boot > 0).then_some(BootstrapOptions {
            replicates: args.boot,
            seed: args.seed,
            warm_start: !args.boot_cold_start,
        }),
        workers: args.workers,
    };
    let report = run_fit(&loaded.dataset, &loaded.names, loaded.dropped_rows, &request)?;
    let json = report.to_json()?;
    let mut out = io::stdout().lock();
    let stdout_err = |e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    };
    out.write_all(report.to_text().as_bytes()).map_err(stdout_err)?;
    if args.json.as_os_str() == "-" {
        writeln!(out, "{json}").map_err(stdout_err)?;
    } else {
        fs::write(&args.json, json + "\n").map_err(|e| Error::Io {
            path: args.json.clone(),
            source: e,
        })?;
        writeln!(out, "\nJSON report written to {}", args.json.display()).map_err(stdout_err)?;
    }
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    let mut config = load_config(args.config.as_ref())?;
    if let Some(s) = args.scenarios {
        config.scenario.selected_only = matches!(s, ScenarioSet::Selected);
    }
    if let Some(list) = &args.algorithms {
        config.algorithms = split_list(list)
            .iter()
            .map(|a| a.parse())
            .collect::<Result<Vec<Algorithm>>>()?;
        config.algorithms.dedup();
    }
    if let Some(r) = args.replications {
        config.scenario.replications = r;
    }
    if args.saem_replications.is_some() {
        config.saem_replications = args.saem_replications;
    }
    if let Some(s) = args.seed {
        config.scenario.seed = s;
    }
    let report = run_benchmark(&config, args.workers)?;
    let opts = EmitOptions {
        include_runtime: !args.redact_runtime,
    };
    emit_report(&report, &args.out, opts)?;
    let table = fs::read_to_string(args.out.join("table1.md")).map_err(|e| Error::Io {
        path: args.out.join("table1.md"),
        source: e,
    })?;
    println!("{table}");
    println!("Report written to {}", args.out.display());
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let config = load_config(args.config.as_ref())?.scenario;
    let tau = QuantileLevel::new(args.tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (data, _) = generate_dataset(&config, args.clusters, tau, &mut rng)?;
    match args.out {
        Some(p) if p.as_os_str() != "-" => {
            let file = fs::File::create(&p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            write_dataset(io::BufWriter::new(file), &data, &[0])
        }
        _ => write_dataset(io::stdout().lock(), &data, &[0]),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => fit(a),
        Command::Bench(a) => bench(a),
        Command::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
