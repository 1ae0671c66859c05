//! `invlab` — command-line driver for the invariance-rate laboratory.
//!
//! Every subcommand reads one JSON config (see README), writes its
//! artifacts into the output directory, and embeds the resolved config
//! and seed in every file. Files are written atomically (temp + rename)
//! and carry a completeness marker: `"complete": true` in JSON, a final
//! `# complete` line in CSV.
//!
//! Exit codes: 0 success, 1 assertion/property failure, 2 usage/config
//! error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use invariance_lab::chains::ChainModel;
use invariance_lab::config::ExperimentConfig;
use invariance_lab::coupling::{self, SmoothingSampler};
use invariance_lab::mixing::{self, IntervalPattern};
use invariance_lab::moments;
use invariance_lab::operator;
use invariance_lab::partition;
use invariance_lab::rates;

#[derive(Parser)]
#[command(name = "invlab", version, about = "Markov-walk invariance-rate laboratory")]
struct Cli {
    /// Path to the experiment config JSON.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the worker-thread count (0 = automatic).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spectral decomposition and mixing constants of a finite chain.
    Spectral,
    /// Exact/closed-form mean and variance plus the homogeneity profile.
    Variance,
    /// Island/gap segment table of the dyadic partition.
    Partition,
    /// Characteristic-function factorization defects and the decay fit.
    Mixing,
    /// One realized path coupling with per-island records.
    Couple,
    /// Median coupling-error curve over N with the log-log rate fit.
    Rates,
}

#[derive(Debug)]
enum RunError {
    Usage(String),
    Property(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Usage(m) | RunError::Property(m) => write!(f, "{m}"),
        }
    }
}

fn usage<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Usage(e.to_string())
}

fn property<E: std::fmt::Display>(e: E) -> RunError {
    RunError::Property(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Property(msg)) => {
            eprintln!("property failure: {msg}");
            ExitCode::from(1)
        }
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| RunError::Usage("--config PATH is required".into()))?;
    let mut cfg = ExperimentConfig::load(&config_path).map_err(usage)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    cfg.validate().map_err(usage)?;

    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(usage)?;
    }
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", cfg.out_dir.display())))?;

    match cli.command {
        Command::Spectral => cmd_spectral(&cfg),
        Command::Variance => cmd_variance(&cfg),
        Command::Partition => cmd_partition(&cfg),
        Command::Mixing => cmd_mixing(&cfg),
        Command::Couple => cmd_couple(&cfg),
        Command::Rates => cmd_rates(&cfg),
    }
}

// ---------------------------------------------------------------------------
// output helpers
// ---------------------------------------------------------------------------

fn atomic_write(path: &Path, contents: &str) -> Result<(), RunError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, contents)
        .and_then(|()| std::fs::rename(&tmp, path))
        .map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(cfg: &ExperimentConfig, path: &Path, result: &T) -> Result<(), RunError> {
    #[derive(Serialize)]
    struct Envelope<'a, T> {
        config: &'a ExperimentConfig,
        seed: u64,
        result: &'a T,
        complete: bool,
    }
    let doc = Envelope {
        config: cfg,
        seed: cfg.seed,
        result,
        complete: true,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(usage)?;
    atomic_write(path, &text)
}

fn csv_header(cfg: &ExperimentConfig, columns: &str) -> String {
    let cfg_line = serde_json::to_string(cfg).unwrap_or_default();
    format!("# config: {cfg_line}\n# seed: {}\n{columns}\n", cfg.seed)
}

fn finite_chain_of(model: &ChainModel) -> Result<invariance_lab::chains::FiniteChain, RunError> {
    match model {
        ChainModel::Finite(chain) => Ok(chain.clone()),
        _ => Err(RunError::Usage(
            "this subcommand needs a finite chain model".into(),
        )),
    }
}

fn mean_sigma(model: &ChainModel) -> Result<(f64, f64), RunError> {
    let (mu, sigma2) = match model {
        ChainModel::Finite(chain) => moments::exact_mean_variance(chain).map_err(usage)?,
        _ => moments::closed_form_variance(model).map_err(usage)?,
    };
    if sigma2 <= 0.0 {
        return Err(RunError::Usage(format!(
            "model has zero asymptotic variance (sigma2 = {sigma2}); nothing to couple"
        )));
    }
    Ok((mu, sigma2.sqrt()))
}

fn smoothing_of(cfg: &ExperimentConfig) -> Result<Option<SmoothingSampler>, RunError> {
    if cfg.smoothing {
        Ok(Some(
            SmoothingSampler::build(1.0, 1 << 14).map_err(property)?,
        ))
    } else {
        Ok(None)
    }
}

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

fn cmd_spectral(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let model = cfg.resolve_model().map_err(usage)?;
    let chain = finite_chain_of(&model)?;
    let grid = operator::symmetric_grid(1.0, 9);
    let spec = operator::spectral_decompose(&chain, 40, &grid).map_err(usage)?;
    let consts = operator::mixing_constants(&spec, 1.0);

    #[derive(Serialize)]
    struct SpectralOut {
        spectral: operator::SpectralData,
        mixing_constants: operator::MixingConstants,
    }
    write_json(
        cfg,
        &cfg.out_dir.join("spectral.json"),
        &SpectralOut {
            spectral: spec,
            mixing_constants: consts,
        },
    )
}

fn cmd_variance(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let model = cfg.resolve_model().map_err(usage)?;
    let n_windows: Vec<usize> = vec![64, 256, 1024];
    let k_offsets: Vec<usize> = vec![0, 32, 128];
    let report = moments::variance_report(
        &model,
        cfg.delta,
        &n_windows,
        &k_offsets,
        cfg.reps,
        cfg.seed,
    )
    .map_err(usage)?;

    let mut csv = csv_header(cfg, "n,deviation,stderr");
    for p in &report.c3_profile {
        let _ = writeln!(csv, "{},{},{}", p.n, p.deviation, p.stderr);
    }
    csv.push_str("# complete\n");
    atomic_write(&cfg.out_dir.join("c3_profile.csv"), &csv)?;
    write_json(cfg, &cfg.out_dir.join("variance.json"), &report)
}

fn cmd_partition(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let beta = cfg.beta_effective();
    let n_max = cfg.n_list.iter().copied().max().unwrap();
    let part = partition::build(n_max, cfg.epsilon, beta, cfg.k0).map_err(usage)?;

    let mut csv = csv_header(cfg, "k,j,kind,start,end,length");
    for seg in part.all_segments() {
        let kind = match seg.kind {
            partition::SegmentKind::Gap => "gap",
            partition::SegmentKind::Island => "island",
        };
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{}",
            seg.k,
            seg.j,
            kind,
            seg.start,
            seg.end,
            seg.len()
        );
    }
    csv.push_str("# complete\n");
    atomic_write(&cfg.out_dir.join("partition.csv"), &csv)?;

    #[derive(Serialize)]
    struct PartitionOut {
        n: u32,
        locator: (u32, u32),
        beta: f64,
        beta_optimal: f64,
        theoretical_rate: f64,
    }
    write_json(
        cfg,
        &cfg.out_dir.join("partition.json"),
        &PartitionOut {
            n: part.n,
            locator: part.locator,
            beta,
            beta_optimal: partition::optimal_beta(cfg.alpha),
            theoretical_rate: partition::theoretical_rate(cfg.alpha),
        },
    )
}

fn cmd_mixing(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let model = cfg.resolve_model().map_err(usage)?;
    let chain = finite_chain_of(&model)?;
    let grid = operator::symmetric_grid(1.0, 9);
    let spec = operator::spectral_decompose(&chain, 40, &grid).map_err(usage)?;
    let consts = operator::mixing_constants(&spec, 1.0);

    let base = IntervalPattern::new(vec![0, 1, 2], 1, 1, 1).map_err(usage)?;
    let gaps: Vec<u64> = (1..=20).collect();
    let fit =
        mixing::decay_fit(&chain, chain.x0, &base, &gaps, &consts, &grid).map_err(property)?;

    let mut csv = csv_header(cfg, "k_gap,defect,bound");
    for p in &fit.points {
        let _ = writeln!(csv, "{},{},{}", p.k_gap, p.defect, p.bound);
    }
    csv.push_str("# complete\n");
    atomic_write(&cfg.out_dir.join("mixing.csv"), &csv)?;
    write_json(cfg, &cfg.out_dir.join("mixing.json"), &fit)
}

fn cmd_couple(cfg: &ExperimentConfig) -> Result<(), RunError> {
    let model = cfg.resolve_model().map_err(usage)?;
    let (mu, sigma) = mean_sigma(&model)?;
    let n = *cfg.n_list.iter().max().unwrap();
    let part = partition::build(n, cfg.epsilon, cfg.beta_effective(), cfg.k0).map_err(usage)?;
    let trace = coupling::build_path_coupling(
        &model,
        mu,
        sigma,
        &part,
        n,
        cfg.reps_for_cdf,
        cfg.seed,
        smoothing_of(cfg)?,
    )
    .map_err(usage)?;

    let mut csv = csv_header(cfg, "k,j,len,sum,u,w_pp,i_star,residual");
    for rec in &trace.islands {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            rec.k, rec.j, rec.len, rec.sum, rec.u, rec.w_pp, rec.i_star, rec.residual
        );
    }
    csv.push_str("# complete\n");
    atomic_write(&cfg.out_dir.join("couple_islands.csv"), &csv)?;

    let worst_residual = trace
        .islands
        .iter()
        .map(|r| r.residual)
        .fold(0.0, f64::max);
    if worst_residual > 1e-10 {
        return Err(RunError::Property(format!(
            "island constraint residual {worst_residual} exceeds 1e-10"
        )));
    }

    #[derive(Serialize)]
    struct CoupleOut {
        n: u64,
        mu: f64,
        sigma: f64,
        islands: usize,
        coupling_error: f64,
        worst_residual: f64,
    }
    write_json(
        cfg,
        &cfg.out_dir.join("couple.json"),
        &CoupleOut {
            n,
            mu,
            sigma,
            islands: trace.islands.len(),
            coupling_error: coupling::coupling_error(&trace),
            worst_residual,
        },
    )
}

fn cmd_rates(cfg: &ExperimentConfig) -> Result<(), RunError> {
    cfg.validate_for_rates().map_err(usage)?;
    let model = cfg.resolve_model().map_err(usage)?;
    let (mu, sigma) = mean_sigma(&model)?;
    let fit = rates::error_curve(
        &model,
        mu,
        sigma,
        cfg.alpha,
        cfg.epsilon,
        cfg.k0,
        &cfg.n_list,
        cfg.reps,
        cfg.reps_for_cdf,
        cfg.seed,
        smoothing_of(cfg)?,
    )
    .map_err(usage)?;

    let mut csv = csv_header(cfg, "n,median_error,stderr");
    for p in &fit.points {
        let _ = writeln!(csv, "{},{},{}", p.n, p.median, p.stderr);
    }
    csv.push_str("# complete\n");
    atomic_write(&cfg.out_dir.join("rates.csv"), &csv)?;

    let report = rates::report(cfg.alpha, vec![fit]);
    write_json(cfg, &cfg.out_dir.join("rates.json"), &report)
}
