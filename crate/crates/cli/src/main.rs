use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use fracbayes::divergence::{self, DensitySpec, DivergenceValue, Estimator, Measure};
use fracbayes::harness::{self, ExperimentConfig, RunConfig, SEED_ENV};
use fracbayes::identifiability::{self, DiscrepancyBuffer, GaussianLocation, TruthSpec};
use fracbayes::kernels::{self, StationaryKernel};

#[derive(Parser)]
#[command(name = "fracbayes", version, about = "Fractional-posterior model selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Output directory; single-table commands print to stdout without it.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// One divergence between two densities.
    Divergence {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fourier eigenvalues of a stationary kernel on [0,1].
    KernelSpectrum {
        #[arg(long, value_enum, default_value_t = KernelArg::Se)]
        family: KernelArg,
        #[arg(long, default_value_t = 2.0)]
        a: f64,
        #[arg(long, default_value_t = 1.5)]
        nu: f64,
        #[arg(long, default_value_t = 50)]
        m: usize,
    },
    /// Ball mass and local complexity over a radius grid.
    Complexity {
        #[arg(long)]
        config: PathBuf,
    },
    /// Identifiability gap per relevant covariate.
    Delta {
        #[arg(long)]
        config: PathBuf,
    },
    /// GP variable selection on one simulated dataset.
    GpvsRun {
        #[arg(long)]
        config: PathBuf,
    },
    /// Mixture density-regression variable selection on one simulated dataset.
    DrvsRun {
        #[arg(long)]
        config: PathBuf,
    },
    /// A full experiment grid.
    Experiment {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Se,
    Matern,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum EstimatorArg {
    Quadrature,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DivergenceConfig {
    p: DensitySpec,
    q: DensitySpec,
    measure: Measure,
    #[serde(default)]
    alpha: Option<f64>,
    #[serde(default)]
    estimator: Option<EstimatorArg>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ComplexityConfig {
    #[serde(default)]
    model: GaussianLocation,
    n: usize,
    eps: Vec<f64>,
    n_mc: usize,
    seed: u64,
    /// Also report the critical radius at this α.
    #[serde(default)]
    alpha: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DeltaConfig {
    truth: TruthSpec,
    #[serde(default = "default_trunc")]
    truncation: usize,
    #[serde(default = "default_mc")]
    n_outer: usize,
    #[serde(default = "default_mc")]
    n_inner: usize,
    seed: u64,
}

fn default_trunc() -> usize {
    32
}

fn default_mc() -> usize {
    400
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn seed_override(seed: u64) -> Result<u64> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v} is not an unsigned integer")),
        Err(_) => Ok(seed),
    }
}

/// Writes a table to `out/name` or stdout.
fn emit(out: Option<&Path>, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner()?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(name), bytes)?;
        }
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn f(v: f64) -> String {
    v.to_string()
}

fn divergence_cmd(cfg: DivergenceConfig, out: Option<&Path>) -> Result<bool> {
    let p = (&cfg.p).into();
    let q = (&cfg.q).into();
    let est = match cfg.estimator {
        None | Some(EstimatorArg::Quadrature) => Estimator::default(),
        Some(EstimatorArg::MonteCarlo { draws, seed }) => Estimator::MonteCarlo {
            draws,
            seed: seed_override(seed)?,
        },
    };
    let alpha = match (cfg.measure, cfg.alpha) {
        (Measure::Renyi | Measure::Affinity, None) => bail!("measure {} needs alpha", cfg.measure.name()),
        (_, a) => a.unwrap_or(0.5),
    };
    let v = divergence::compute(cfg.measure, &p, &q, alpha, &est)?;
    let value = match &v {
        DivergenceValue::Finite { value, .. } => f(*value),
        DivergenceValue::Infinite { .. } => "inf".into(),
    };
    emit(
        out,
        "divergence.csv",
        &["measure", "value", "se", "estimator"],
        &[vec![cfg.measure.name().into(), value, f(v.std_error()), v.estimator().to_string()]],
    )?;
    Ok(true)
}

fn spectrum_cmd(family: KernelArg, a: f64, nu: f64, m: usize, out: Option<&Path>) -> Result<bool> {
    let k = match family {
        KernelArg::Se => StationaryKernel::squared_exponential(a)?,
        KernelArg::Matern => StationaryKernel::matern(a, nu)?,
    };
    let sys = kernels::eigensystem(&k, m)?;
    let rows: Vec<Vec<String>> = (0..sys.len())
        .map(|i| {
            let eig = sys.eigenvalues()[i];
            let func = sys.function(i);
            let (cmp, ratio) = match kernels::asymptotic_eigenvalue(&k, func.frequency()) {
                Ok(c) => (f(c), f(eig / c)),
                Err(_) => (String::new(), String::new()),
            };
            vec![i.to_string(), f(eig), func.to_string(), cmp, ratio]
        })
        .collect();
    emit(
        out,
        "spectrum.csv",
        &["index", "eigenvalue", "eigenfunction", "asymptotic_comparator", "ratio"],
        &rows,
    )?;
    Ok(true)
}

fn complexity_cmd(cfg: ComplexityConfig, out: Option<&Path>) -> Result<bool> {
    let model = cfg.model;
    let n = cfg.n;
    let buf = DiscrepancyBuffer::new(
        |r| model.draw_discrepancy(n, r),
        model.noise_sd,
        n,
        cfg.n_mc,
        seed_override(cfg.seed)?,
    )?;
    let rows: Vec<Vec<String>> = cfg
        .eps
        .iter()
        .map(|&e| {
            let c = buf.estimate(e);
            vec![f(e), f(c.mass), f(c.mass_se), f(c.complexity), c.censored.to_string()]
        })
        .collect();
    emit(out, "complexity.csv", &["eps", "mass", "se", "complexity", "censored"], &rows)?;
    if let Some(alpha) = cfg.alpha {
        eprintln!("critical radius at alpha={alpha}: {}", buf.critical_radius(alpha, 1e-3)?);
    }
    Ok(true)
}

fn delta_cmd(cfg: DeltaConfig, out: Option<&Path>) -> Result<bool> {
    let basis = identifiability::delta_basis(&cfg.truth, cfg.truncation)?;
    let mc = identifiability::delta_mc(&cfg.truth, cfg.n_outer, cfg.n_inner, seed_override(cfg.seed)?)?;
    let mut rows: Vec<Vec<String>> = basis
        .per_coordinate
        .iter()
        .zip(&mc.per_coordinate)
        .map(|((j, b), (_, m, se))| vec![j.to_string(), f(*b), f(*m), f(*se), f(basis.tail)])
        .collect();
    rows.push(vec!["min".into(), f(basis.delta_sq), f(mc.delta_sq), f(mc.std_error), f(basis.tail)]);
    emit(
        out,
        "delta.csv",
        &["covariate", "basis_conditional_variance", "mc_conditional_variance", "mc_se", "parseval_tail"],
        &rows,
    )?;
    Ok(true)
}

fn run_config(path: &Path) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    cfg.apply_seed_override()?;
    Ok(cfg)
}

fn out_dir(out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("out"))
}

fn experiment_cmd(path: &Path, workers: usize, out: Option<&Path>) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_seed_override()?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let res = harness::run_experiment(&cfg, workers)?;
    harness::write_outputs(&res, &cfg, &dir)?;
    for e in &res.errors {
        eprintln!("cell n={} alpha={} replicate={} failed: {}", e.n, e.alpha, e.replicate, e.message);
    }
    eprintln!(
        "{} rows, {} failed cells, {:.1}s -> {}",
        res.rows.len(),
        res.errors.len(),
        res.wall_time_secs,
        dir.display()
    );
    Ok(res.ok())
}

fn run(cli: Cli) -> Result<bool> {
    let out = cli.out.as_deref();
    if !matches!(cli.command, Command::Experiment { .. }) {
        rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build_global().ok();
    }
    match cli.command {
        Command::Divergence { config } => divergence_cmd(read_json(&config)?, out),
        Command::KernelSpectrum { family, a, nu, m } => spectrum_cmd(family, a, nu, m, out),
        Command::Complexity { config } => complexity_cmd(read_json(&config)?, out),
        Command::Delta { config } => delta_cmd(read_json(&config)?, out),
        Command::GpvsRun { config } => {
            let run = harness::run_gpvs(&run_config(&config)?)?;
            harness::write_models(&run, &out_dir(out))?;
            Ok(true)
        }
        Command::DrvsRun { config } => {
            let (run, draws) = harness::run_drvs(&run_config(&config)?)?;
            let dir = out_dir(out);
            harness::write_models(&run, &dir)?;
            harness::write_mixture_draws(&draws, &dir)?;
            Ok(true)
        }
        Command::Experiment { config } => experiment_cmd(&config, cli.workers, out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
