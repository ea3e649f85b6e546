//! Batch experiments: synthetic data, experiment recipes over an
//! `(n, α, replicate)` grid, and CSV / plot-series output.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::drvs::{self, DrvsHyper};
use crate::gp::{self, GpConfig, RegressionData};
use crate::identifiability::{DiscrepancyBuffer, GaussianLocation, TruthSpec};
use crate::kernels::{self, StationaryKernel};
use crate::model_space::{self, ModelIndex, ModelPosterior};
use crate::numerics::special;
use crate::numerics::{derive_seed, rng_from_seed};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "FRACBAYES_SEED";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Cell(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Consistency,
    Rate,
    Occam,
    Complexity,
    Spectra,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Consistency => "consistency",
            ExperimentKind::Rate => "rate",
            ExperimentKind::Occam => "occam",
            ExperimentKind::Complexity => "complexity",
            ExperimentKind::Spectra => "spectra",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    #[default]
    Gpvs,
    Drvs,
}

/// How the model posterior is computed for GPVS cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum PosteriorMethod {
    #[default]
    Enumerate,
    Mcmc { iters: usize },
}

/// `log BF_α(model; reference)` reported per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BayesFactorPair {
    pub model: ModelIndex,
    pub reference: ModelIndex,
}

impl BayesFactorPair {
    pub fn statistic(&self) -> String {
        let join = |m: &ModelIndex| m.indices().iter().map(|i| i.to_string()).collect::<Vec<_>>().join("-");
        format!("log_bf_{}_vs_{}", join(&self.model), join(&self.reference))
    }
}

/// Gaussian location model settings for complexity experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComplexitySettings {
    #[serde(default)]
    pub model: GaussianLocation,
    pub n_mc: usize,
    /// Radius used for the `n·complexity` statistic; `None` means `√(log n / n)`.
    #[serde(default)]
    pub eps: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    SquaredExponential { a: f64 },
    Matern { a: f64, nu: f64 },
}

impl KernelSpec {
    pub fn build(&self) -> Result<StationaryKernel, kernels::KernelError> {
        match *self {
            KernelSpec::SquaredExponential { a } => StationaryKernel::squared_exponential(a),
            KernelSpec::Matern { a, nu } => StationaryKernel::matern(a, nu),
        }
    }

    pub fn label(&self) -> String {
        match self {
            KernelSpec::SquaredExponential { a } => format!("se_a{a}"),
            KernelSpec::Matern { a, nu } => format!("matern_a{a}_nu{nu}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraSettings {
    pub kernels: Vec<KernelSpec>,
    #[serde(default = "default_truncation")]
    pub truncation: usize,
    #[serde(default = "default_top")]
    pub top: usize,
}

fn default_truncation() -> usize {
    kernels::DEFAULT_TRUNCATION
}

fn default_top() -> usize {
    9
}

fn default_alpha_grid() -> Vec<f64> {
    vec![1.0]
}

fn default_noise() -> f64 {
    0.5
}

fn default_test_points() -> usize {
    1000
}

fn default_chain() -> ChainSettings {
    ChainSettings { iters: 2000, thin: 10 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSettings {
    pub iters: usize,
    pub thin: usize,
}

/// Declarative description of one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: Option<String>,
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub truth: Option<TruthSpec>,
    #[serde(default)]
    pub p: usize,
    #[serde(default)]
    pub d0: usize,
    pub n_grid: Vec<usize>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub family: ModelFamily,
    /// Noise sd of the generated data.
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub drvs: DrvsHyper,
    #[serde(default)]
    pub posterior: PosteriorMethod,
    #[serde(default)]
    pub bayes_factors: Vec<BayesFactorPair>,
    #[serde(default = "default_test_points")]
    pub test_points: usize,
    #[serde(default)]
    pub complexity: Option<ComplexitySettings>,
    #[serde(default)]
    pub spectra: Option<SpectraSettings>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    /// Applies `FRACBAYES_SEED` if set.
    pub fn apply_seed_override(&mut self) -> Result<(), HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.n_grid.is_empty() {
            return bad("n_grid is empty".into());
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("n_grid must be strictly increasing".into());
        }
        if self.n_grid[0] == 0 {
            return bad("n_grid entries must be at least 1".into());
        }
        if self.alpha_grid.is_empty() {
            return bad("alpha_grid is empty".into());
        }
        if let Some(a) = self.alpha_grid.iter().find(|a| !(**a > 0.0 && **a <= 1.0)) {
            return bad(format!("alpha {a} outside (0, 1]"));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be nonnegative".into());
        }
        match self.experiment {
            ExperimentKind::Consistency | ExperimentKind::Rate | ExperimentKind::Occam => {
                let truth = self.truth.as_ref().ok_or_else(|| HarnessError::Config("truth is required".into()))?;
                if self.p == 0 {
                    return bad("p must be at least 1".into());
                }
                if truth.support.max_index() > self.p {
                    return bad(format!("truth support {} exceeds p = {}", truth.support, self.p));
                }
                if truth.support.len() > self.d0 {
                    return bad(format!("truth support {} is larger than d0 = {}", truth.support, self.d0));
                }
                for pair in &self.bayes_factors {
                    if pair.model.max_index() > self.p || pair.reference.max_index() > self.p {
                        return bad(format!("Bayes factor pair {} / {} exceeds p", pair.model, pair.reference));
                    }
                }
                if self.experiment == ExperimentKind::Occam && self.bayes_factors.is_empty() {
                    return bad("occam experiments need at least one bayes_factors pair".into());
                }
                self.gp.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                if self.family == ModelFamily::Drvs {
                    self.drvs.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
                    if self.experiment == ExperimentKind::Rate {
                        return bad("rate experiments support the gpvs family only".into());
                    }
                }
            }
            ExperimentKind::Complexity => {
                let c = self
                    .complexity
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("complexity settings are required".into()))?;
                if c.n_mc < 1000 {
                    return bad("complexity.n_mc must be at least 1000".into());
                }
                if self.alpha_grid.iter().any(|a| *a >= 1.0) {
                    return bad("critical radii need alpha < 1".into());
                }
            }
            ExperimentKind::Spectra => {
                let s = self
                    .spectra
                    .as_ref()
                    .ok_or_else(|| HarnessError::Config("spectra settings are required".into()))?;
                if s.kernels.is_empty() {
                    return bad("spectra.kernels is empty".into());
                }
            }
        }
        Ok(())
    }

    /// Statistic names emitted for every cell, in row order.
    pub fn statistics(&self) -> Vec<String> {
        let bfs = self.bayes_factors.iter().map(BayesFactorPair::statistic);
        match self.experiment {
            ExperimentKind::Consistency => {
                let mut s: Vec<String> = ["selection_probability", "mode_correct", "mode_size"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect();
                if self.family == ModelFamily::Drvs {
                    s.push("ess_flagged".into());
                }
                s.extend(bfs);
                s
            }
            ExperimentKind::Occam => bfs.collect(),
            ExperimentKind::Rate => vec!["l2_error".into(), "mode_correct".into()],
            ExperimentKind::Complexity => vec!["n_complexity".into(), "critical_radius".into(), "censored".into()],
            ExperimentKind::Spectra => {
                let s = self.spectra.as_ref().expect("validated");
                let mut out = vec![];
                for k in &s.kernels {
                    let l = k.label();
                    out.push(format!("{l}_trace"));
                    for j in 1..=s.top {
                        out.push(format!("{l}_analytic_{j}"));
                        out.push(format!("{l}_gram_{j}"));
                    }
                }
                out
            }
        }
    }
}

/// One long-format output row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub experiment: String,
    pub n: usize,
    pub alpha: f64,
    pub replicate: usize,
    pub seed: u64,
    pub statistic: String,
    pub value: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub n: usize,
    pub alpha: f64,
    pub statistic: String,
    pub mean: f64,
    /// NaN with a single replicate.
    pub se: f64,
    pub ok: usize,
    pub errors: usize,
}

/// Log-log or semi-log trend of a statistic against `log n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitRow {
    pub experiment: String,
    pub alpha: f64,
    pub statistic: String,
    pub response: String,
    pub slope: f64,
    pub se: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellError {
    pub n: usize,
    pub alpha: f64,
    pub replicate: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Fingerprint {
    pub version: String,
    pub seed: u64,
    pub schema_version: u32,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentKind,
    pub rows: Vec<Row>,
    pub summary: Vec<SummaryRow>,
    pub fits: Vec<FitRow>,
    pub errors: Vec<CellError>,
    pub fingerprint: Fingerprint,
    pub wall_time_secs: f64,
}

impl ExperimentResult {
    pub fn ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn summary_for(&self, statistic: &str, alpha: f64) -> Vec<&SummaryRow> {
        self.summary
            .iter()
            .filter(|s| s.statistic == statistic && s.alpha == alpha)
            .collect()
    }

    pub fn fit_for(&self, statistic: &str, alpha: f64) -> Option<&FitRow> {
        self.fits.iter().find(|f| f.statistic == statistic && f.alpha == alpha)
    }
}

/// `X ~ Uniform[0,1]^p` rows, `y = f*(x) + N(0, σ²)`.
pub fn generate_regression_data(
    truth: &TruthSpec,
    p: usize,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<RegressionData, HarnessError> {
    if n == 0 {
        return Err(HarnessError::Config("n must be at least 1".into()));
    }
    if truth.support.max_index() > p {
        return Err(HarnessError::Config(format!("truth support {} exceeds p = {p}", truth.support)));
    }
    let noise = Normal::new(0.0, sigma).map_err(|e| HarnessError::Config(format!("noise sd {sigma}: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let x: Vec<f64> = (0..n * p).map(|_| rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| truth.eval(&x[i * p..(i + 1) * p]) + noise.sample(&mut rng))
        .collect();
    RegressionData::new(x, y, p).map_err(|e| HarnessError::Cell(e.to_string()))
}

struct Cell {
    r: usize,
    n: usize,
    alpha: f64,
    seed: u64,
}

fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = vec![];
    for (i, &n) in cfg.n_grid.iter().enumerate() {
        for (j, &alpha) in cfg.alpha_grid.iter().enumerate() {
            for r in 0..cfg.replicates {
                out.push(Cell {
                    r,
                    n,
                    alpha,
                    seed: derive_seed(cfg.seed, &[i as u64, j as u64, r as u64]),
                });
            }
        }
    }
    out
}

fn model_posterior(
    cfg: &ExperimentConfig,
    data: &RegressionData,
    alpha: f64,
    seed: u64,
) -> Result<ModelPosterior, HarnessError> {
    let e = |e: model_space::ModelError| HarnessError::Cell(e.to_string());
    match (cfg.family, cfg.posterior) {
        (ModelFamily::Gpvs, PosteriorMethod::Enumerate) => {
            model_space::enumerate_posterior(data, cfg.p, cfg.d0, &cfg.gp, alpha).map_err(e)
        }
        (ModelFamily::Gpvs, PosteriorMethod::Mcmc { iters }) => {
            model_space::mcmc_posterior(data, cfg.p, cfg.d0, &cfg.gp, alpha, iters, seed).map_err(e)
        }
        (ModelFamily::Drvs, _) => drvs::drvs_model_posterior(data, cfg.p, cfg.d0, &cfg.drvs, alpha, seed).map_err(e),
    }
}

fn log_bayes_factor(
    cfg: &ExperimentConfig,
    data: &RegressionData,
    pair: &BayesFactorPair,
    alpha: f64,
    seed: u64,
    post: Option<&ModelPosterior>,
) -> Result<f64, HarnessError> {
    if let Some(post) = post {
        if let (Some(a), Some(b)) = (post.entry(&pair.model), post.entry(&pair.reference)) {
            if a.log_evidence.is_finite() && b.log_evidence.is_finite() {
                return Ok(a.log_evidence - b.log_evidence);
            }
        }
    }
    match cfg.family {
        ModelFamily::Gpvs => model_space::bayes_factor(data, &pair.model, &pair.reference, &cfg.gp, alpha)
            .map_err(|e| HarnessError::Cell(e.to_string())),
        ModelFamily::Drvs => {
            let ev = |m: &ModelIndex, k: u64| {
                drvs::drvs_log_evidence(data, m, &cfg.drvs, alpha, derive_seed(seed, &[k]))
                    .map(|e| e.log_evidence)
                    .map_err(|e| HarnessError::Cell(e.to_string()))
            };
            Ok(ev(&pair.model, 1)? - ev(&pair.reference, 2)?)
        }
    }
}

fn truth_of(cfg: &ExperimentConfig) -> &TruthSpec {
    cfg.truth.as_ref().expect("validated")
}

fn cell_values(cfg: &ExperimentConfig, cell: &Cell) -> Result<Vec<f64>, HarnessError> {
    match cfg.experiment {
        ExperimentKind::Consistency => {
            let truth = truth_of(cfg);
            let data = generate_regression_data(truth, cfg.p, cell.n, cfg.noise_sd, derive_seed(cell.seed, &[0]))?;
            let post = model_posterior(cfg, &data, cell.alpha, derive_seed(cell.seed, &[1]))?;
            let mode = post.mode().cloned().unwrap_or_else(ModelIndex::empty);
            let mut v = vec![
                model_space::selection_probability(&post, &truth.support),
                f64::from(u8::from(mode == truth.support)),
                mode.len() as f64,
            ];
            if cfg.family == ModelFamily::Drvs {
                v.push(f64::from(u8::from(!post.diagnostics.flagged_models.is_empty())));
            }
            for pair in &cfg.bayes_factors {
                v.push(log_bayes_factor(cfg, &data, pair, cell.alpha, derive_seed(cell.seed, &[2]), Some(&post))?);
            }
            Ok(v)
        }
        ExperimentKind::Occam => {
            let truth = truth_of(cfg);
            let data = generate_regression_data(truth, cfg.p, cell.n, cfg.noise_sd, derive_seed(cell.seed, &[0]))?;
            cfg.bayes_factors
                .iter()
                .enumerate()
                .map(|(k, pair)| {
                    log_bayes_factor(cfg, &data, pair, cell.alpha, derive_seed(cell.seed, &[2, k as u64]), None)
                })
                .collect()
        }
        ExperimentKind::Rate => {
            let truth = truth_of(cfg);
            let data = generate_regression_data(truth, cfg.p, cell.n, cfg.noise_sd, derive_seed(cell.seed, &[0]))?;
            let post = model_posterior(cfg, &data, cell.alpha, derive_seed(cell.seed, &[1]))?;
            let mode = post.mode().cloned().unwrap_or_else(ModelIndex::empty);
            let mut rng = rng_from_seed(derive_seed(cell.seed, &[3]));
            let test: Vec<f64> = (0..cfg.test_points * cfg.p).map(|_| rng.random::<f64>()).collect();
            let pred = gp::averaged_predictive_mean(&data, &mode, &cfg.gp, cell.alpha, &test)
                .map_err(|e| HarnessError::Cell(e.to_string()))?;
            let mse = pred
                .iter()
                .enumerate()
                .map(|(t, f)| (f - truth.eval(&test[t * cfg.p..(t + 1) * cfg.p])).powi(2))
                .sum::<f64>()
                / cfg.test_points as f64;
            Ok(vec![mse.sqrt(), f64::from(u8::from(mode == truth.support))])
        }
        ExperimentKind::Complexity => {
            let c = cfg.complexity.as_ref().expect("validated");
            let n = cell.n;
            let model = c.model;
            let buf = DiscrepancyBuffer::new(|r| model.draw_discrepancy(n, r), model.noise_sd, n, c.n_mc, cell.seed)
                .map_err(|e| HarnessError::Cell(e.to_string()))?;
            let eps = c.eps.unwrap_or_else(|| ((n as f64).ln() / n as f64).sqrt());
            let est = buf.estimate(eps);
            let radius = buf
                .critical_radius(cell.alpha, 1e-3)
                .map_err(|e| HarnessError::Cell(e.to_string()))?;
            Ok(vec![n as f64 * est.complexity, radius, f64::from(u8::from(est.censored))])
        }
        ExperimentKind::Spectra => {
            let s = cfg.spectra.as_ref().expect("validated");
            let mut out = vec![];
            for spec in &s.kernels {
                let e = |e: kernels::KernelError| HarnessError::Cell(format!("{}: {e}", spec.label()));
                let k = spec.build().map_err(e)?;
                let sys = kernels::eigensystem(&k, s.truncation).map_err(e)?;
                let analytic = sys.normalized_sorted();
                let gram = kernels::gram_eigen_oracle(&k, cell.n).map_err(e)?;
                out.push(sys.normalized_trace());
                for j in 0..s.top {
                    out.push(analytic.get(j).copied().unwrap_or(f64::NAN));
                    out.push(gram.get(j).copied().unwrap_or(f64::NAN));
                }
            }
            Ok(out)
        }
    }
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "panic".into()
    }
}

/// Runs every cell of the grid on `workers` threads (0 = rayon default).
pub fn run_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let start = Instant::now();
    let stats = cfg.statistics();
    let grid = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Config(format!("worker pool: {e}")))?;
    let outcomes: Vec<Result<Vec<f64>, String>> = pool.install(|| {
        grid.par_iter()
            .map(|cell| match catch_unwind(AssertUnwindSafe(|| cell_values(cfg, cell))) {
                Ok(Ok(v)) if v.len() == stats.len() => Ok(v),
                Ok(Ok(v)) => Err(format!("cell produced {} values for {} statistics", v.len(), stats.len())),
                Ok(Err(e)) => Err(e.to_string()),
                Err(p) => Err(format!("panic: {}", panic_message(p))),
            })
            .collect()
    });
    let name = cfg.experiment.name().to_string();
    let mut rows = Vec::with_capacity(grid.len() * stats.len());
    let mut errors = vec![];
    for (cell, outcome) in grid.iter().zip(outcomes) {
        let (values, status) = match outcome {
            Ok(v) => (v, "ok"),
            Err(message) => {
                errors.push(CellError {
                    n: cell.n,
                    alpha: cell.alpha,
                    replicate: cell.r,
                    seed: cell.seed,
                    message,
                });
                (vec![f64::NAN; stats.len()], "error")
            }
        };
        for (stat, value) in stats.iter().zip(values) {
            rows.push(Row {
                experiment: name.clone(),
                n: cell.n,
                alpha: cell.alpha,
                replicate: cell.r,
                seed: cell.seed,
                statistic: stat.clone(),
                value,
                status: status.into(),
            });
        }
    }
    let summary = summarize(cfg, &rows, &stats);
    let fits = fit_trends(cfg, &rows);
    Ok(ExperimentResult {
        experiment: cfg.experiment,
        rows,
        summary,
        fits,
        errors,
        fingerprint: Fingerprint {
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
            schema_version: SCHEMA_VERSION,
        },
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

fn summarize(cfg: &ExperimentConfig, rows: &[Row], stats: &[String]) -> Vec<SummaryRow> {
    let mut out = vec![];
    for &n in &cfg.n_grid {
        for &alpha in &cfg.alpha_grid {
            for stat in stats {
                let sel: Vec<&Row> = rows
                    .iter()
                    .filter(|r| r.n == n && r.alpha == alpha && &r.statistic == stat)
                    .collect();
                let ok: Vec<f64> = sel.iter().filter(|r| r.status == "ok").map(|r| r.value).collect();
                let mean = if ok.is_empty() { f64::NAN } else { special::mean(&ok) };
                let se = if ok.len() > 1 { special::std_error(&ok) } else { f64::NAN };
                out.push(SummaryRow {
                    experiment: cfg.experiment.name().into(),
                    n,
                    alpha,
                    statistic: stat.clone(),
                    mean,
                    se,
                    ok: ok.len(),
                    errors: sel.len() - ok.len(),
                });
            }
        }
    }
    out
}

fn fit_trends(cfg: &ExperimentConfig, rows: &[Row]) -> Vec<FitRow> {
    let (stat, log_response) = match cfg.experiment {
        ExperimentKind::Rate => ("l2_error", true),
        ExperimentKind::Complexity => ("n_complexity", false),
        _ => return vec![],
    };
    if cfg.n_grid.len() < 2 {
        return vec![];
    }
    cfg.alpha_grid
        .iter()
        .map(|&alpha| {
            let pts: Vec<(f64, f64)> = rows
                .iter()
                .filter(|r| r.alpha == alpha && r.statistic == stat && r.status == "ok")
                .filter(|r| !log_response || r.value > 0.0)
                .map(|r| {
                    let y = if log_response { r.value.ln() } else { r.value };
                    ((r.n as f64).ln(), y)
                })
                .collect();
            let (x, y): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
            let (slope, se) = if x.len() >= 2 { special::ols_slope(&x, &y) } else { (f64::NAN, f64::NAN) };
            FitRow {
                experiment: cfg.experiment.name().into(),
                alpha,
                statistic: stat.into(),
                response: if log_response { "log".into() } else { "linear".into() },
                slope,
                se,
                points: x.len(),
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Cell(e.to_string()))?;
    fs::write(path, bytes).map_err(io_err(path))
}

fn plot_name(stat: &str, alpha: f64) -> String {
    let clean: String = stat
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{clean}_alpha{alpha}.txt")
}

/// Writes `rows.csv`, `summary.csv`, `fits.csv`, `errors.csv`, `plots/` and
/// `manifest.json` into `dir`. Files are rendered in memory first, so a
/// failing cell never leaves a partial file behind.
pub fn write_outputs(result: &ExperimentResult, cfg: &ExperimentConfig, dir: &Path) -> Result<(), HarnessError> {
    let plots = dir.join("plots");
    fs::create_dir_all(&plots).map_err(io_err(&plots))?;
    write_csv(&dir.join("rows.csv"), &result.rows)?;
    write_csv(&dir.join("summary.csv"), &result.summary)?;
    write_csv(&dir.join("fits.csv"), &result.fits)?;
    write_csv(&dir.join("errors.csv"), &result.errors)?;
    let mut series: BTreeMap<String, String> = BTreeMap::new();
    for s in &result.summary {
        let body = series
            .entry(plot_name(&s.statistic, s.alpha))
            .or_insert_with(|| "# n mean se\n".to_string());
        body.push_str(&format!("{} {} {}\n", s.n, s.mean, s.se));
    }
    for (name, body) in series {
        let path = plots.join(name);
        fs::write(&path, body).map_err(io_err(&path))?;
    }
    let manifest = serde_json::json!({
        "fingerprint": result.fingerprint,
        "experiment": result.experiment,
        "config": cfg,
        "rows": result.rows.len(),
        "errors": result.errors.len(),
        "wall_time_secs": result.wall_time_secs,
    });
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(io_err(&path))
}

/// Settings for a single-dataset model-selection run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub truth: TruthSpec,
    pub p: usize,
    pub d0: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub alpha: f64,
    pub seed: u64,
    #[serde(default = "default_noise")]
    pub noise_sd: f64,
    #[serde(default)]
    pub gp: GpConfig,
    #[serde(default)]
    pub drvs: DrvsHyper,
    #[serde(default)]
    pub posterior: PosteriorMethod,
    /// Chain used for `mixture_draws.csv` under the posterior mode.
    #[serde(default = "default_chain")]
    pub chain: ChainSettings,
}

fn one() -> f64 {
    1.0
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path).map_err(io_err(path))?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply_seed_override(&mut self) -> Result<(), HarnessError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| HarnessError::Config(format!("{SEED_ENV}={v} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(HarnessError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.n == 0 || self.p == 0 {
            return Err(HarnessError::Config("n and p must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(HarnessError::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        if self.truth.support.max_index() > self.p {
            return Err(HarnessError::Config(format!("truth support {} exceeds p", self.truth.support)));
        }
        Ok(())
    }

    fn as_experiment(&self, family: ModelFamily) -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: None,
            experiment: ExperimentKind::Consistency,
            truth: Some(self.truth.clone()),
            p: self.p,
            d0: self.d0,
            n_grid: vec![self.n],
            alpha_grid: vec![self.alpha],
            replicates: 1,
            seed: self.seed,
            family,
            noise_sd: self.noise_sd,
            gp: self.gp.clone(),
            drvs: self.drvs.clone(),
            posterior: self.posterior,
            bayes_factors: vec![],
            test_points: 0,
            complexity: None,
            spectra: None,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub subset: String,
    pub log_evidence: f64,
    pub log_evidence_se: Option<f64>,
    pub ess: Option<f64>,
    pub prior: f64,
    pub posterior: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleRun {
    pub posterior: ModelPosterior,
    pub truth_probability: f64,
    pub mode: Option<ModelIndex>,
}

impl SingleRun {
    pub fn model_rows(&self) -> Vec<ModelRow> {
        self.posterior
            .entries
            .iter()
            .map(|e| ModelRow {
                subset: e.model.to_string(),
                log_evidence: e.log_evidence,
                log_evidence_se: e.log_evidence_se,
                ess: e.ess,
                prior: e.log_prior.exp(),
                posterior: e.probability,
            })
            .collect()
    }
}

fn single_run(cfg: &RunConfig, family: ModelFamily) -> Result<(SingleRun, RegressionData), HarnessError> {
    cfg.validate()?;
    let exp = cfg.as_experiment(family);
    let data = generate_regression_data(&cfg.truth, cfg.p, cfg.n, cfg.noise_sd, derive_seed(cfg.seed, &[0]))?;
    let post = model_posterior(&exp, &data, cfg.alpha, derive_seed(cfg.seed, &[1]))?;
    let run = SingleRun {
        truth_probability: post.probability(&cfg.truth.support),
        mode: post.mode().cloned(),
        posterior: post,
    };
    Ok((run, data))
}

pub fn run_gpvs(cfg: &RunConfig) -> Result<SingleRun, HarnessError> {
    Ok(single_run(cfg, ModelFamily::Gpvs)?.0)
}

/// Model posterior plus thinned chain states under the posterior mode.
pub fn run_drvs(cfg: &RunConfig) -> Result<(SingleRun, drvs::PosteriorDraws), HarnessError> {
    let (run, data) = single_run(cfg, ModelFamily::Drvs)?;
    let mode = run.mode.clone().unwrap_or_else(ModelIndex::empty);
    let (sigma, m) = cfg
        .drvs
        .resolve(data.n(), mode.len())
        .map_err(|e| HarnessError::Cell(e.to_string()))?;
    let draws = drvs::drvs_posterior_sampler(
        &data,
        &mode,
        m,
        sigma,
        &cfg.drvs,
        cfg.alpha,
        cfg.chain.iters,
        cfg.chain.thin,
        derive_seed(cfg.seed, &[4]),
    )
    .map_err(|e| HarnessError::Cell(e.to_string()))?;
    Ok((run, draws))
}

pub fn write_models(run: &SingleRun, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&dir.join("models.csv"), &run.model_rows())?;
    let diag = serde_json::json!({
        "kind": run.posterior.kind,
        "alpha": run.posterior.alpha,
        "mode": run.mode.as_ref().map(|m| m.to_string()),
        "truth_probability": run.truth_probability,
        "diagnostics": run.posterior.diagnostics,
    });
    let path = dir.join("diagnostics.json");
    fs::write(&path, serde_json::to_string_pretty(&diag)?).map_err(io_err(&path))
}

/// One row per (draw, component): `draw, log_likelihood, component, weight, mu_y, mu_x…, sigma`.
pub fn write_mixture_draws(draws: &drvs::PosteriorDraws, dir: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let dim = draws.draws.first().map(|d| d.dim).unwrap_or(0);
    let mut header = vec!["draw".to_string(), "log_likelihood".into(), "component".into(), "weight".into(), "mu_y".into()];
    header.extend((1..=dim).map(|k| format!("mu_x{k}")));
    header.push("sigma".into());
    w.write_record(&header)?;
    for (d, (theta, ll)) in draws.draws.iter().zip(&draws.log_likelihoods).enumerate() {
        for j in 0..theta.m() {
            let mut rec = vec![
                d.to_string(),
                ll.to_string(),
                j.to_string(),
                theta.weights[j].to_string(),
                theta.mu_y[j].to_string(),
            ];
            rec.extend(theta.center(j).iter().map(|v| v.to_string()));
            rec.push(theta.sigma.to_string());
            w.write_record(&rec)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Cell(e.to_string()))?;
    let path = dir.join("mixture_draws.csv");
    fs::write(&path, bytes).map_err(io_err(&path))
}
