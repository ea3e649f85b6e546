//! Density regression with covariate-gated location mixtures of normals:
//! the mixture density, its restricted prior, deterministic bandwidth and
//! component-count schedules, a Metropolis-within-Gibbs posterior sampler and
//! per-subset evidence estimates for model selection.

use rand::RngExt;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gp::RegressionData;
use crate::model_space::{gpvs_log_prior, ModelEntry, ModelError, ModelIndex, ModelPosterior, PosteriorKind};
use crate::numerics::special::{ln_gamma, log_sum_exp, LN_SQRT_2PI};
use crate::numerics::{derive_seed, rng_from_seed, SeededRng};

#[derive(Debug, Error)]
pub enum DrvsError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("schedule undefined: {0}")]
    Schedule(String),
    #[error("invalid mixture parameters: {0}")]
    Params(String),
    #[error("restricted Dirichlet rejection budget of {budget} exhausted for m = {m}, b = {b}; lower b or raise the concentration a")]
    DirichletBudget { m: usize, b: f64, budget: usize },
}

impl From<DrvsError> for ModelError {
    fn from(e: DrvsError) -> Self {
        ModelError::Evidence {
            model: ModelIndex::empty(),
            message: e.to_string(),
        }
    }
}

/// Parameters of one conditional mixture with `m` components on `dim` covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub weights: Vec<f64>,
    pub mu_y: Vec<f64>,
    /// Row-major `m × dim`.
    pub mu_x: Vec<f64>,
    pub sigma: f64,
    pub dim: usize,
}

impl MixtureParams {
    pub fn m(&self) -> usize {
        self.weights.len()
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.mu_x[j * self.dim..(j + 1) * self.dim]
    }

    pub fn validate(&self) -> Result<(), DrvsError> {
        let m = self.m();
        if m == 0 || self.mu_y.len() != m || self.mu_x.len() != m * self.dim {
            return Err(DrvsError::Params("inconsistent component counts".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(DrvsError::Params(format!("sigma must be positive, got {}", self.sigma)));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-12 || self.weights.iter().any(|w| *w < 0.0) {
            return Err(DrvsError::Params(format!("weights must lie on the simplex (sum {s})")));
        }
        if self.mu_x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DrvsError::Params("x-locations must lie in the unit cube".into()));
        }
        Ok(())
    }

    /// Log gate terms `log α_j − ‖x − μ_j^x‖²/(2σ²)`.
    fn log_gates(&self, x: &[f64], out: &mut [f64]) {
        let ln_w: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        self.log_gates_with(&ln_w, x, out);
    }

    fn log_gates_with(&self, ln_w: &[f64], x: &[f64], out: &mut [f64]) {
        let inv = 0.5 / (self.sigma * self.sigma);
        for (j, g) in out.iter_mut().enumerate() {
            let d2: f64 = self.center(j).iter().zip(x).map(|(c, v)| (c - v) * (c - v)).sum();
            *g = ln_w[j] - inv * d2;
        }
    }

    /// `log p(y | x)`, normalized in log space so vanishing gates never
    /// produce 0/0.
    pub fn ln_conditional_density(&self, y: f64, x: &[f64]) -> f64 {
        let m = self.m();
        let mut gates = vec![0.0; m];
        self.log_gates(x, &mut gates);
        self.ln_density_with(y, &mut gates)
    }

    fn ln_density_with(&self, y: f64, gates: &mut [f64]) -> f64 {
        let ln_s = self.sigma.ln();
        if gates.len() == 1 {
            let z = (y - self.mu_y[0]) / self.sigma;
            return -0.5 * z * z - ln_s - LN_SQRT_2PI;
        }
        let norm = log_sum_exp(gates);
        for (j, g) in gates.iter_mut().enumerate() {
            let z = (y - self.mu_y[j]) / self.sigma;
            *g += -0.5 * z * z - ln_s - LN_SQRT_2PI;
        }
        log_sum_exp(gates) - norm
    }

    /// Normalized gate probabilities at `x`.
    pub fn gate_probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut gates = vec![0.0; self.m()];
        self.log_gates(x, &mut gates);
        crate::numerics::special::softmax(&gates)
    }
}

pub fn conditional_density(y: f64, x: &[f64], params: &MixtureParams) -> f64 {
    params.ln_conditional_density(y, x).exp()
}

/// Sum over observations of `log p(y_i | x_{i,I})`.
pub fn log_likelihood(data: &RegressionData, columns: &[usize], params: &MixtureParams) -> f64 {
    let m = params.m();
    let mut gates = vec![0.0; m];
    let mut x = vec![0.0; columns.len()];
    let ln_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    let mut total = 0.0;
    for i in 0..data.n() {
        let row = data.row(i);
        for (slot, &c) in x.iter_mut().zip(columns) {
            *slot = row[c];
        }
        params.log_gates_with(&ln_w, &x, &mut gates);
        total += params.ln_density_with(data.y()[i], &mut gates);
    }
    total
}

/// Rate, bandwidth and component count for one model size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DrvsSchedule {
    pub epsilon: f64,
    pub sigma: f64,
    pub m: usize,
    pub beta: f64,
    pub tau: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub t: f64,
    pub dim: usize,
}

/// Exponent `t` of the log factor: its infimum plus 0.01.
pub fn log_exponent(beta: f64, dim: usize, tau: f64, tau1: f64, tau2: f64) -> f64 {
    let d1 = dim as f64 + 1.0;
    let s = 1.0 + 1.0 / beta + 1.0 / tau;
    let t0 = (d1 * s + tau1.max(1.0).max(tau2 / tau)) / (2.0 + d1 / beta);
    t0 + (0.5 * (1.0 - tau1)).max(0.0) + 0.01
}

/// `n^{−β/(2β+d+1)} (log n)^t`, without the `ε < 1` requirement.
pub fn schedule_rate(n: f64, beta: f64, dim: usize, tau: f64, tau1: f64, tau2: f64) -> f64 {
    let t = log_exponent(beta, dim, tau, tau1, tau2);
    n.powf(-beta / (2.0 * beta + dim as f64 + 1.0)) * n.ln().powf(t)
}

pub fn schedule(n: usize, beta: f64, dim: usize, tau: f64, tau1: f64, tau2: f64) -> Result<DrvsSchedule, DrvsError> {
    if n < 2 {
        return Err(DrvsError::Schedule(format!("need n >= 2, got {n}")));
    }
    for (name, v) in [("beta", beta), ("tau", tau), ("tau1", tau1), ("tau2", tau2)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(DrvsError::Config(format!("{name} must be positive, got {v}")));
        }
    }
    let epsilon = schedule_rate(n as f64, beta, dim, tau, tau1, tau2);
    if !(epsilon < 1.0) {
        return Err(DrvsError::Schedule(format!(
            "rate {epsilon:.4} is not below 1 at n = {n}; the schedule needs a larger sample (override sigma and m instead)"
        )));
    }
    let l = (1.0 / epsilon).ln();
    let sigma = (epsilon / l).powf(1.0 / beta);
    let d = dim as f64;
    let m = (sigma.powf(-d) * l.powf(d + d / tau)).ceil().max(1.0) as usize;
    Ok(DrvsSchedule {
        epsilon,
        sigma,
        m,
        beta,
        tau,
        tau1,
        tau2,
        t: log_exponent(beta, dim, tau, tau1, tau2),
        dim,
    })
}

/// How model evidences are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvidenceMethod {
    /// Plain averaging of the fractional likelihood over prior draws.
    PriorImportance { draws: usize },
    /// Annealed importance sampling along `L^{α β_k}`, `β_k = (k/K)^4`.
    Annealed {
        particles: usize,
        temperatures: usize,
        sweeps: usize,
    },
    /// Tempered sequential Monte Carlo: each step picks the next temperature
    /// so the incremental weights keep an ESS of `ess_fraction · particles`,
    /// then resamples and moves every particle `sweeps` times.
    Smc {
        particles: usize,
        #[serde(default = "half")]
        ess_fraction: f64,
        sweeps: usize,
    },
}

fn half() -> f64 {
    0.5
}

impl EvidenceMethod {
    fn shape(&self) -> (usize, usize, usize) {
        match *self {
            EvidenceMethod::PriorImportance { draws } => (draws, 1, 0),
            EvidenceMethod::Annealed {
                particles,
                temperatures,
                sweeps,
            } => (particles, temperatures.max(1), sweeps),
            EvidenceMethod::Smc { particles, sweeps, .. } => (particles, 0, sweeps),
        }
    }
}

/// Prior and computational settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrvsHyper {
    /// Dirichlet concentration `a` (each weight gets `a/m`).
    pub dirichlet_a: f64,
    /// Weight floor constant: weights must exceed `b/m`.
    pub weight_floor_b: f64,
    /// Rate `a₂` of the y-location prior `∝ exp(−a₂|μ|^{τ₁})`.
    pub mu_y_rate: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub tau: f64,
    /// Smoothness used by the schedule.
    pub beta: f64,
    /// Overrides the scheduled bandwidth.
    pub sigma: Option<f64>,
    /// Overrides the scheduled component count, indexed by model size.
    pub components: Option<Vec<usize>>,
    pub evidence: EvidenceMethod,
    pub dirichlet_budget: usize,
}

impl Default for DrvsHyper {
    fn default() -> Self {
        Self {
            dirichlet_a: 10.0,
            weight_floor_b: 0.5,
            mu_y_rate: 1.0,
            tau1: 1.0,
            tau2: 1.0,
            tau: 1.0,
            beta: 1.0,
            sigma: None,
            components: None,
            evidence: EvidenceMethod::PriorImportance { draws: 20_000 },
            dirichlet_budget: 100_000,
        }
    }
}

impl DrvsHyper {
    pub fn validate(&self) -> Result<(), DrvsError> {
        if !(self.dirichlet_a > 0.0) {
            return Err(DrvsError::Config("dirichlet_a must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.weight_floor_b) {
            return Err(DrvsError::Config(format!(
                "weight_floor_b = {} is infeasible: m weights above b/m sum to more than 1 unless b < 1",
                self.weight_floor_b
            )));
        }
        if !(self.mu_y_rate > 0.0 && self.tau1 > 0.0) {
            return Err(DrvsError::Config("mu_y_rate and tau1 must be positive".into()));
        }
        if let Some(s) = self.sigma {
            if !(s > 0.0) {
                return Err(DrvsError::Config(format!("sigma override must be positive, got {s}")));
            }
        }
        if let Some(c) = &self.components {
            if c.contains(&0) {
                return Err(DrvsError::Config("component counts must be at least 1".into()));
            }
        }
        let (particles, _, _) = self.evidence.shape();
        if particles < 2 {
            return Err(DrvsError::Config("evidence estimation needs at least 2 draws".into()));
        }
        if let EvidenceMethod::Smc { ess_fraction, .. } = self.evidence {
            if !(ess_fraction > 0.0 && ess_fraction < 1.0) {
                return Err(DrvsError::Config(format!("ess_fraction must lie in (0, 1), got {ess_fraction}")));
            }
        }
        Ok(())
    }

    /// Bandwidth and component count for a model of size `dim` at sample size `n`.
    pub fn resolve(&self, n: usize, dim: usize) -> Result<(f64, usize), DrvsError> {
        let override_m = self.components.as_ref().map(|c| c.get(dim).copied().unwrap_or(*c.last().unwrap_or(&1)));
        match (self.sigma, override_m) {
            (Some(s), Some(m)) => Ok((s, m)),
            _ => {
                let sch = schedule(n, self.beta, dim, self.tau, self.tau1, self.tau2)?;
                Ok((self.sigma.unwrap_or(sch.sigma), override_m.unwrap_or(sch.m)))
            }
        }
    }

    /// Log density of the y-location prior `∝ exp(−a₂|μ|^{τ₁})`.
    fn ln_mu_y_prior(&self, mu: f64) -> f64 {
        let (a2, t1) = (self.mu_y_rate, self.tau1);
        (t1 / 2.0).ln() + a2.ln() / t1 - ln_gamma(1.0 / t1) - a2 * mu.abs().powf(t1)
    }

    fn sample_mu_y(&self, rng: &mut SeededRng) -> f64 {
        let g: f64 = Gamma::new(1.0 / self.tau1, 1.0).expect("positive shape").sample(rng);
        let mag = (g / self.mu_y_rate).powf(1.0 / self.tau1);
        if rng.random::<bool>() {
            mag
        } else {
            -mag
        }
    }

    fn ln_weight_prior(&self, w: &[f64]) -> f64 {
        let m = w.len() as f64;
        let floor = self.weight_floor_b / m;
        if w.iter().any(|v| *v <= floor) {
            return f64::NEG_INFINITY;
        }
        let c = self.dirichlet_a / m - 1.0;
        w.iter().map(|v| c * v.ln()).sum()
    }

    /// Unnormalized log prior density (normalizers that do not depend on θ dropped).
    pub fn ln_prior(&self, p: &MixtureParams) -> f64 {
        if p.mu_x.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return f64::NEG_INFINITY;
        }
        self.ln_weight_prior(&p.weights) + p.mu_y.iter().map(|&m| self.ln_mu_y_prior(m)).sum::<f64>()
    }
}

fn restricted_dirichlet(m: usize, hyper: &DrvsHyper, rng: &mut SeededRng) -> Result<Vec<f64>, DrvsError> {
    if m == 1 {
        return Ok(vec![1.0]);
    }
    let floor = hyper.weight_floor_b / m as f64;
    let g = Gamma::new(hyper.dirichlet_a / m as f64, 1.0).map_err(|e| DrvsError::Config(e.to_string()))?;
    for _ in 0..hyper.dirichlet_budget.max(1) {
        let raw: Vec<f64> = (0..m).map(|_| g.sample(rng)).collect();
        let s: f64 = raw.iter().sum();
        if s <= 0.0 {
            continue;
        }
        let w: Vec<f64> = raw.iter().map(|v| v / s).collect();
        if w.iter().all(|v| *v > floor) {
            return Ok(w);
        }
    }
    Err(DrvsError::DirichletBudget {
        m,
        b: hyper.weight_floor_b,
        budget: hyper.dirichlet_budget,
    })
}

fn prior_draw(m: usize, dim: usize, sigma: f64, hyper: &DrvsHyper, rng: &mut SeededRng) -> Result<MixtureParams, DrvsError> {
    let weights = restricted_dirichlet(m, hyper, rng)?;
    let mu_x = (0..m * dim).map(|_| rng.random::<f64>()).collect();
    let mu_y = (0..m).map(|_| hyper.sample_mu_y(rng)).collect();
    Ok(MixtureParams {
        weights,
        mu_y,
        mu_x,
        sigma,
        dim,
    })
}

/// One draw from the restricted prior.
pub fn drvs_prior_sample(m: usize, dim: usize, sigma: f64, hyper: &DrvsHyper, seed: u64) -> Result<MixtureParams, DrvsError> {
    hyper.validate()?;
    if m == 0 {
        return Err(DrvsError::Config("m must be at least 1".into()));
    }
    prior_draw(m, dim, sigma, hyper, &mut rng_from_seed(seed))
}

/// Acceptance counts per update block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct BlockAcceptance {
    pub mu_y: (usize, usize),
    pub mu_x: (usize, usize),
    pub weights: (usize, usize),
}

impl BlockAcceptance {
    pub fn rate(block: (usize, usize)) -> f64 {
        if block.1 == 0 {
            f64::NAN
        } else {
            block.0 as f64 / block.1 as f64
        }
    }
}

/// State of a tempered chain targeting `prior · L^{power}`.
struct Chain<'a> {
    data: &'a RegressionData,
    cols: &'a [usize],
    hyper: &'a DrvsHyper,
    theta: MixtureParams,
    ll: f64,
    lp: f64,
}

impl<'a> Chain<'a> {
    fn new(data: &'a RegressionData, cols: &'a [usize], hyper: &'a DrvsHyper, theta: MixtureParams) -> Self {
        let ll = log_likelihood(data, cols, &theta);
        let lp = hyper.ln_prior(&theta);
        Self {
            data,
            cols,
            hyper,
            theta,
            ll,
            lp,
        }
    }

    fn try_move(&mut self, cand: MixtureParams, power: f64, rng: &mut SeededRng) -> bool {
        let lp = self.hyper.ln_prior(&cand);
        if lp == f64::NEG_INFINITY {
            return false;
        }
        let ll = if power == 0.0 { 0.0 } else { log_likelihood(self.data, self.cols, &cand) };
        let cur = if power == 0.0 { 0.0 } else { self.ll };
        let log_a = lp - self.lp + power * (ll - cur);
        let u: f64 = rng.random();
        if u.ln() < log_a {
            self.ll = if power == 0.0 { log_likelihood(self.data, self.cols, &cand) } else { ll };
            self.lp = lp;
            self.theta = cand;
            true
        } else {
            false
        }
    }

    /// One Metropolis-within-Gibbs sweep over every block.
    fn sweep(&mut self, power: f64, rng: &mut SeededRng, acc: &mut BlockAcceptance) {
        self.sweep_scaled(power, rng, acc, [1.0; 3]);
    }

    /// Sweep with per-block step multipliers for `(μ^y, μ^x, weights)`.
    fn sweep_scaled(&mut self, power: f64, rng: &mut SeededRng, acc: &mut BlockAcceptance, scale: [f64; 3]) {
        let m = self.theta.m();
        let dim = self.theta.dim;
        let n_eff = (power * self.data.n() as f64 / m as f64).max(0.0);
        let shrink = 1.0 / (1.0 + n_eff).sqrt();
        let sy = scale[0] * (2.0 / self.hyper.mu_y_rate).max(self.theta.sigma) * shrink.max(0.05);
        let sx = scale[1] * 0.3 * shrink.max(0.1);
        for j in 0..m {
            let mut cand = self.theta.clone();
            let z: f64 = StandardNormal.sample(rng);
            cand.mu_y[j] += sy * z;
            acc.mu_y.1 += 1;
            if self.try_move(cand, power, rng) {
                acc.mu_y.0 += 1;
            }
            if dim > 0 {
                let mut cand = self.theta.clone();
                for k in 0..dim {
                    let z: f64 = StandardNormal.sample(rng);
                    cand.mu_x[j * dim + k] += sx * z;
                }
                acc.mu_x.1 += 1;
                if self.try_move(cand, power, rng) {
                    acc.mu_x.0 += 1;
                }
            }
        }
        if m > 1 {
            let step = scale[2] * (1.0 - self.hyper.weight_floor_b) / m as f64 * shrink.max(0.1);
            for _ in 0..m {
                let i = rng.random_range(0..m);
                let mut k = rng.random_range(0..m - 1);
                if k >= i {
                    k += 1;
                }
                let delta = step * (2.0 * rng.random::<f64>() - 1.0);
                let mut cand = self.theta.clone();
                cand.weights[i] -= delta;
                cand.weights[k] += delta;
                acc.weights.1 += 1;
                if cand.weights[i] > 0.0 && cand.weights[k] > 0.0 && self.try_move(cand, power, rng) {
                    acc.weights.0 += 1;
                }
            }
        }
    }
}

/// Thinned posterior draws with acceptance diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorDraws {
    pub draws: Vec<MixtureParams>,
    pub log_likelihoods: Vec<f64>,
    pub acceptance: BlockAcceptance,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
}

/// Chain targeting `[Π p(y_i | x_i, θ)]^α · prior(θ)` with fixed `m` and `σ`.
#[allow(clippy::too_many_arguments)]
pub fn drvs_posterior_sampler(
    data: &RegressionData,
    model: &ModelIndex,
    m: usize,
    sigma: f64,
    hyper: &DrvsHyper,
    alpha: f64,
    iters: usize,
    thin: usize,
    seed: u64,
) -> Result<PosteriorDraws, DrvsError> {
    hyper.validate()?;
    check_alpha(alpha)?;
    let cols = model.columns();
    let mut rng = rng_from_seed(seed);
    let start = prior_draw(m, cols.len(), sigma, hyper, &mut rng)?;
    let mut chain = Chain::new(data, &cols, hyper, start);
    let mut acc = BlockAcceptance::default();
    let burn_in = iters / 5;
    let thin = thin.max(1);
    let mut draws = vec![];
    let mut lls = vec![];
    for it in 0..iters {
        chain.sweep(alpha, &mut rng, &mut acc);
        if it >= burn_in && (it - burn_in) % thin == 0 {
            draws.push(chain.theta.clone());
            lls.push(chain.ll);
        }
    }
    Ok(PosteriorDraws {
        draws,
        log_likelihoods: lls,
        acceptance: acc,
        iterations: iters,
        burn_in,
        thin,
    })
}

fn check_alpha(alpha: f64) -> Result<(), DrvsError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(DrvsError::Config(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

/// Importance-sampling estimate of a log evidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvidenceEstimate {
    pub log_evidence: f64,
    /// Delta-method standard error of the log estimate.
    pub std_error: f64,
    pub ess: f64,
    pub draws: usize,
}

impl EvidenceEstimate {
    pub fn from_log_weights(log_w: &[f64]) -> Self {
        let n = log_w.len() as f64;
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let s: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|v| v * v).sum();
        let mean = s / n;
        let var = if n > 1.0 { (s2 - n * mean * mean).max(0.0) / (n - 1.0) } else { f64::NAN };
        Self {
            log_evidence: log_sum_exp(log_w) - n.ln(),
            std_error: (var / n).sqrt() / mean,
            ess: s * s / s2,
            draws: log_w.len(),
        }
    }
}

/// Log evidence of one subset under the fractional likelihood.
pub fn drvs_log_evidence(
    data: &RegressionData,
    model: &ModelIndex,
    hyper: &DrvsHyper,
    alpha: f64,
    seed: u64,
) -> Result<EvidenceEstimate, DrvsError> {
    hyper.validate()?;
    check_alpha(alpha)?;
    let cols = model.columns();
    let dim = cols.len();
    if data.n() == 0 {
        return Ok(EvidenceEstimate {
            log_evidence: 0.0,
            std_error: 0.0,
            ess: hyper.evidence.shape().0 as f64,
            draws: hyper.evidence.shape().0,
        });
    }
    let (sigma, m) = hyper.resolve(data.n(), dim)?;
    if let EvidenceMethod::Smc {
        particles,
        ess_fraction,
        sweeps,
    } = hyper.evidence
    {
        return smc_log_evidence(data, &cols, hyper, (m, sigma), alpha, (particles, ess_fraction, sweeps), seed);
    }
    let (particles, temps, sweeps) = hyper.evidence.shape();
    let ladder: Vec<f64> = (0..=temps).map(|k| (k as f64 / temps as f64).powi(4)).collect();
    let log_w: Vec<Result<f64, DrvsError>> = (0..particles)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, &[k as u64]));
            let theta = prior_draw(m, dim, sigma, hyper, &mut rng)?;
            let mut chain = Chain::new(data, &cols, hyper, theta);
            let mut acc = BlockAcceptance::default();
            let mut lw = 0.0;
            for step in 1..=temps {
                lw += (ladder[step] - ladder[step - 1]) * alpha * chain.ll;
                if step < temps {
                    for _ in 0..sweeps {
                        chain.sweep(alpha * ladder[step], &mut rng, &mut acc);
                    }
                }
            }
            Ok(lw)
        })
        .collect();
    let log_w: Vec<f64> = log_w.into_iter().collect::<Result<_, _>>()?;
    Ok(EvidenceEstimate::from_log_weights(&log_w))
}

fn ess_of(log_w: &[f64]) -> f64 {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (s, s2) = log_w.iter().fold((0.0, 0.0), |(a, b), l| {
        let w = (l - max).exp();
        (a + w, b + w * w)
    });
    s * s / s2
}

/// Systematic resampling; returns ancestor indices.
fn systematic_resample(log_w: &[f64], rng: &mut SeededRng) -> Vec<usize> {
    let n = log_w.len();
    let w = crate::numerics::special::softmax(log_w);
    let u0: f64 = rng.random::<f64>() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = w[0];
    let mut i = 0;
    for k in 0..n {
        let u = u0 + k as f64 / n as f64;
        while u > cum && i + 1 < n {
            i += 1;
            cum += w[i];
        }
        out.push(i);
    }
    out
}

/// Tempered SMC estimate. `ess` reports the smallest incremental-weight ESS
/// over the tempering steps; `draws` counts steps × particles.
fn smc_log_evidence(
    data: &RegressionData,
    cols: &[usize],
    hyper: &DrvsHyper,
    (m, sigma): (usize, f64),
    alpha: f64,
    (particles, ess_fraction, sweeps): (usize, f64, usize),
    seed: u64,
) -> Result<EvidenceEstimate, DrvsError> {
    let dim = cols.len();
    let mut states: Vec<(MixtureParams, f64, f64)> = (0..particles)
        .into_par_iter()
        .map(|k| {
            let mut rng = rng_from_seed(derive_seed(seed, &[0, k as u64]));
            let theta = prior_draw(m, dim, sigma, hyper, &mut rng)?;
            let c = Chain::new(data, cols, hyper, theta);
            Ok((c.theta, c.ll, c.lp))
        })
        .collect::<Result<_, DrvsError>>()?;
    let target = ess_fraction * particles as f64;
    let mut beta = 0.0;
    let mut log_z = 0.0;
    let mut var = 0.0;
    let mut min_ess = particles as f64;
    let mut scale = [1.0; 3];
    let mut step = 0u64;
    let mut steps = 0usize;
    while beta < 1.0 {
        step += 1;
        let incr = |b: f64| -> Vec<f64> { states.iter().map(|s| (b - beta) * alpha * s.1).collect() };
        let next = if ess_of(&incr(1.0)) >= target {
            1.0
        } else {
            let (mut lo, mut hi) = (beta, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if ess_of(&incr(mid)) >= target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            // guarantees progress when a single particle dominates immediately
            if lo <= beta {
                hi
            } else {
                lo
            }
        };
        let lw = incr(next);
        let ess = ess_of(&lw);
        log_z += log_sum_exp(&lw) - (particles as f64).ln();
        var += (particles as f64 / ess - 1.0) / particles as f64;
        min_ess = min_ess.min(ess);
        beta = next;
        steps += 1;
        let mut rng = rng_from_seed(derive_seed(seed, &[1, step]));
        let ancestors = systematic_resample(&lw, &mut rng);
        let parents: Vec<(MixtureParams, f64, f64)> = ancestors.iter().map(|&a| states[a].clone()).collect();
        let power = alpha * beta;
        let moved: Vec<((MixtureParams, f64, f64), BlockAcceptance)> = parents
            .into_par_iter()
            .enumerate()
            .map(|(k, (theta, ll, lp))| {
                let mut rng = rng_from_seed(derive_seed(seed, &[2, step, k as u64]));
                let mut c = Chain {
                    data,
                    cols,
                    hyper,
                    theta,
                    ll,
                    lp,
                };
                let mut acc = BlockAcceptance::default();
                for _ in 0..sweeps {
                    c.sweep_scaled(power, &mut rng, &mut acc, scale);
                }
                ((c.theta, c.ll, c.lp), acc)
            })
            .collect();
        let mut total = BlockAcceptance::default();
        states = moved
            .into_iter()
            .map(|(s, a)| {
                for (t, b) in [(&mut total.mu_y, a.mu_y), (&mut total.mu_x, a.mu_x), (&mut total.weights, a.weights)] {
                    t.0 += b.0;
                    t.1 += b.1;
                }
                s
            })
            .collect();
        // steer each block towards roughly 30% acceptance
        for (sc, block) in scale.iter_mut().zip([total.mu_y, total.mu_x, total.weights]) {
            if block.1 > 0 {
                let rate = block.0 as f64 / block.1 as f64;
                *sc = (*sc * (rate / 0.3).clamp(0.5, 2.0)).clamp(1e-3, 10.0);
            }
        }
    }
    Ok(EvidenceEstimate {
        log_evidence: log_z,
        std_error: var.sqrt(),
        ess: min_ess,
        draws: steps * particles,
    })
}

/// Effective sample size below which an evidence estimate is flagged.
pub const ESS_FLAG: f64 = 10.0;

/// Posterior over admissible subsets with Monte Carlo evidences.
pub fn drvs_model_posterior(
    data: &RegressionData,
    p: usize,
    d0: usize,
    hyper: &DrvsHyper,
    alpha: f64,
    seed: u64,
) -> Result<ModelPosterior, ModelError> {
    hyper.validate()?;
    let prior = gpvs_log_prior(p, d0);
    if prior.len() > crate::model_space::ENUMERATION_BUDGET {
        return Err(ModelError::BudgetExceeded {
            count: prior.len(),
            budget: crate::model_space::ENUMERATION_BUDGET,
        });
    }
    let mut entries = Vec::with_capacity(prior.len());
    let mut flagged = vec![];
    for (k, (model, lp)) in prior.into_iter().enumerate() {
        let est = drvs_log_evidence(data, &model, hyper, alpha, derive_seed(seed, &[k as u64])).map_err(|e| {
            ModelError::Evidence {
                model: model.clone(),
                message: e.to_string(),
            }
        })?;
        if est.ess < ESS_FLAG {
            flagged.push(model.to_string());
        }
        entries.push(ModelEntry {
            model,
            log_prior: lp,
            log_evidence: est.log_evidence,
            log_evidence_se: Some(est.std_error),
            probability: 0.0,
            ess: Some(est.ess),
        });
    }
    let mut post = ModelPosterior::from_evidence(alpha, PosteriorKind::ImportanceSampling, entries);
    post.diagnostics.distinct_models_visited = post.entries.len();
    post.diagnostics.flagged_models = flagged;
    Ok(post)
}
