//! Gaussian-process regression with a squared-exponential kernel on a subset
//! of covariates: exact fractional marginal likelihoods, integration over the
//! inverse bandwidth, prior draws and predictive means.

use std::cell::RefCell;

use faer::dyn_stack::{MemBuffer, MemStack};
use faer::linalg::cholesky::llt::factor as llt;
use faer::{Mat, Par};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_space::ModelIndex;
use crate::numerics::special::{gamma_ln_pdf, log_sum_exp, softmax, TWO_PI};
use crate::numerics::{rng_from_seed, Cholesky, JitterSchedule, LinalgError};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid data: {0}")]
    Data(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("no prior draw with sup norm <= {a_inf} after {tries} tries; increase the sup-norm cap")]
    RejectionBudget { a_inf: f64, tries: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    /// Known noise standard deviation.
    pub sigma: f64,
    /// Shape of the Gamma prior on `A^{|I|}`.
    pub bandwidth_shape: f64,
    /// Scale of the Gamma prior on `A^{|I|}`.
    pub bandwidth_scale: f64,
    /// Smoothness used in the bandwidth floor `n^{1/(2β+|I|)}`.
    pub beta: f64,
    /// Sup-norm cap honored by prior sampling.
    pub sup_norm_cap: f64,
    /// Nodes of the log-spaced bandwidth grid.
    pub grid: usize,
    /// Upper end of the bandwidth range; `None` means `4n`.
    pub a_max: Option<f64>,
    /// Rejection budget for capped prior draws.
    pub max_rejections: usize,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            bandwidth_shape: 2.0,
            bandwidth_scale: 10.0,
            beta: 2.0,
            sup_norm_cap: 10.0,
            grid: 64,
            a_max: None,
            max_rejections: 1000,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<(), GpError> {
        let positive = [
            ("sigma", self.sigma),
            ("bandwidth_shape", self.bandwidth_shape),
            ("bandwidth_scale", self.bandwidth_scale),
            ("beta", self.beta),
            ("sup_norm_cap", self.sup_norm_cap),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || v.is_nan() {
                return Err(GpError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.grid < 3 {
            return Err(GpError::Config(format!("bandwidth grid needs at least 3 nodes, got {}", self.grid)));
        }
        if let Some(a) = self.a_max {
            if !(a > 0.0 && a.is_finite()) {
                return Err(GpError::Config(format!("a_max must be positive and finite, got {a}")));
            }
        }
        Ok(())
    }

    /// Bandwidth range `[n^{1/(2β+d)}, a_max]`.
    pub fn bandwidth_range(&self, n: usize, d: usize) -> Result<(f64, f64), GpError> {
        let lo = (n as f64).powf(1.0 / (2.0 * self.beta + d as f64));
        let hi = self.a_max.unwrap_or(4.0 * n as f64);
        if !(hi > lo) {
            return Err(GpError::Config(format!(
                "bandwidth range is empty: floor {lo} is not below a_max {hi}"
            )));
        }
        Ok((lo, hi))
    }

    /// Log-spaced nodes over the bandwidth range.
    pub fn bandwidth_grid(&self, n: usize, d: usize) -> Result<Vec<f64>, GpError> {
        let (lo, hi) = self.bandwidth_range(n, d)?;
        Ok(log_spaced(lo, hi, self.grid))
    }
}

pub fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (l, h) = (lo.ln(), hi.ln());
    (0..count)
        .map(|k| (l + (h - l) * k as f64 / (count - 1) as f64).exp())
        .collect()
}

/// Design matrix with entries in [0,1] (row-major) and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
}

impl RegressionData {
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Self, GpError> {
        if p == 0 {
            return Err(GpError::Data("need at least one covariate".into()));
        }
        if x.len() != y.len() * p {
            return Err(GpError::Data(format!(
                "design has {} entries, expected {} rows x {p} columns",
                x.len(),
                y.len()
            )));
        }
        if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(GpError::Data(format!("design entry {v} outside [0,1]")));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(GpError::Data("non-finite response".into()));
        }
        Ok(Self { x, y, p })
    }

    /// No observations; every likelihood is identically one.
    pub fn empty(p: usize) -> Self {
        Self { x: vec![], y: vec![], p }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Reorders observations.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut x = Vec::with_capacity(self.x.len());
        let mut y = Vec::with_capacity(self.y.len());
        for &i in order {
            x.extend_from_slice(self.row(i));
            y.push(self.y[i]);
        }
        Self { x, y, p: self.p }
    }
}

/// `log c(α, n, σ)`, the constant turning a fractional Gaussian likelihood
/// into an ordinary one with noise variance `σ²/α`.
pub fn log_fractional_constant(alpha: f64, n: usize, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    let nf = n as f64;
    -0.5 * nf * alpha * (TWO_PI * s2).ln() + 0.5 * nf * (TWO_PI * s2 / alpha).ln()
}

fn check_alpha(alpha: f64) -> Result<(), GpError> {
    if alpha > 0.0 && alpha <= 1.0 {
        Ok(())
    } else {
        Err(GpError::Config(format!("alpha must lie in (0, 1], got {alpha}")))
    }
}

thread_local! {
    /// Covariance buffer reused by every marginal evaluated on this thread.
    static SCRATCH: RefCell<(Mat<f64>, MemBuffer)> = RefCell::new((Mat::zeros(0, 0), MemBuffer::new(faer::dyn_stack::StackReq::EMPTY)));
}

/// `exp(−36.85) ≈ 1e-16`.
const TINY_EXPONENT: f64 = 36.85;

/// Squared distances between design rows on the coordinates of a model,
/// computed once and reused across bandwidths.
#[derive(Debug, Clone)]
pub struct MarginalWorkspace {
    n: usize,
    /// Lower triangle packed by column: column j holds rows j..n.
    sqdist: Vec<f64>,
    y: Vec<f64>,
    empty_model: bool,
    dim: usize,
}

/// A log marginal likelihood and the jitter its factorization needed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Marginal {
    pub value: f64,
    pub jitter: f64,
}

impl MarginalWorkspace {
    pub fn new(data: &RegressionData, model: &ModelIndex) -> Result<Self, GpError> {
        let cols = model.columns();
        if let Some(&c) = cols.iter().find(|&&c| c >= data.p()) {
            return Err(GpError::Data(format!(
                "model uses covariate {} but data has only {}",
                c + 1,
                data.p()
            )));
        }
        let n = data.n();
        let mut sqdist = Vec::with_capacity(n * (n + 1) / 2);
        for j in 0..n {
            let rj = data.row(j);
            for i in j..n {
                let ri = data.row(i);
                sqdist.push(cols.iter().map(|&c| (ri[c] - rj[c]).powi(2)).sum());
            }
        }
        Ok(Self {
            n,
            sqdist,
            y: data.y().to_vec(),
            empty_model: cols.is_empty(),
            dim: cols.len(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes the lower triangle of `K_a + noise_var·I` into `m`.
    fn fill_covariance(&self, m: &mut Mat<f64>, a: f64, noise_var: f64, shift: f64) {
        let n = self.n;
        let a2 = a * a;
        let mut offset = 0;
        for j in 0..n {
            let len = n - j;
            let src = &self.sqdist[offset..offset + len];
            let col = m.col_mut(j).try_as_col_major_mut().expect("contiguous column").as_slice_mut();
            // entries below 1e-16 are set to 0: they are invisible next to the
            // noise diagonal and would otherwise drag subnormals into the factorization
            for (dst, d) in col[j..].iter_mut().zip(src) {
                let e = a2 * d;
                *dst = if e > TINY_EXPONENT { 0.0 } else { (-e).exp() };
            }
            col[j] += noise_var + shift;
            offset += len;
        }
    }

    /// `K_a + noise_var·I` with the upper triangle left zero.
    fn covariance(&self, a: f64, noise_var: f64) -> Mat<f64> {
        let mut m = Mat::<f64>::zeros(self.n, self.n);
        self.fill_covariance(&mut m, a, noise_var, 0.0);
        m
    }

    /// `log N(y; 0, K_a + s² I)`.
    pub fn log_normal(&self, a: f64, noise_var: f64, jitter: &JitterSchedule) -> Result<Marginal, GpError> {
        let n = self.n as f64;
        if self.n == 0 {
            return Ok(Marginal { value: 0.0, jitter: 0.0 });
        }
        if self.empty_model {
            let q: f64 = self.y.iter().map(|v| v * v).sum::<f64>() / noise_var;
            return Ok(Marginal {
                value: -0.5 * q - 0.5 * n * (TWO_PI * noise_var).ln(),
                jitter: 0.0,
            });
        }
        SCRATCH.with(|cell| {
            let mut scratch = cell.borrow_mut();
            let (m, buf) = &mut *scratch;
            if m.nrows() != self.n {
                *m = Mat::zeros(self.n, self.n);
                *buf = MemBuffer::new(llt::cholesky_in_place_scratch::<f64>(self.n, Par::Seq, Default::default()));
            }
            let trace = self.n as f64 * (1.0 + noise_var);
            let mut shifts = std::iter::once(0.0).chain(jitter.levels(trace));
            let mut last = 0.0;
            loop {
                let Some(shift) = shifts.next() else {
                    return Err(LinalgError::NotPositiveDefinite {
                        dim: self.n,
                        retries: jitter.max_retries,
                        last_jitter: last,
                    }
                    .into());
                };
                last = shift;
                self.fill_covariance(m, a, noise_var, shift);
                let ok = llt::cholesky_in_place(
                    m.as_mut(),
                    Default::default(),
                    Par::Seq,
                    MemStack::new(buf),
                    Default::default(),
                )
                .is_ok();
                if ok {
                    break;
                }
            }
            // L z = y by columns; quad form is ‖z‖²
            let mut z = self.y.clone();
            let mut log_det = 0.0;
            for j in 0..self.n {
                let col = m.col(j).try_as_col_major().expect("contiguous column").as_slice();
                z[j] /= col[j];
                log_det += 2.0 * col[j].ln();
                let zj = z[j];
                for (zi, l) in z[j + 1..].iter_mut().zip(&col[j + 1..]) {
                    *zi -= l * zj;
                }
            }
            let q: f64 = z.iter().map(|v| v * v).sum();
            Ok(Marginal {
                value: -0.5 * q - 0.5 * log_det - 0.5 * n * TWO_PI.ln(),
                jitter: last,
            })
        })
    }

    /// `log ∫ [Π N(y_i; f(x_i), σ²)]^α dGP_a(f)`.
    pub fn log_fractional_marginal(
        &self,
        a: f64,
        sigma: f64,
        alpha: f64,
        jitter: &JitterSchedule,
    ) -> Result<Marginal, GpError> {
        check_alpha(alpha)?;
        if !(a > 0.0) {
            return Err(GpError::Config(format!("bandwidth must be positive, got {a}")));
        }
        let m = self.log_normal(a, sigma * sigma / alpha, jitter)?;
        Ok(Marginal {
            value: m.value + log_fractional_constant(alpha, self.n, sigma),
            jitter: m.jitter,
        })
    }
}

pub fn log_fractional_marginal(
    data: &RegressionData,
    model: &ModelIndex,
    a: f64,
    cfg: &GpConfig,
    alpha: f64,
) -> Result<f64, GpError> {
    cfg.validate()?;
    let ws = MarginalWorkspace::new(data, model)?;
    Ok(ws
        .log_fractional_marginal(a, cfg.sigma, alpha, &JitterSchedule::default())?
        .value)
}

/// Log density of `A` on the log scale (`u = log a`) when `A^d ~ Gamma`.
fn log_bandwidth_prior_in_log_a(a: f64, d: usize, shape: f64, scale: f64) -> f64 {
    let df = d as f64;
    // π_U(u) = g(a^d) · d · a^d
    gamma_ln_pdf(a.powf(df), shape, scale) + df.ln() + df * a.ln()
}

/// Trapezoid weights in `log a` combined with prior density, normalized to
/// sum to one over the grid.
pub fn bandwidth_log_weights(nodes: &[f64], d: usize, cfg: &GpConfig) -> Vec<f64> {
    if nodes.len() == 1 {
        return vec![0.0];
    }
    let k = nodes.len();
    let raw: Vec<f64> = nodes
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let left = if i > 0 { (a / nodes[i - 1]).ln() } else { 0.0 };
            let right = if i + 1 < k { (nodes[i + 1] / a).ln() } else { 0.0 };
            (0.5 * (left + right)).ln() + log_bandwidth_prior_in_log_a(a, d, cfg.bandwidth_shape, cfg.bandwidth_scale)
        })
        .collect();
    let z = log_sum_exp(&raw);
    raw.into_iter().map(|w| w - z).collect()
}

/// Evidence of one model after integrating the bandwidth, with per-node detail.
#[derive(Debug, Clone)]
pub struct BandwidthIntegral {
    pub log_evidence: f64,
    pub nodes: Vec<f64>,
    /// Posterior weights over nodes.
    pub posterior: Vec<f64>,
    pub max_jitter: f64,
}

/// Integrates the fractional marginal over a given set of bandwidth nodes.
pub fn integrate_bandwidth_on_nodes(
    ws: &MarginalWorkspace,
    nodes: &[f64],
    cfg: &GpConfig,
    alpha: f64,
) -> Result<BandwidthIntegral, GpError> {
    let log_w = bandwidth_log_weights(nodes, ws.dim().max(1), cfg);
    let jitter = JitterSchedule::default();
    let mut terms = Vec::with_capacity(nodes.len());
    let mut max_jitter: f64 = 0.0;
    for (&a, lw) in nodes.iter().zip(&log_w) {
        let m = ws.log_fractional_marginal(a, cfg.sigma, alpha, &jitter)?;
        max_jitter = max_jitter.max(m.jitter);
        terms.push(m.value + lw);
    }
    Ok(BandwidthIntegral {
        log_evidence: log_sum_exp(&terms),
        nodes: nodes.to_vec(),
        posterior: softmax(&terms),
        max_jitter,
    })
}

/// `log ∫ exp{log_fractional_marginal(a)} π(a) da` over the truncated range.
/// The empty model has no bandwidth and returns its marginal directly.
pub fn integrate_bandwidth_ws(
    ws: &MarginalWorkspace,
    cfg: &GpConfig,
    alpha: f64,
) -> Result<BandwidthIntegral, GpError> {
    cfg.validate()?;
    if ws.dim() == 0 || ws.n() == 0 {
        let m = ws.log_fractional_marginal(1.0, cfg.sigma, alpha, &JitterSchedule::default())?;
        return Ok(BandwidthIntegral {
            log_evidence: m.value,
            nodes: vec![],
            posterior: vec![],
            max_jitter: m.jitter,
        });
    }
    let nodes = cfg.bandwidth_grid(ws.n(), ws.dim())?;
    integrate_bandwidth_on_nodes(ws, &nodes, cfg, alpha)
}

pub fn integrate_bandwidth(
    data: &RegressionData,
    model: &ModelIndex,
    cfg: &GpConfig,
    alpha: f64,
) -> Result<f64, GpError> {
    let ws = MarginalWorkspace::new(data, model)?;
    Ok(integrate_bandwidth_ws(&ws, cfg, alpha)?.log_evidence)
}

/// Squared-exponential Gram matrix of `points` (rows of length `dim`).
fn gram(points: &[f64], dim: usize, a: f64) -> Mat<f64> {
    let m = points.len() / dim.max(1);
    let a2 = a * a;
    Mat::from_fn(m, m, |i, j| {
        let d: f64 = (0..dim)
            .map(|k| (points[i * dim + k] - points[j * dim + k]).powi(2))
            .sum();
        (-a2 * d).exp()
    })
}

/// Draw from the GP prior at `points` (row-major, `|I|` columns), rejecting
/// draws whose sup norm exceeds the cap.
pub fn gp_prior_sample(
    model: &ModelIndex,
    a: f64,
    points: &[f64],
    cfg: &GpConfig,
    seed: u64,
) -> Result<Vec<f64>, GpError> {
    let dim = model.len();
    if dim == 0 {
        return Ok(vec![0.0; points.len()]);
    }
    if points.len() % dim != 0 {
        return Err(GpError::Data(format!("{} coordinates do not split into rows of {dim}", points.len())));
    }
    if let Some(v) = points.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(GpError::Data(format!("point coordinate {v} outside [0,1]")));
    }
    let chol = prior_factor(points, dim, a)?;
    let mut rng = rng_from_seed(seed);
    for _ in 0..cfg.max_rejections.max(1) {
        let z: Vec<f64> = (0..chol.dim()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let f = chol.mul_lower(&z);
        if f.iter().all(|v| v.abs() <= cfg.sup_norm_cap) {
            return Ok(f);
        }
    }
    Err(GpError::RejectionBudget {
        a_inf: cfg.sup_norm_cap,
        tries: cfg.max_rejections.max(1),
    })
}

/// Cholesky factor of the prior covariance at `points`, with a small fixed
/// ridge so near-duplicate points stay factorizable.
pub fn prior_factor(points: &[f64], dim: usize, a: f64) -> Result<Cholesky, GpError> {
    let k = gram(points, dim, a);
    Ok(Cholesky::factor(&k, &JitterSchedule::default()).or_else(|_| {
        let m = k.nrows() as f64;
        Cholesky::factor_shifted(&k, 1e-8 * m)
    })?)
}

/// `k_*ᵀ (K + (σ²/α) I)^{-1} y` at each test row (full `p`-column rows).
pub fn posterior_predictive_mean(
    data: &RegressionData,
    model: &ModelIndex,
    a: f64,
    cfg: &GpConfig,
    alpha: f64,
    test: &[f64],
) -> Result<Vec<f64>, GpError> {
    check_alpha(alpha)?;
    let p = data.p();
    if test.len() % p != 0 {
        return Err(GpError::Data(format!("test points must have {p} columns")));
    }
    let m = test.len() / p;
    let cols = model.columns();
    if cols.is_empty() || data.n() == 0 {
        return Ok(vec![0.0; m]);
    }
    let ws = MarginalWorkspace::new(data, model)?;
    let c = ws.covariance(a, cfg.sigma * cfg.sigma / alpha);
    let chol = Cholesky::factor(&c, &JitterSchedule::default())?;
    let weights = chol.solve(data.y());
    let a2 = a * a;
    Ok((0..m)
        .map(|t| {
            let xt = &test[t * p..(t + 1) * p];
            (0..data.n())
                .map(|i| {
                    let xi = data.row(i);
                    let d: f64 = cols.iter().map(|&c| (xt[c] - xi[c]).powi(2)).sum();
                    (-a2 * d).exp() * weights[i]
                })
                .sum()
        })
        .collect())
}

/// Predictive mean averaged over the bandwidth posterior on the grid.
pub fn averaged_predictive_mean(
    data: &RegressionData,
    model: &ModelIndex,
    cfg: &GpConfig,
    alpha: f64,
    test: &[f64],
) -> Result<Vec<f64>, GpError> {
    let ws = MarginalWorkspace::new(data, model)?;
    let bw = integrate_bandwidth_ws(&ws, cfg, alpha)?;
    let m = test.len() / data.p();
    if bw.nodes.is_empty() {
        return Ok(vec![0.0; m]);
    }
    let mut out = vec![0.0; m];
    for (&a, &w) in bw.nodes.iter().zip(&bw.posterior) {
        if w < 1e-10 {
            continue;
        }
        let pred = posterior_predictive_mean(data, model, a, cfg, alpha, test)?;
        for (o, v) in out.iter_mut().zip(pred) {
            *o += w * v;
        }
    }
    let total: f64 = bw.posterior.iter().filter(|w| **w >= 1e-10).sum();
    Ok(out.into_iter().map(|v| v / total).collect())
}
