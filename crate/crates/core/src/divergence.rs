//! Discrepancies between evaluable densities: Hellinger distance, KL
//! divergence, the centred second moment `V` of the log ratio, Rényi
//! divergence of order α and the α-affinity.
//!
//! Every measure has a quadrature route and a Monte Carlo route. Quadrature
//! integrands are written so that they are pointwise nonnegative and vanish
//! identically when `p = q`:
//!
//! ```text
//! h²      = ∫ (√p − √q)²
//! KL      = ∫ p log(p/q) − p + q
//! 1 − A_α = ∫ α p + (1 − α) q − p^α q^{1−α}
//! ```
//!
//! Product densities on boxes are handled coordinatewise (KL and `V` add,
//! affinities multiply).

use std::fmt;
use std::sync::Arc;

use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::special::{self, LN_SQRT_2PI};
use crate::numerics::{rng_from_seed, Quadrature, QuadratureError, SeededRng};

/// Half-width, in standard deviations, of the window used for Gaussians.
pub const GAUSSIAN_WINDOW_SDS: f64 = 10.0;
const LAPLACE_WINDOW_SCALES: f64 = 40.0;

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("order alpha must lie strictly inside (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("densities live in different dimensions ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("density has no sampler; Monte Carlo estimation needs one")]
    NoSampler,
    #[error("Monte Carlo sample size must be at least 2, got {0}")]
    TooFewDraws(usize),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// Built-in one-dimensional families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Normal { mean: f64, sd: f64 },
    Uniform { lo: f64, hi: f64 },
    Laplace { loc: f64, scale: f64 },
}

impl Family {
    pub fn validate(&self) -> Result<(), DivergenceError> {
        let ok = match *self {
            Family::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Family::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && hi > lo,
            Family::Laplace { loc, scale } => loc.is_finite() && scale.is_finite() && scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DivergenceError::InvalidDensity(format!("bad parameters {self:?}")))
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match *self {
            Family::Normal { mean, sd } => special::normal_ln_pdf(x, mean, sd),
            Family::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    -(hi - lo).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Family::Laplace { loc, scale } => -(x - loc).abs() / scale - (2.0 * scale).ln(),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Interval outside which the density is exactly zero.
    pub fn hard_support(&self) -> (f64, f64) {
        match *self {
            Family::Uniform { lo, hi } => (lo, hi),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// Finite window carrying all but a negligible amount of mass.
    pub fn window(&self) -> (f64, f64) {
        match *self {
            Family::Normal { mean, sd } => {
                (mean - GAUSSIAN_WINDOW_SDS * sd, mean + GAUSSIAN_WINDOW_SDS * sd)
            }
            Family::Uniform { lo, hi } => (lo, hi),
            Family::Laplace { loc, scale } => {
                (loc - LAPLACE_WINDOW_SCALES * scale, loc + LAPLACE_WINDOW_SCALES * scale)
            }
        }
    }

    /// Points where the density is not smooth.
    fn kinks(&self) -> Vec<f64> {
        match *self {
            Family::Normal { .. } => vec![],
            Family::Uniform { lo, hi } => vec![lo, hi],
            Family::Laplace { loc, .. } => vec![loc],
        }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> f64 {
        match *self {
            Family::Normal { mean, sd } => Normal::new(mean, sd).expect("validated").sample(rng),
            Family::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Family::Laplace { loc, scale } => {
                let u: f64 = rng.random::<f64>() - 0.5;
                loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
        }
    }
}

type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Sampler = Arc<dyn Fn(&mut SeededRng) -> f64 + Send + Sync>;

/// A user-supplied density on a bounded interval.
#[derive(Clone)]
pub struct CustomDensity {
    pub evaluator: Evaluator,
    pub support: (f64, f64),
    pub sampler: Option<Sampler>,
}

impl fmt::Debug for CustomDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDensity")
            .field("support", &self.support)
            .field("has_sampler", &self.sampler.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
enum Component {
    Family(Family),
    Custom(CustomDensity),
}

impl Component {
    fn validate(&self) -> Result<(), DivergenceError> {
        match self {
            Component::Family(f) => f.validate(),
            Component::Custom(c) => {
                let (lo, hi) = c.support;
                if lo.is_finite() && hi.is_finite() && hi > lo {
                    Ok(())
                } else {
                    Err(DivergenceError::InvalidDensity(format!("bad custom support {:?}", c.support)))
                }
            }
        }
    }

    fn pdf(&self, x: f64) -> f64 {
        match self {
            Component::Family(f) => f.pdf(x),
            Component::Custom(c) => {
                if x < c.support.0 || x > c.support.1 {
                    0.0
                } else {
                    (c.evaluator)(x)
                }
            }
        }
    }

    fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            Component::Family(f) => f.ln_pdf(x),
            Component::Custom(_) => self.pdf(x).ln(),
        }
    }

    fn hard_support(&self) -> (f64, f64) {
        match self {
            Component::Family(f) => f.hard_support(),
            Component::Custom(c) => c.support,
        }
    }

    fn window(&self) -> (f64, f64) {
        match self {
            Component::Family(f) => f.window(),
            Component::Custom(c) => c.support,
        }
    }

    fn kinks(&self) -> Vec<f64> {
        match self {
            Component::Family(f) => f.kinks(),
            Component::Custom(c) => vec![c.support.0, c.support.1],
        }
    }

    fn sample(&self, rng: &mut SeededRng) -> Result<f64, DivergenceError> {
        match self {
            Component::Family(f) => Ok(f.sample(rng)),
            Component::Custom(c) => c.sampler.as_ref().map(|s| s(rng)).ok_or(DivergenceError::NoSampler),
        }
    }
}

/// A density on ℝ or a product density on a box.
#[derive(Debug, Clone)]
pub struct Density {
    components: Vec<Component>,
}

impl Density {
    pub fn family(f: Family) -> Self {
        Self {
            components: vec![Component::Family(f)],
        }
    }

    pub fn normal(mean: f64, sd: f64) -> Self {
        Self::family(Family::Normal { mean, sd })
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::family(Family::Uniform { lo, hi })
    }

    pub fn laplace(loc: f64, scale: f64) -> Self {
        Self::family(Family::Laplace { loc, scale })
    }

    /// Independent product of one-dimensional families.
    pub fn product(families: Vec<Family>) -> Self {
        Self {
            components: families.into_iter().map(Component::Family).collect(),
        }
    }

    pub fn custom(evaluator: Evaluator, support: (f64, f64), sampler: Option<Sampler>) -> Self {
        Self {
            components: vec![Component::Custom(CustomDensity {
                evaluator,
                support,
                sampler,
            })],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    /// Log density at a point of matching dimension.
    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.components.iter().zip(x).map(|(c, &v)| c.ln_pdf(v)).sum()
    }

    pub fn sample(&self, rng: &mut SeededRng) -> Result<Vec<f64>, DivergenceError> {
        self.components.iter().map(|c| c.sample(rng)).collect()
    }

    fn validate(&self) -> Result<(), DivergenceError> {
        if self.components.is_empty() {
            return Err(DivergenceError::InvalidDensity("zero-dimensional density".into()));
        }
        self.components.iter().try_for_each(Component::validate)
    }
}

/// Serializable description of a density, used by configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DensitySpec {
    Single(Family),
    Product { product: Vec<Family> },
}

impl From<&DensitySpec> for Density {
    fn from(spec: &DensitySpec) -> Self {
        match spec {
            DensitySpec::Single(f) => Density::family(*f),
            DensitySpec::Product { product } => Density::product(product.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Quadrature,
    MonteCarlo,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Quadrature => "quadrature",
            EstimatorKind::MonteCarlo => "monte-carlo",
        })
    }
}

/// How to evaluate a measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    Quadrature(Quadrature),
    MonteCarlo { draws: usize, seed: u64 },
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Quadrature(default_quadrature())
    }
}

pub fn default_quadrature() -> Quadrature {
    Quadrature {
        abs_tol: 1e-9,
        rel_tol: 1e-12,
        max_panels: 20_000,
        initial_panels: 8,
    }
}

/// A computed discrepancy. Infinite values are a separate variant so they
/// cannot be averaged by accident.
#[derive(Debug, Clone, PartialEq)]
pub enum DivergenceValue {
    Finite {
        value: f64,
        std_error: f64,
        estimator: EstimatorKind,
    },
    Infinite {
        estimator: EstimatorKind,
        diagnostic: String,
    },
}

impl DivergenceValue {
    fn quadrature(value: f64) -> Self {
        DivergenceValue::Finite {
            value,
            std_error: 0.0,
            estimator: EstimatorKind::Quadrature,
        }
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            DivergenceValue::Finite { value, .. } => Some(*value),
            DivergenceValue::Infinite { .. } => None,
        }
    }

    /// Finite value; panics on the infinite sentinel.
    pub fn expect_finite(&self) -> f64 {
        self.value().unwrap_or_else(|| panic!("expected a finite divergence, got {self:?}"))
    }

    pub fn std_error(&self) -> f64 {
        match self {
            DivergenceValue::Finite { std_error, .. } => *std_error,
            DivergenceValue::Infinite { .. } => 0.0,
        }
    }

    pub fn estimator(&self) -> EstimatorKind {
        match self {
            DivergenceValue::Finite { estimator, .. } | DivergenceValue::Infinite { estimator, .. } => *estimator,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, DivergenceValue::Infinite { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Hellinger,
    Kl,
    V,
    Renyi,
    Affinity,
}

impl Measure {
    pub fn name(&self) -> &'static str {
        match self {
            Measure::Hellinger => "hellinger",
            Measure::Kl => "kl",
            Measure::V => "v",
            Measure::Renyi => "renyi",
            Measure::Affinity => "affinity",
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), DivergenceError> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(DivergenceError::InvalidAlpha(alpha))
    }
}

fn check_pair(p: &Density, q: &Density) -> Result<(), DivergenceError> {
    p.validate()?;
    q.validate()?;
    if p.dim() != q.dim() {
        return Err(DivergenceError::DimensionMismatch(p.dim(), q.dim()));
    }
    Ok(())
}

/// Per-coordinate integration geometry for a pair of components.
struct Pair<'a> {
    p: &'a Component,
    q: &'a Component,
}

impl<'a> Pair<'a> {
    fn overlap_len(&self) -> f64 {
        let (pl, ph) = self.p.hard_support();
        let (ql, qh) = self.q.hard_support();
        (ph.min(qh) - pl.max(ql)).max(0.0)
    }

    /// Breakpoints covering both windows, clipped to `range`.
    fn breaks(&self, range: (f64, f64)) -> Vec<f64> {
        let mut pts = vec![range.0, range.1];
        pts.extend(
            self.p
                .kinks()
                .into_iter()
                .chain(self.q.kinks())
                .filter(|x| *x > range.0 && *x < range.1),
        );
        pts
    }

    fn union_window(&self) -> (f64, f64) {
        let (a, b) = self.p.window();
        let (c, d) = self.q.window();
        (a.min(c), b.max(d))
    }

    /// The window of `p`, widened to its neighbour only where `q` matters.
    fn p_window(&self) -> (f64, f64) {
        self.p.window()
    }

    /// Does `p` put mass where `q` vanishes?
    fn p_escapes_q(&self) -> Option<String> {
        let (pl, ph) = self.p.hard_support();
        let (ql, qh) = self.q.hard_support();
        let (wl, wh) = self.p.window();
        let lo = pl.max(wl);
        let hi = ph.min(wh);
        if lo < ql - 1e-12 || hi > qh + 1e-12 {
            Some(format!(
                "support of p [{lo}, {hi}] is not contained in support of q [{ql}, {qh}]"
            ))
        } else {
            None
        }
    }
}

/// Evaluates a component, rejecting negative values.
fn checked_pdf(c: &Component, x: f64, bad: &std::cell::Cell<Option<f64>>) -> f64 {
    let v = c.pdf(x);
    if v < 0.0 || v.is_nan() {
        bad.set(Some(x));
        0.0
    } else {
        v
    }
}

fn negative_error(at: Option<f64>) -> Result<(), DivergenceError> {
    match at {
        Some(x) => Err(DivergenceError::InvalidDensity(format!(
            "density evaluates to a negative or NaN value at x = {x}"
        ))),
        None => Ok(()),
    }
}

/// `∫ (√p − √q)²` for one coordinate.
fn squared_hellinger_1d(pair: &Pair<'_>, quad: &Quadrature) -> Result<f64, DivergenceError> {
    if pair.overlap_len() == 0.0 {
        return Ok(2.0);
    }
    let range = pair.union_window();
    let bad = std::cell::Cell::new(None);
    let r = quad.integrate_with_breaks(
        |x| {
            let a = checked_pdf(pair.p, x, &bad).sqrt();
            let b = checked_pdf(pair.q, x, &bad).sqrt();
            (a - b) * (a - b)
        },
        &pair.breaks(range),
    )?;
    negative_error(bad.get())?;
    Ok(r.value.clamp(0.0, 2.0))
}

/// `1 − A_α` for one coordinate, via the nonnegative AM–GM gap integrand.
fn affinity_gap_1d(pair: &Pair<'_>, alpha: f64, quad: &Quadrature) -> Result<f64, DivergenceError> {
    if pair.overlap_len() == 0.0 {
        return Ok(1.0);
    }
    let range = pair.union_window();
    let bad = std::cell::Cell::new(None);
    let r = quad.integrate_with_breaks(
        |x| {
            let pv = checked_pdf(pair.p, x, &bad);
            let qv = checked_pdf(pair.q, x, &bad);
            let geo = if pv > 0.0 && qv > 0.0 {
                (alpha * pair.p.ln_pdf(x) + (1.0 - alpha) * pair.q.ln_pdf(x)).exp()
            } else {
                0.0
            };
            (alpha * pv + (1.0 - alpha) * qv - geo).max(0.0)
        },
        &pair.breaks(range),
    )?;
    negative_error(bad.get())?;
    Ok(r.value.clamp(0.0, 1.0))
}

enum Kl1d {
    Finite(f64),
    Infinite(String),
}

fn kl_1d(pair: &Pair<'_>, quad: &Quadrature) -> Result<Kl1d, DivergenceError> {
    if let Some(diag) = pair.p_escapes_q() {
        return Ok(Kl1d::Infinite(diag));
    }
    let range = pair.union_window();
    let bad = std::cell::Cell::new(None);
    let escaped = std::cell::Cell::new(None);
    let r = quad.integrate_with_breaks(
        |x| {
            let pv = checked_pdf(pair.p, x, &bad);
            let qv = checked_pdf(pair.q, x, &bad);
            if pv <= 0.0 {
                return qv;
            }
            let lq = pair.q.ln_pdf(x);
            if lq == f64::NEG_INFINITY {
                if pv > 1e-12 {
                    escaped.set(Some(x));
                }
                return 0.0;
            }
            (pv * (pair.p.ln_pdf(x) - lq) - pv + qv).max(0.0)
        },
        &pair.breaks(range),
    )?;
    negative_error(bad.get())?;
    if let Some(x) = escaped.get() {
        return Ok(Kl1d::Infinite(format!("q vanishes at x = {x} where p > 1e-12")));
    }
    Ok(Kl1d::Finite(r.value.max(0.0)))
}

/// Variance under `p` of `log(p/q)` for one coordinate, given its mean.
fn v_1d(pair: &Pair<'_>, kl: f64, quad: &Quadrature) -> Result<f64, DivergenceError> {
    let range = pair.p_window();
    let bad = std::cell::Cell::new(None);
    let r = quad.integrate_with_breaks(
        |x| {
            let pv = checked_pdf(pair.p, x, &bad);
            if pv <= 0.0 {
                return 0.0;
            }
            let d = pair.p.ln_pdf(x) - pair.q.ln_pdf(x) - kl;
            pv * d * d
        },
        &pair.breaks(range),
    )?;
    negative_error(bad.get())?;
    Ok(r.value.max(0.0))
}

fn pairs<'a>(p: &'a Density, q: &'a Density) -> impl Iterator<Item = Pair<'a>> {
    p.components
        .iter()
        .zip(&q.components)
        .map(|(p, q)| Pair { p, q })
}

/// Monte Carlo draws of `log p(X) − log q(X)` with `X ~ p`.
fn log_ratio_draws(p: &Density, q: &Density, draws: usize, seed: u64) -> Result<Vec<f64>, DivergenceError> {
    if draws < 2 {
        return Err(DivergenceError::TooFewDraws(draws));
    }
    let mut rng = rng_from_seed(seed);
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        let x = p.sample(&mut rng)?;
        out.push(p.ln_pdf(&x) - q.ln_pdf(&x));
    }
    Ok(out)
}

fn mc_value(value: f64, std_error: f64) -> DivergenceValue {
    DivergenceValue::Finite {
        value,
        std_error,
        estimator: EstimatorKind::MonteCarlo,
    }
}

/// Hellinger distance `h(p, q) = (∫(√p − √q)²)^{1/2}`.
pub fn hellinger(p: &Density, q: &Density, est: &Estimator) -> Result<DivergenceValue, DivergenceError> {
    check_pair(p, q)?;
    match est {
        Estimator::Quadrature(quad) => {
            // h² = 2(1 − Π BC_i) with BC_i = 1 − h_i²/2.
            let mut bc = 1.0;
            let mut gap_sum = 0.0;
            let mut single = 0.0;
            for pair in pairs(p, q) {
                let h2 = squared_hellinger_1d(&pair, quad)?;
                single = h2;
                gap_sum += h2;
                bc *= 1.0 - 0.5 * h2;
            }
            let h2 = if p.dim() == 1 {
                single
            } else if gap_sum == 0.0 {
                0.0
            } else {
                2.0 * (1.0 - bc)
            };
            Ok(DivergenceValue::quadrature(h2.clamp(0.0, 2.0).sqrt()))
        }
        Estimator::MonteCarlo { draws, seed } => {
            let lr = log_ratio_draws(p, q, *draws, *seed)?;
            let terms: Vec<f64> = lr.iter().map(|l| (-0.5 * l).exp()).collect();
            let bc = special::mean(&terms).min(1.0);
            let se_bc = special::std_error(&terms);
            let h = (2.0 * (1.0 - bc)).max(0.0).sqrt();
            let se = if h > 0.0 { se_bc / h } else { se_bc.sqrt() };
            Ok(mc_value(h, se))
        }
    }
}

/// Kullback–Leibler divergence `∫ p log(p/q)`.
pub fn kl(p: &Density, q: &Density, est: &Estimator) -> Result<DivergenceValue, DivergenceError> {
    check_pair(p, q)?;
    match est {
        Estimator::Quadrature(quad) => {
            let mut total = 0.0;
            for pair in pairs(p, q) {
                match kl_1d(&pair, quad)? {
                    Kl1d::Finite(v) => total += v,
                    Kl1d::Infinite(diagnostic) => {
                        return Ok(DivergenceValue::Infinite {
                            estimator: EstimatorKind::Quadrature,
                            diagnostic,
                        })
                    }
                }
            }
            Ok(DivergenceValue::quadrature(total))
        }
        Estimator::MonteCarlo { draws, seed } => {
            let lr = log_ratio_draws(p, q, *draws, *seed)?;
            if let Some(x) = lr.iter().find(|v| v.is_infinite()) {
                return Ok(DivergenceValue::Infinite {
                    estimator: EstimatorKind::MonteCarlo,
                    diagnostic: format!("log ratio {x} observed in a draw from p"),
                });
            }
            Ok(mc_value(special::mean(&lr), special::std_error(&lr)))
        }
    }
}

/// `V(p, q) = ∫ p |log(p/q) − D(p, q)|²`, the variance under `p` of the log ratio.
pub fn v_discrepancy(p: &Density, q: &Density, est: &Estimator) -> Result<DivergenceValue, DivergenceError> {
    check_pair(p, q)?;
    match est {
        Estimator::Quadrature(quad) => {
            let mut total = 0.0;
            for pair in pairs(p, q) {
                let k = match kl_1d(&pair, quad)? {
                    Kl1d::Finite(v) => v,
                    Kl1d::Infinite(diagnostic) => {
                        return Ok(DivergenceValue::Infinite {
                            estimator: EstimatorKind::Quadrature,
                            diagnostic,
                        })
                    }
                };
                total += v_1d(&pair, k, quad)?;
            }
            Ok(DivergenceValue::quadrature(total))
        }
        Estimator::MonteCarlo { draws, seed } => {
            let lr = log_ratio_draws(p, q, *draws, *seed)?;
            if lr.iter().any(|v| v.is_infinite()) {
                return Ok(DivergenceValue::Infinite {
                    estimator: EstimatorKind::MonteCarlo,
                    diagnostic: "infinite log ratio in a draw from p".into(),
                });
            }
            let m = special::mean(&lr);
            let sq: Vec<f64> = lr.iter().map(|v| (v - m) * (v - m)).collect();
            let n = lr.len() as f64;
            let var = sq.iter().sum::<f64>() / (n - 1.0);
            Ok(mc_value(var, special::std_error(&sq)))
        }
    }
}

/// α-affinity `A_α = ∫ p^α q^{1−α}`.
pub fn affinity(p: &Density, q: &Density, alpha: f64, est: &Estimator) -> Result<DivergenceValue, DivergenceError> {
    check_alpha(alpha)?;
    check_pair(p, q)?;
    match est {
        Estimator::Quadrature(quad) => {
            let mut a = 1.0;
            for pair in pairs(p, q) {
                a *= 1.0 - affinity_gap_1d(&pair, alpha, quad)?;
            }
            Ok(DivergenceValue::quadrature(a.clamp(0.0, 1.0)))
        }
        Estimator::MonteCarlo { draws, seed } => {
            let lr = log_ratio_draws(p, q, *draws, *seed)?;
            let terms: Vec<f64> = lr.iter().map(|l| (-(1.0 - alpha) * l).exp()).collect();
            Ok(mc_value(special::mean(&terms), special::std_error(&terms)))
        }
    }
}

/// Rényi divergence `D_α = (α − 1)^{-1} log A_α`.
pub fn renyi(p: &Density, q: &Density, alpha: f64, est: &Estimator) -> Result<DivergenceValue, DivergenceError> {
    check_alpha(alpha)?;
    check_pair(p, q)?;
    match est {
        Estimator::Quadrature(quad) => {
            // Sum of log(1 − gap_i) keeps precision when every gap is tiny.
            let mut log_a = 0.0;
            for pair in pairs(p, q) {
                let gap = affinity_gap_1d(&pair, alpha, quad)?;
                if gap >= 1.0 {
                    return Ok(DivergenceValue::Infinite {
                        estimator: EstimatorKind::Quadrature,
                        diagnostic: "densities have disjoint supports (affinity 0)".into(),
                    });
                }
                log_a += (-gap).ln_1p();
            }
            Ok(DivergenceValue::quadrature((log_a / (alpha - 1.0)).max(0.0)))
        }
        Estimator::MonteCarlo { .. } => {
            let a = affinity(p, q, alpha, est)?;
            let (av, ase) = (a.expect_finite(), a.std_error());
            if av <= 0.0 {
                return Ok(DivergenceValue::Infinite {
                    estimator: EstimatorKind::MonteCarlo,
                    diagnostic: "Monte Carlo affinity is zero".into(),
                });
            }
            Ok(mc_value(av.ln() / (alpha - 1.0), ase / (av * (1.0 - alpha))))
        }
    }
}

/// Dispatches on a [`Measure`]. `alpha` is ignored by measures without an order.
pub fn compute(
    measure: Measure,
    p: &Density,
    q: &Density,
    alpha: f64,
    est: &Estimator,
) -> Result<DivergenceValue, DivergenceError> {
    match measure {
        Measure::Hellinger => hellinger(p, q, est),
        Measure::Kl => kl(p, q, est),
        Measure::V => v_discrepancy(p, q, est),
        Measure::Renyi => renyi(p, q, alpha, est),
        Measure::Affinity => affinity(p, q, alpha, est),
    }
}

/// Monte Carlo check of `E_{p*}[(p_θ/p*)^α] = exp{−(1−α) D_α(p_θ, p*)}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FractionalIdentityReport {
    pub alpha: f64,
    pub draws: usize,
    pub mean: f64,
    pub std_error: f64,
    pub theory: f64,
    /// `|mean − theory| ≤ 3 se` (or equality to 1e-12 when degenerate).
    pub pass: bool,
    /// The ratio had zero sample variance.
    pub degenerate: bool,
}

pub fn fractional_identity_check(
    model: &Density,
    truth: &Density,
    alpha: f64,
    draws: usize,
    seed: u64,
) -> Result<FractionalIdentityReport, DivergenceError> {
    check_alpha(alpha)?;
    check_pair(model, truth)?;
    // draws of log p*(X) − log p_θ(X), X ~ p*
    let lr = log_ratio_draws(truth, model, draws, seed)?;
    let ratios: Vec<f64> = lr.iter().map(|l| (-alpha * l).exp()).collect();
    let mean = special::mean(&ratios);
    let std_error = special::std_error(&ratios);
    let d = renyi(model, truth, alpha, &Estimator::default())?;
    let theory = match d.value() {
        Some(v) => (-(1.0 - alpha) * v).exp(),
        None => 0.0,
    };
    let degenerate = std_error == 0.0;
    let pass = if degenerate {
        (mean - theory).abs() <= 1e-12
    } else {
        (mean - theory).abs() <= 3.0 * std_error
    };
    Ok(FractionalIdentityReport {
        alpha,
        draws,
        mean,
        std_error,
        theory,
        pass,
        degenerate,
    })
}

/// Normalizing mass of a density over its window (≈ 1 for valid densities).
pub fn total_mass(d: &Density) -> Result<f64, DivergenceError> {
    d.validate()?;
    let quad = default_quadrature();
    let mut mass = 1.0;
    for c in &d.components {
        let range = c.window();
        let mut pts = vec![range.0, range.1];
        pts.extend(c.kinks().into_iter().filter(|x| *x > range.0 && *x < range.1));
        mass *= quad.integrate_with_breaks(|x| c.pdf(x), &pts)?.value;
    }
    Ok(mass)
}

/// Standard normal log density, exposed for oracles.
pub fn std_normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - LN_SQRT_2PI
}
