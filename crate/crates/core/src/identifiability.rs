//! Identifiability gaps of a regression truth, KL-ball membership for
//! Gaussian regression, local Bayesian complexity and critical radii.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_space::ModelIndex;
use crate::numerics::quadrature::composite_gauss_legendre_unit;
use crate::numerics::special::{self, std_normal_cdf};
use crate::numerics::{derive_seed, rng_from_seed, SeededRng};

#[derive(Debug, Error)]
pub enum IdentifiabilityError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("coefficient quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("no sign change of complexity(eps) - alpha*eps^2 on [{lo}, {hi}] (values {g_lo}, {g_hi})")]
    NoBracket { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },
}

/// Built-in regression functions of the relevant coordinates.
#[derive(Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthFunction {
    /// `f ≡ value`.
    Constant { value: f64 },
    /// `√2 cos(kπ x)` of the single relevant coordinate.
    CosineMode { k: usize },
    /// `Σ_j amplitude · sin(2π·frequency·x_j)` over the relevant coordinates.
    AdditiveSine {
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default = "one_usize")]
        frequency: usize,
    },
    #[serde(skip)]
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl fmt::Debug for TruthFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TruthFunction::Constant { value } => write!(f, "Constant({value})"),
            TruthFunction::CosineMode { k } => write!(f, "CosineMode({k})"),
            TruthFunction::AdditiveSine { amplitude, frequency } => {
                write!(f, "AdditiveSine({amplitude}, {frequency})")
            }
            TruthFunction::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl TruthFunction {
    /// Evaluates at the relevant coordinates only.
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            TruthFunction::Constant { value } => *value,
            TruthFunction::CosineMode { k } => SQRT_2 * (*k as f64 * PI * z[0]).cos(),
            TruthFunction::AdditiveSine { amplitude, frequency } => z
                .iter()
                .map(|v| amplitude * (2.0 * PI * *frequency as f64 * v).sin())
                .sum(),
            TruthFunction::Custom(f) => f(z),
        }
    }
}

/// A regression truth depending on the covariates in `support`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub function: TruthFunction,
    pub support: ModelIndex,
    /// Declared smoothness.
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_beta() -> f64 {
    1.0
}

impl TruthSpec {
    pub fn new(function: TruthFunction, support: ModelIndex) -> Self {
        Self {
            function,
            support,
            beta: 1.0,
        }
    }

    /// Evaluates at a full covariate vector.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let z: Vec<f64> = self.support.columns().into_iter().map(|c| x[c]).collect();
        self.function.eval(&z)
    }

    /// Largest |f*| over a 10⁴-point probe of the relevant cube.
    pub fn probe_sup(&self) -> f64 {
        let d = self.support.len();
        if d == 0 {
            return self.function.eval(&[]).abs();
        }
        let per = (10_000f64.powf(1.0 / d as f64)).round().max(2.0) as usize;
        let total = per.pow(d as u32);
        let mut z = vec![0.0; d];
        let mut sup: f64 = 0.0;
        for mut k in 0..total {
            for slot in z.iter_mut() {
                *slot = (k % per) as f64 / (per - 1) as f64;
                k /= per;
            }
            sup = sup.max(self.function.eval(&z).abs());
        }
        sup
    }

    pub fn check_bounded(&self, cap: f64) -> Result<(), IdentifiabilityError> {
        let s = self.probe_sup();
        if s <= cap {
            Ok(())
        } else {
            Err(IdentifiabilityError::Invalid(format!("truth reaches {s} on the probe grid, above the cap {cap}")))
        }
    }
}

/// Cosine-basis gap with its per-coordinate pieces.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BasisGap {
    pub delta: f64,
    pub delta_sq: f64,
    /// `(covariate, Σ_{v_j ≠ 0} ⟨f*, e_v⟩²)` for each relevant covariate.
    pub per_coordinate: Vec<(usize, f64)>,
    /// Parseval residual `‖f*‖² − Σ_v ⟨f*, e_v⟩²`.
    pub tail: f64,
}

/// Tensor of coefficients `⟨f*, e_v⟩` for `v ∈ {0..trunc}^d`, computed on a
/// composite Gauss–Legendre grid with `panels` panels per axis.
fn basis_coefficients(f: &TruthFunction, d: usize, trunc: usize, panels: usize) -> (Vec<f64>, f64) {
    let (nodes, weights) = composite_gauss_legendre_unit(panels, 8);
    let g = nodes.len();
    let k = trunc + 1;
    // B[v][i] = w_i e_v(x_i)
    let basis: Vec<f64> = (0..k)
        .flat_map(|v| {
            let nodes = &nodes;
            let weights = &weights;
            (0..g).map(move |i| {
                let e = if v == 0 { 1.0 } else { SQRT_2 * (v as f64 * PI * nodes[i]).cos() };
                weights[i] * e
            })
        })
        .collect();
    // values on the full grid, axis 0 fastest
    let total = g.pow(d as u32);
    let mut vals = vec![0.0; total];
    let mut z = vec![0.0; d];
    let mut norm_sq = 0.0;
    for (idx, slot) in vals.iter_mut().enumerate() {
        let mut r = idx;
        let mut w = 1.0;
        for zz in z.iter_mut() {
            let i = r % g;
            *zz = nodes[i];
            w *= weights[i];
            r /= g;
        }
        *slot = f.eval(&z);
        norm_sq += w * *slot * *slot;
    }
    // contract the fastest axis and append the coefficient axis as the slowest;
    // after d rounds the layout is v_0 fastest again
    let mut cur = vals;
    for _ in 0..d {
        let rest = cur.len() / g;
        let mut next = vec![0.0; rest * k];
        for r in 0..rest {
            let src = &cur[r * g..(r + 1) * g];
            for v in 0..k {
                let b = &basis[v * g..(v + 1) * g];
                next[r + rest * v] = src.iter().zip(b).map(|(a, c)| a * c).sum();
            }
        }
        cur = next;
    }
    (cur, norm_sq)
}

/// Gap `δ² = min_j Σ_{v_j ≠ 0, ‖v‖_∞ ≤ trunc} ⟨f*, e_v⟩²` in the tensor cosine basis.
pub fn delta_basis(truth: &TruthSpec, trunc: usize) -> Result<BasisGap, IdentifiabilityError> {
    if trunc == 0 {
        return Err(IdentifiabilityError::Invalid("truncation must be at least 1".into()));
    }
    let d = truth.support.len();
    if d == 0 {
        return Ok(BasisGap {
            delta: 0.0,
            delta_sq: 0.0,
            per_coordinate: vec![],
            tail: 0.0,
        });
    }
    let panels = trunc + 8;
    let g = panels * 8;
    if (g as f64).powi(d as i32) > 2e7 {
        return Err(IdentifiabilityError::Quadrature(format!(
            "tensor grid of {g}^{d} points is too large; lower the truncation"
        )));
    }
    let (fine, norm_fine) = basis_coefficients(&truth.function, d, trunc, panels);
    let (coarse, _) = basis_coefficients(&truth.function, d, trunc, panels.div_ceil(2) + 4);
    let gap_of = |c: &[f64]| -> Vec<f64> {
        let k = trunc + 1;
        let mut per = vec![0.0; d];
        for (idx, v) in c.iter().enumerate() {
            let mut r = idx;
            for slot in per.iter_mut() {
                if r % k != 0 {
                    *slot += v * v;
                }
                r /= k;
            }
        }
        per
    };
    let per_fine = gap_of(&fine);
    let per_coarse = gap_of(&coarse);
    for (a, b) in per_fine.iter().zip(&per_coarse) {
        if (a - b).abs() > 1e-8 * (1.0 + a.abs()) {
            return Err(IdentifiabilityError::Quadrature(format!(
                "coefficient sums disagree between grids: {a} vs {b}"
            )));
        }
    }
    let captured: f64 = fine.iter().map(|v| v * v).sum();
    let delta_sq = per_fine.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    Ok(BasisGap {
        delta: delta_sq.sqrt(),
        delta_sq,
        per_coordinate: truth.support.indices().iter().copied().zip(per_fine).collect(),
        tail: (norm_fine - captured).max(0.0),
    })
}

/// Nested Monte Carlo estimate of `min_j E[Var[f* | X_{I*∖{j}}]]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McGap {
    pub delta_sq: f64,
    pub std_error: f64,
    /// `(covariate, estimate, se)` for each relevant covariate.
    pub per_coordinate: Vec<(usize, f64, f64)>,
}

pub fn delta_mc(truth: &TruthSpec, n_outer: usize, n_inner: usize, seed: u64) -> Result<McGap, IdentifiabilityError> {
    if n_outer < 100 || n_inner < 100 {
        return Err(IdentifiabilityError::Invalid(format!(
            "outer and inner counts must be at least 100, got {n_outer} and {n_inner}"
        )));
    }
    let d = truth.support.len();
    let mut per = Vec::with_capacity(d);
    for (pos, &cov) in truth.support.indices().iter().enumerate() {
        let vars: Vec<f64> = (0..n_outer)
            .into_par_iter()
            .map(|o| {
                let mut rng = rng_from_seed(derive_seed(seed, &[pos as u64, o as u64]));
                let mut z: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
                let inner: Vec<f64> = (0..n_inner)
                    .map(|_| {
                        z[pos] = rng.random::<f64>();
                        truth.function.eval(&z)
                    })
                    .collect();
                special::sample_variance(&inner)
            })
            .collect();
        per.push((cov, special::mean(&vars), special::std_error(&vars)));
    }
    let best = per
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or((0, 0.0, 0.0));
    Ok(McGap {
        delta_sq: best.1,
        std_error: best.2,
        per_coordinate: per,
    })
}

/// `Σ_i (f*(x_i) − f(x_i))²`.
pub fn squared_discrepancy(theta_vals: &[f64], star_vals: &[f64]) -> Result<f64, IdentifiabilityError> {
    if theta_vals.len() != star_vals.len() {
        return Err(IdentifiabilityError::LengthMismatch(theta_vals.len(), star_vals.len()));
    }
    Ok(theta_vals.iter().zip(star_vals).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Largest squared discrepancy inside the ball: `D = S/(2σ²)` and `V = S/σ²`
/// are both at most `nε²` exactly when `S ≤ σ² n ε²`.
pub fn ball_threshold(sigma: f64, n: usize, eps: f64) -> f64 {
    sigma * sigma * n as f64 * eps * eps
}

/// Membership of the closed KL ball of Gaussian regression at fixed design.
pub fn kl_ball_member(
    theta_vals: &[f64],
    star_vals: &[f64],
    sigma: f64,
    n: usize,
    eps: f64,
) -> Result<bool, IdentifiabilityError> {
    let s = squared_discrepancy(theta_vals, star_vals)?;
    let bound = n as f64 * eps * eps;
    let d = s / (2.0 * sigma * sigma);
    let v = s / (sigma * sigma);
    Ok(d <= bound && v <= bound)
}

/// Prior mass of the KL ball and the implied complexity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexityEstimate {
    pub eps: f64,
    pub n: usize,
    pub mass: f64,
    pub mass_se: f64,
    /// 95% Wilson interval for the mass.
    pub mass_ci: (f64, f64),
    pub complexity: f64,
    /// The mass hit the `1/n_mc` floor.
    pub censored: bool,
    pub draws: usize,
}

/// Squared discrepancies of prior draws, sorted once and shared across radii.
#[derive(Debug, Clone)]
pub struct DiscrepancyBuffer {
    sorted: Vec<f64>,
    sigma: f64,
    n: usize,
}

impl DiscrepancyBuffer {
    /// `draw` returns `Σ_i (f*(x_i) − f(x_i))²` for one prior draw.
    pub fn new<F>(draw: F, sigma: f64, n: usize, n_mc: usize, seed: u64) -> Result<Self, IdentifiabilityError>
    where
        F: Fn(&mut SeededRng) -> f64 + Sync,
    {
        if n_mc < 1000 {
            return Err(IdentifiabilityError::Invalid(format!("need at least 1000 prior draws, got {n_mc}")));
        }
        if !(sigma > 0.0) || n == 0 {
            return Err(IdentifiabilityError::Invalid("sigma and n must be positive".into()));
        }
        let mut sorted: Vec<f64> = (0..n_mc)
            .into_par_iter()
            .map(|k| draw(&mut rng_from_seed(derive_seed(seed, &[k as u64]))))
            .collect();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted, sigma, n })
    }

    pub fn draws(&self) -> usize {
        self.sorted.len()
    }

    pub fn estimate(&self, eps: f64) -> ComplexityEstimate {
        let t = ball_threshold(self.sigma, self.n, eps);
        let hits = self.sorted.partition_point(|s| *s <= t);
        let m = self.sorted.len() as f64;
        let mass = hits as f64 / m;
        let floor = 1.0 / m;
        ComplexityEstimate {
            eps,
            n: self.n,
            mass,
            mass_se: (mass * (1.0 - mass) / m).sqrt(),
            mass_ci: wilson(hits, self.sorted.len()),
            complexity: -(mass.max(floor)).ln() / self.n as f64,
            censored: mass < floor,
            draws: self.sorted.len(),
        }
    }

    /// Smallest ε with `complexity(ε) ≤ α ε²`, by bisection to `tol`.
    pub fn critical_radius(&self, alpha: f64, tol: f64) -> Result<f64, IdentifiabilityError> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(IdentifiabilityError::Invalid(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let g = |e: f64| self.estimate(e).complexity - alpha * e * e;
        let scale = self.sigma * self.sigma * self.n as f64;
        let s_min = self.sorted[0];
        let s_max = *self.sorted.last().expect("nonempty");
        let floor = 1e-12;
        let lo = ((s_min / scale).sqrt() * 0.5).max(floor);
        if g(lo) <= 0.0 {
            return Ok(lo);
        }
        let mut hi = ((s_max / scale).sqrt() * 1.01).max(2.0 * lo);
        while g(hi) > 0.0 {
            if hi > 1e12 {
                return Err(IdentifiabilityError::NoBracket {
                    lo,
                    hi,
                    g_lo: g(lo),
                    g_hi: g(hi),
                });
            }
            hi *= 2.0;
        }
        let (mut a, mut b) = (lo, hi);
        while b - a > tol {
            let mid = 0.5 * (a + b);
            if g(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(b)
    }
}

fn wilson(hits: usize, n: usize) -> (f64, f64) {
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = hits as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub fn local_complexity<F>(
    draw: F,
    sigma: f64,
    eps: f64,
    n: usize,
    n_mc: usize,
    seed: u64,
) -> Result<ComplexityEstimate, IdentifiabilityError>
where
    F: Fn(&mut SeededRng) -> f64 + Sync,
{
    Ok(DiscrepancyBuffer::new(draw, sigma, n, n_mc, seed)?.estimate(eps))
}

pub fn critical_radius<F>(
    draw: F,
    sigma: f64,
    alpha: f64,
    n: usize,
    n_mc: usize,
    seed: u64,
) -> Result<f64, IdentifiabilityError>
where
    F: Fn(&mut SeededRng) -> f64 + Sync,
{
    DiscrepancyBuffer::new(draw, sigma, n, n_mc, seed)?.critical_radius(alpha, 1e-3)
}

/// Gaussian location model: `y_i ~ N(θ, σ²)`, prior `θ ~ N(0, τ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianLocation {
    pub prior_sd: f64,
    pub truth: f64,
    pub noise_sd: f64,
}

impl Default for GaussianLocation {
    fn default() -> Self {
        Self {
            prior_sd: 1.0,
            truth: 0.0,
            noise_sd: 1.0,
        }
    }
}

impl GaussianLocation {
    /// `Σ_i (θ* − θ)² = n (θ* − θ)²` for one prior draw.
    pub fn draw_discrepancy(&self, n: usize, rng: &mut SeededRng) -> f64 {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        let theta = self.prior_sd * z;
        n as f64 * (theta - self.truth).powi(2)
    }

    /// Exact ball mass `P(|θ − θ*| ≤ σ ε)`.
    pub fn exact_mass(&self, eps: f64) -> f64 {
        let r = self.noise_sd * eps;
        std_normal_cdf((self.truth + r) / self.prior_sd) - std_normal_cdf((self.truth - r) / self.prior_sd)
    }

    pub fn exact_complexity(&self, eps: f64, n: usize) -> f64 {
        -self.exact_mass(eps).ln() / n as f64
    }

    /// Root of `exact_complexity(ε) = α ε²`.
    pub fn exact_critical_radius(&self, alpha: f64, n: usize) -> f64 {
        let g = |e: f64| self.exact_complexity(e, n) - alpha * e * e;
        let (mut a, mut b) = (1e-12, 1.0);
        while g(b) > 0.0 {
            b *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if g(mid) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth(f: TruthFunction, s: &[usize]) -> TruthSpec {
        TruthSpec::new(f, ModelIndex::new(s).unwrap())
    }

    fn sine() -> TruthSpec {
        truth(
            TruthFunction::AdditiveSine {
                amplitude: 1.0,
                frequency: 1,
            },
            &[1, 2],
        )
    }

    #[test]
    fn basis_gap_examples() {
        let c = delta_basis(&truth(TruthFunction::Constant { value: 3.0 }, &[2]), 8).unwrap();
        assert!(c.delta < 1e-12);
        let e = delta_basis(&truth(TruthFunction::CosineMode { k: 1 }, &[1]), 8).unwrap();
        assert!((e.delta_sq - 1.0).abs() < 1e-12);
        let s = delta_basis(&sine(), 32).unwrap();
        // sin(2πx) is not in the cosine span at finite order; tail carries the rest
        assert!((s.delta_sq + 0.5 * s.tail - 0.5).abs() < 1e-6, "{s:?}");
        assert!(s.delta_sq > 0.49);
    }

    #[test]
    fn basis_gap_of_cross_term() {
        // f = e_1(x1) e_2(x2): both coordinates carry the whole mass
        let f = TruthFunction::Custom(Arc::new(|z: &[f64]| 2.0 * (PI * z[0]).cos() * (2.0 * PI * z[1]).cos()));
        let g = delta_basis(&truth(f, &[1, 3]), 4).unwrap();
        assert!((g.delta_sq - 1.0).abs() < 1e-12);
        assert_eq!(g.per_coordinate.len(), 2);
        assert_eq!(g.per_coordinate[1].0, 3);
    }

    #[test]
    fn basis_gap_asymmetric_mass() {
        // f = e_1(x1) + 0.5 e_1(x2) → δ² = 0.25 (attained at coordinate 2)
        let f = TruthFunction::Custom(Arc::new(|z: &[f64]| {
            SQRT_2 * (PI * z[0]).cos() + 0.5 * SQRT_2 * (PI * z[1]).cos()
        }));
        let g = delta_basis(&truth(f, &[1, 2]), 4).unwrap();
        assert!((g.delta_sq - 0.25).abs() < 1e-12);
        assert!((g.per_coordinate[0].1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mc_gap_examples() {
        let c = delta_mc(&truth(TruthFunction::Constant { value: 1.0 }, &[1]), 200, 200, 1).unwrap();
        assert_eq!(c.delta_sq, 0.0);
        let s = delta_mc(&sine(), 400, 400, 2).unwrap();
        assert!((s.delta_sq - 0.5).abs() < 3.0 * s.std_error, "{s:?}");
        assert!(delta_mc(&sine(), 10, 400, 2).is_err());
    }

    #[test]
    fn ball_membership() {
        let f = [0.3, -0.2, 1.0];
        assert!(kl_ball_member(&f, &f, 1.0, 3, 1e-9).unwrap());
        // single point, V binds: S = σ² n ε² exactly
        let eps = 0.5;
        let g = eps;
        assert!(kl_ball_member(&[g], &[0.0], 1.0, 1, eps).unwrap());
        assert!(!kl_ball_member(&[g * 1.0001], &[0.0], 1.0, 1, eps).unwrap());
        // n = 10 constant gap g: member iff g² ≤ ε²
        let eps = 0.3;
        for &g in &[0.29, 0.3, 0.31] {
            let a = vec![g; 10];
            let b = vec![0.0; 10];
            assert_eq!(kl_ball_member(&a, &b, 1.0, 10, eps).unwrap(), g * g <= eps * eps);
        }
        assert!(matches!(
            kl_ball_member(&[0.0], &[0.0, 1.0], 1.0, 1, 0.1),
            Err(IdentifiabilityError::LengthMismatch(1, 2))
        ));
    }

    #[test]
    fn gaussian_location_mass_matches_closed_form() {
        let model = GaussianLocation::default();
        let n = 100;
        let buf = DiscrepancyBuffer::new(|r| model.draw_discrepancy(n, r), 1.0, n, 20_000, 3).unwrap();
        for eps in [0.05, 0.2, 0.8] {
            let est = buf.estimate(eps);
            let exact = model.exact_mass(eps);
            assert!((est.mass - exact).abs() <= 3.0 * est.mass_se.max(1e-4), "eps={eps}");
        }
        let huge = buf.estimate(1e6);
        assert_eq!(huge.mass, 1.0);
        assert_eq!(huge.complexity, 0.0);
        let tiny = buf.estimate(1e-9);
        assert!(tiny.censored);
    }

    #[test]
    fn complexity_monotone_in_eps() {
        let model = GaussianLocation::default();
        let buf = DiscrepancyBuffer::new(|r| model.draw_discrepancy(50, r), 1.0, 50, 5000, 4).unwrap();
        let mut prev = f64::INFINITY;
        for k in 1..200 {
            let c = buf.estimate(k as f64 * 0.01);
            assert!(c.complexity <= prev);
            prev = c.complexity;
        }
    }

    #[test]
    fn critical_radius_examples() {
        // point mass at the truth: complexity ≡ 0 → lower floor
        let buf = DiscrepancyBuffer::new(|_| 0.0, 1.0, 100, 1000, 1).unwrap();
        assert!(buf.critical_radius(0.5, 1e-3).unwrap() <= 1e-12);
        let model = GaussianLocation::default();
        let n = 1000;
        let buf = DiscrepancyBuffer::new(|r| model.draw_discrepancy(n, r), 1.0, n, 50_000, 5).unwrap();
        let got = buf.critical_radius(0.5, 1e-4).unwrap();
        let exact = model.exact_critical_radius(0.5, n);
        assert!(((got - exact) / exact).abs() < 0.1, "{got} vs {exact}");
        let doubled = buf.critical_radius(0.99, 1e-4).unwrap();
        assert!(doubled <= got);
    }

    #[test]
    fn probe_sup_bounds() {
        assert!((sine().probe_sup() - 2.0).abs() < 1e-2);
        assert!(sine().check_bounded(10.0).is_ok());
        assert!(sine().check_bounded(1.0).is_err());
    }
}
