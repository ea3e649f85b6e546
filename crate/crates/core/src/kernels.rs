//! Stationary kernels on [0,1]: Fourier-coefficient eigensystems, spectral
//! densities, asymptotic eigenvalue comparators, tensor products and a
//! covering-entropy lower bound, plus a Gram-matrix eigenvalue oracle.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use faer::Mat;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::linalg::symmetric_eigenvalues_desc;
use crate::numerics::special::{ln_gamma, matern_correlation};
use crate::numerics::{LinalgError, Quadrature, QuadratureError};

/// Default number of eigenvalues kept.
pub const DEFAULT_TRUNCATION: usize = 400;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid kernel parameter: {0}")]
    InvalidParameter(String),
    #[error("operation needs a built-in kernel family, got a user-defined kernel")]
    UnsupportedFamily,
    #[error("index out of range: {0}")]
    OutOfRange(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("Fourier coefficient {index} failed to converge: {source}")]
    Quadrature {
        index: usize,
        #[source]
        source: QuadratureError,
    },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern { nu: f64 },
    UserDefined,
}

/// A one-dimensional stationary kernel `K(x, y) = k(x − y)`.
#[derive(Clone)]
pub struct StationaryKernel {
    family: KernelFamily,
    a: f64,
    user: Option<Arc<dyn Fn(f64) -> f64 + Send + Sync>>,
}

impl fmt::Debug for StationaryKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StationaryKernel")
            .field("family", &self.family)
            .field("a", &self.a)
            .finish()
    }
}

impl StationaryKernel {
    /// `k(t) = exp(−a² t²)`.
    pub fn squared_exponential(a: f64) -> Result<Self, KernelError> {
        check_positive("a", a)?;
        Ok(Self {
            family: KernelFamily::SquaredExponential,
            a,
            user: None,
        })
    }

    /// `k(t) = 2^{1−ν}/Γ(ν) (a|t|)^ν K_ν(a|t|)`. Infinite smoothness is
    /// rejected; use the squared exponential instead.
    pub fn matern(a: f64, nu: f64) -> Result<Self, KernelError> {
        check_positive("a", a)?;
        if nu.is_infinite() {
            return Err(KernelError::InvalidParameter(
                "nu = inf is not a Matérn kernel in this parameterization; use the squared exponential".into(),
            ));
        }
        check_positive("nu", nu)?;
        Ok(Self {
            family: KernelFamily::Matern { nu },
            a,
            user: None,
        })
    }

    /// Arbitrary even function on [−1, 1]. `a` is carried for reporting only.
    pub fn user_defined(k: Arc<dyn Fn(f64) -> f64 + Send + Sync>) -> Self {
        Self {
            family: KernelFamily::UserDefined,
            a: 1.0,
            user: Some(k),
        }
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    /// Inverse bandwidth.
    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.family {
            KernelFamily::SquaredExponential => (-(self.a * t).powi(2)).exp(),
            KernelFamily::Matern { nu } => matern_correlation(nu, self.a * t),
            KernelFamily::UserDefined => (self.user.as_ref().expect("user kernel"))(t),
        }
    }
}

fn check_positive(name: &str, v: f64) -> Result<(), KernelError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(KernelError::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Eigenfunction attached to an index of the enumeration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenFunction {
    Constant,
    Sine(usize),
    Cosine(usize),
}

impl EigenFunction {
    pub fn for_index(i: usize) -> Self {
        if i == 0 {
            EigenFunction::Constant
        } else if i % 2 == 1 {
            EigenFunction::Sine(i.div_ceil(2))
        } else {
            EigenFunction::Cosine(i / 2)
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            EigenFunction::Constant => 1.0,
            EigenFunction::Sine(j) => (j as f64 * PI * x).sin(),
            EigenFunction::Cosine(j) => (j as f64 * PI * x).cos(),
        }
    }

    /// Frequency index `j` (0 for the constant).
    pub fn frequency(&self) -> usize {
        match *self {
            EigenFunction::Constant => 0,
            EigenFunction::Sine(j) | EigenFunction::Cosine(j) => j,
        }
    }
}

impl fmt::Display for EigenFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EigenFunction::Constant => write!(f, "1"),
            EigenFunction::Sine(j) => write!(f, "sin({j}pi x)"),
            EigenFunction::Cosine(j) => write!(f, "cos({j}pi x)"),
        }
    }
}

/// Eigenvalues in the order constant, sin(πx), cos(πx), sin(2πx), …
#[derive(Debug, Clone)]
pub struct EigenSystem {
    /// Signed Fourier coefficients `∫_{−1}^{1} k(t) cos(jπt) dt`, one per index.
    coefficients: Vec<f64>,
    /// Coefficients clamped below at 0.
    eigenvalues: Vec<f64>,
    /// How many coefficients were negative and clamped.
    clamped: usize,
    /// Most negative coefficient seen (0 when none).
    most_negative: f64,
}

impl EigenSystem {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, i: usize) -> Option<f64> {
        self.eigenvalues.get(i).copied()
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn clamped_count(&self) -> usize {
        self.clamped
    }

    pub fn most_negative(&self) -> f64 {
        self.most_negative
    }

    pub fn function(&self, i: usize) -> EigenFunction {
        EigenFunction::for_index(i)
    }

    /// Half the sum of the signed coefficients. The cosine series of `k` on
    /// [−1, 1] at 0 gives `k(0) = c₀/2 + Σ_{j≥1} c_j`, and every `c_j` with
    /// `j ≥ 1` appears twice in the enumeration, so this converges to `k(0)`.
    pub fn normalized_trace(&self) -> f64 {
        0.5 * self.coefficients.iter().sum::<f64>()
    }

    /// Clamped eigenvalues scaled by 1/2 and sorted descending, the form that
    /// is compared against [`gram_eigen_oracle`].
    pub fn normalized_sorted(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.eigenvalues.iter().map(|x| 0.5 * x).collect();
        v.sort_by(|a, b| b.total_cmp(a));
        v
    }
}

fn coefficient_quadrature(j: usize) -> Quadrature {
    Quadrature {
        abs_tol: 1e-14,
        rel_tol: 1e-12,
        max_panels: 20_000,
        initial_panels: 8 + 2 * j,
    }
}

/// Fourier coefficient `∫_{−1}^{1} k(t) cos(jπt) dt`, using evenness of `k`.
pub fn fourier_coefficient(kernel: &StationaryKernel, j: usize) -> Result<f64, QuadratureError> {
    let w = j as f64 * PI;
    let r = coefficient_quadrature(j).integrate(|t| kernel.eval(t) * (w * t).cos(), 0.0, 1.0)?;
    Ok(2.0 * r.value)
}

/// The first `m` eigenvalues in enumeration order.
pub fn eigensystem(kernel: &StationaryKernel, m: usize) -> Result<EigenSystem, KernelError> {
    if m == 0 {
        return Err(KernelError::OutOfRange("truncation m must be at least 1".into()));
    }
    let top = (m - 1).div_ceil(2);
    let mut by_freq = Vec::with_capacity(top + 1);
    for j in 0..=top {
        let c = fourier_coefficient(kernel, j).map_err(|source| KernelError::Quadrature { index: j, source })?;
        by_freq.push(c);
    }
    let coefficients: Vec<f64> = (0..m).map(|i| by_freq[EigenFunction::for_index(i).frequency()]).collect();
    let clamped = coefficients.iter().filter(|c| **c < 0.0).count();
    let most_negative = coefficients.iter().copied().fold(0.0, f64::min);
    let eigenvalues = coefficients.iter().map(|c| c.max(0.0)).collect();
    Ok(EigenSystem {
        coefficients,
        eigenvalues,
        clamped,
        most_negative,
    })
}

/// Normalizing constant making the Matérn spectral density integrate to one.
pub fn matern_spectral_constant(nu: f64) -> f64 {
    (ln_gamma(nu + 0.5) - ln_gamma(nu) - 0.5 * PI.ln()).exp()
}

/// Closed-form spectral density. The squared exponential uses
/// `(√π/a) exp(−ψ²/(4a²))`, the Fourier transform `∫ k(t) e^{−iψt} dt`; the
/// Matérn density is normalized to unit total mass.
pub fn spectral_density(kernel: &StationaryKernel, psi: f64) -> Result<f64, KernelError> {
    let a = kernel.a;
    match kernel.family {
        KernelFamily::SquaredExponential => Ok(PI.sqrt() / a * (-psi * psi / (4.0 * a * a)).exp()),
        KernelFamily::Matern { nu } => {
            Ok(matern_spectral_constant(nu) / a * (1.0 + (psi / a).powi(2)).powf(-(nu + 0.5)))
        }
        KernelFamily::UserDefined => Err(KernelError::UnsupportedFamily),
    }
}

/// Order-of-magnitude comparator for `η_{2j}` with constants dropped.
pub fn asymptotic_eigenvalue(kernel: &StationaryKernel, j: usize) -> Result<f64, KernelError> {
    let a = kernel.a;
    let jf = j as f64;
    match kernel.family {
        KernelFamily::SquaredExponential => {
            if jf > a * a {
                return Err(KernelError::OutOfRange(format!(
                    "squared-exponential comparator holds only for j <= a^2 = {}, got j = {j}",
                    a * a
                )));
            }
            Ok((-(jf * jf) / (a * a)).exp() / a)
        }
        KernelFamily::Matern { nu } => Ok((1.0 + jf * jf / (a * a)).powf(-(nu + 0.5)) / a),
        KernelFamily::UserDefined => Err(KernelError::UnsupportedFamily),
    }
}

/// Multi-index over the coordinates of a model: coordinate → eigen-index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TensorMultiIndex(pub BTreeMap<usize, usize>);

impl TensorMultiIndex {
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        Self(pairs.into_iter().collect())
    }
}

/// `η_v = Π_j η_{v_j}`.
pub fn tensor_eigenvalue(eig: &EigenSystem, v: &TensorMultiIndex) -> Result<f64, KernelError> {
    v.0.iter().try_fold(1.0, |acc, (coord, &i)| {
        eig.eigenvalue(i).map(|e| acc * e).ok_or_else(|| {
            KernelError::OutOfRange(format!(
                "coordinate {coord} asks for eigen-index {i} beyond truncation {}",
                eig.len()
            ))
        })
    })
}

/// `C (a^d/d^d) [log(1/(ε a^{d/2}))]^{(d+2)/2}` for `a ≥ 2`, `0 < ε < a^{−d/2}`.
pub fn entropy_lower_bound(a: f64, d: usize, eps: f64, constant: f64) -> Result<f64, KernelError> {
    if !(a >= 2.0) {
        return Err(KernelError::Domain(format!("a must be at least 2, got {a}")));
    }
    if d == 0 {
        return Err(KernelError::Domain("dimension must be at least 1".into()));
    }
    let df = d as f64;
    let ceiling = a.powf(-df / 2.0);
    if !(eps > 0.0 && eps < ceiling) {
        return Err(KernelError::Domain(format!(
            "eps must lie in (0, a^(-d/2)) = (0, {ceiling}), got {eps}"
        )));
    }
    let log_term = -eps.ln() - 0.5 * df * a.ln();
    Ok(constant * (a / df).powf(df) * log_term.powf((df + 2.0) / 2.0))
}

/// Eigenvalues of the Gram matrix on the midpoint grid of [0,1], divided by
/// the grid size and sorted descending.
pub fn gram_eigen_oracle(kernel: &StationaryKernel, grid_size: usize) -> Result<Vec<f64>, KernelError> {
    if grid_size < 16 {
        return Err(KernelError::OutOfRange(format!("grid size must be at least 16, got {grid_size}")));
    }
    let n = grid_size as f64;
    // k depends on |i − j| only
    let lags: Vec<f64> = (0..grid_size).map(|d| kernel.eval(d as f64 / n)).collect();
    let gram = Mat::from_fn(grid_size, grid_size, |i, j| lags[i.abs_diff(j)] / n);
    Ok(symmetric_eigenvalues_desc(&gram)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::special::erf;

    fn const_kernel() -> StationaryKernel {
        StationaryKernel::user_defined(Arc::new(|_| 1.0))
    }

    #[test]
    fn constant_kernel_eigensystem() {
        let e = eigensystem(&const_kernel(), 9).unwrap();
        assert!((e.eigenvalues()[0] - 2.0).abs() < 1e-12);
        for v in &e.eigenvalues()[1..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_kernel_eigensystem() {
        let k = StationaryKernel::user_defined(Arc::new(|t| (PI * t).cos()));
        let e = eigensystem(&k, 7).unwrap();
        let c = e.coefficients();
        assert!(c[0].abs() < 1e-12);
        assert!((c[1] - 1.0).abs() < 1e-12 && (c[2] - 1.0).abs() < 1e-12);
        for v in &c[3..] {
            assert!(v.abs() < 1e-12);
        }
    }

    #[test]
    fn se_constant_mode() {
        let e = eigensystem(&StationaryKernel::squared_exponential(2.0).unwrap(), 1).unwrap();
        let oracle = PI.sqrt() / 2.0 * erf(2.0);
        assert!((e.eigenvalues()[0] - oracle).abs() < 1e-12);
        assert!((oracle - 0.88208).abs() < 1e-5);
    }

    #[test]
    fn pairing_is_exact() {
        let e = eigensystem(&StationaryKernel::matern(2.0, 1.5).unwrap(), 41).unwrap();
        for j in 1..=20 {
            assert_eq!(e.eigenvalues()[2 * j - 1].to_bits(), e.eigenvalues()[2 * j].to_bits());
        }
        assert_eq!(e.function(0), EigenFunction::Constant);
        assert_eq!(e.function(5), EigenFunction::Sine(3));
        assert_eq!(e.function(6), EigenFunction::Cosine(3));
    }

    #[test]
    fn se_has_genuinely_negative_coefficients_at_small_a() {
        let e = eigensystem(&StationaryKernel::squared_exponential(1.0).unwrap(), 9).unwrap();
        assert!(e.clamped_count() > 0);
        assert!(e.most_negative() < -0.01);
        assert!(e.eigenvalues().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn trace_identity_with_signed_coefficients() {
        for a in [1.0, 2.0, 4.0] {
            let e = eigensystem(&StationaryKernel::squared_exponential(a).unwrap(), 400).unwrap();
            assert!((e.normalized_trace() - 1.0).abs() < 1e-6, "a={a}: {}", e.normalized_trace());
        }
    }

    #[test]
    fn se_spectral_density_values() {
        let k1 = StationaryKernel::squared_exponential(1.0).unwrap();
        assert!((spectral_density(&k1, 0.0).unwrap() - PI.sqrt()).abs() < 1e-15);
        let k2 = StationaryKernel::squared_exponential(2.0).unwrap();
        let expect = PI.sqrt() / 2.0 * (-0.25f64).exp();
        assert!((spectral_density(&k2, 2.0).unwrap() - expect).abs() < 1e-15);
        // numerical Fourier transform of k
        let ft = Quadrature::default()
            .integrate(|t| k2.eval(t) * (2.0 * t).cos(), -12.0, 12.0)
            .unwrap()
            .value;
        assert!((ft - expect).abs() < 1e-9);
    }

    #[test]
    fn matern_spectral_density_has_unit_mass() {
        for nu in [0.5, 1.5, 2.5, 0.8] {
            let k = StationaryKernel::matern(1.0, nu).unwrap();
            let quad = Quadrature::default().with_abs_tol(1e-10);
            // substitute ψ = tan(u) to map the real line onto (−π/2, π/2)
            let mass = quad
                .integrate(
                    |u: f64| spectral_density(&k, u.tan()).unwrap() / u.cos().powi(2),
                    -PI / 2.0 + 1e-12,
                    PI / 2.0 - 1e-12,
                )
                .unwrap()
                .value;
            let tail = if nu < 1.0 { 1e-4 } else { 1e-7 };
            assert!((mass - 1.0).abs() < tail, "nu={nu}: {mass}");
        }
        assert!((matern_spectral_constant(0.5) - 1.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn matern_spectral_density_inverts_to_kernel() {
        let k = StationaryKernel::matern(2.0, 1.5).unwrap();
        let t = 0.3;
        let quad = Quadrature::default().with_abs_tol(1e-11);
        let back = quad
            .integrate(
                |u: f64| {
                    let psi = u.tan();
                    spectral_density(&k, psi).unwrap() * (psi * t).cos() / u.cos().powi(2)
                },
                -PI / 2.0 + 1e-9,
                PI / 2.0 - 1e-9,
            )
            .unwrap()
            .value;
        assert!((back - k.eval(t)).abs() < 1e-6);
    }

    #[test]
    fn user_defined_kernels_have_no_closed_forms() {
        let k = const_kernel();
        assert!(matches!(spectral_density(&k, 0.0), Err(KernelError::UnsupportedFamily)));
        assert!(matches!(asymptotic_eigenvalue(&k, 0), Err(KernelError::UnsupportedFamily)));
    }

    #[test]
    fn asymptotic_comparators() {
        let se = StationaryKernel::squared_exponential(4.0).unwrap();
        assert_eq!(asymptotic_eigenvalue(&se, 0).unwrap(), 0.25);
        assert!((asymptotic_eigenvalue(&se, 4).unwrap() - 0.25 * (-1f64).exp()).abs() < 1e-15);
        assert!(matches!(asymptotic_eigenvalue(&se, 17), Err(KernelError::OutOfRange(_))));
        let m = StationaryKernel::matern(4.0, 1.5).unwrap();
        assert!((asymptotic_eigenvalue(&m, 4).unwrap() - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn tensor_products() {
        let e = eigensystem(&StationaryKernel::squared_exponential(2.0).unwrap(), 5).unwrap();
        let zero = TensorMultiIndex::new([(1, 0), (2, 0)]);
        assert_eq!(tensor_eigenvalue(&e, &zero).unwrap(), e.eigenvalues()[0].powi(2));
        let v = TensorMultiIndex::new([(1, 0), (2, 2)]);
        assert_eq!(tensor_eigenvalue(&e, &v).unwrap(), e.eigenvalues()[0] * e.eigenvalues()[2]);
        let far = TensorMultiIndex::new([(1, 5)]);
        assert!(matches!(tensor_eigenvalue(&e, &far), Err(KernelError::OutOfRange(_))));
        let c = eigensystem(&const_kernel(), 3).unwrap();
        assert!(tensor_eigenvalue(&c, &TensorMultiIndex::new([(1, 0), (3, 1)])).unwrap().abs() < 1e-12);
    }

    #[test]
    fn entropy_bound_fixtures() {
        let e = std::f64::consts::E;
        let v1 = entropy_lower_bound(4.0, 1, 0.5 / e, 1.0).unwrap();
        assert!((v1 - 4.0).abs() < 1e-12);
        let v2 = entropy_lower_bound(4.0, 2, 0.25 / (e * e), 1.0).unwrap();
        assert!((v2 - 16.0).abs() < 1e-12);
        let near = entropy_lower_bound(4.0, 1, 0.5 * (1.0 - 1e-12), 1.0).unwrap();
        assert!(near < 1e-15);
        assert!(matches!(entropy_lower_bound(4.0, 1, 0.5, 1.0), Err(KernelError::Domain(_))));
        assert!(matches!(entropy_lower_bound(1.5, 1, 0.1, 1.0), Err(KernelError::Domain(_))));
    }

    #[test]
    fn gram_oracle_constant_kernel() {
        let g = gram_eigen_oracle(&const_kernel(), 64).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
        assert!(gram_eigen_oracle(&const_kernel(), 8).is_err());
    }

    #[test]
    fn kernels_are_even_with_unit_variance() {
        let ks = [
            StationaryKernel::squared_exponential(3.0).unwrap(),
            StationaryKernel::matern(2.0, 1.5).unwrap(),
            StationaryKernel::matern(2.0, 0.7).unwrap(),
        ];
        for k in &ks {
            assert_eq!(k.eval(0.0), 1.0);
            for i in 0..=50 {
                let t = i as f64 / 50.0;
                assert!((k.eval(t) - k.eval(-t)).abs() <= 1e-12);
            }
        }
        assert!(StationaryKernel::matern(1.0, f64::INFINITY).is_err());
    }
}
