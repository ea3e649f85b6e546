//! Adaptive Gauss–Kronrod (7/15) quadrature on bounded intervals, plus a
//! fixed composite Gauss–Legendre rule for tensor-product integration.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error(
        "quadrature did not converge on [{lo}, {hi}] after {panels} panels \
         (estimate {estimate:e}, error bound {error:e}, worst panel [{worst_lo}, {worst_hi}])"
    )]
    NotConverged {
        lo: f64,
        hi: f64,
        panels: usize,
        estimate: f64,
        error: f64,
        worst_lo: f64,
        worst_hi: f64,
    },
    #[error("integrand returned a non-finite value at x = {at}")]
    NonFinite { at: f64 },
    #[error("invalid integration interval [{lo}, {hi}]")]
    BadInterval { lo: f64, hi: f64 },
}

/// Result of a converged integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub abs_error: f64,
    pub panels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> Result<Panel, QuadratureError> {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite { at: center });
    }
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        if !f1.is_finite() {
            return Err(QuadratureError::NonFinite { at: center - dx });
        }
        if !f2.is_finite() {
            return Err(QuadratureError::NonFinite { at: center + dx });
        }
        kronrod += wk * (f1 + f2);
        // Gauss nodes sit at the odd Kronrod positions.
        if i % 2 == 1 {
            gauss += WG[i / 2] * (f1 + f2);
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    Ok(Panel { lo, hi, value, error })
}

/// Adaptive Gauss–Kronrod integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
    /// Number of equal panels the interval is split into before adapting.
    pub initial_panels: usize,
}

impl Default for Quadrature {
    fn default() -> Self {
        Self {
            abs_tol: 1e-9,
            rel_tol: 1e-12,
            max_panels: 4000,
            initial_panels: 4,
        }
    }
}

impl Quadrature {
    pub fn with_abs_tol(mut self, tol: f64) -> Self {
        self.abs_tol = tol;
        self
    }

    pub fn with_initial_panels(mut self, panels: usize) -> Self {
        self.initial_panels = panels.max(1);
        self
    }

    pub fn integrate<F: Fn(f64) -> f64>(
        &self,
        f: F,
        lo: f64,
        hi: f64,
    ) -> Result<Integral, QuadratureError> {
        self.integrate_with_breaks(f, &[lo, hi])
    }

    /// Integrates over `[points[0], points.last()]`, starting with panel
    /// boundaries at every listed point so that kinks and jumps there are
    /// never straddled.
    pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
        &self,
        f: F,
        points: &[f64],
    ) -> Result<Integral, QuadratureError> {
        let mut pts: Vec<f64> = points.iter().copied().filter(|x| x.is_finite()).collect();
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        if pts.len() < 2 {
            let x = points.first().copied().unwrap_or(f64::NAN);
            if pts.len() == 1 {
                return Ok(Integral {
                    value: 0.0,
                    abs_error: 0.0,
                    panels: 0,
                });
            }
            return Err(QuadratureError::BadInterval { lo: x, hi: x });
        }
        let (lo, hi) = (pts[0], pts[pts.len() - 1]);
        let mut heap = BinaryHeap::new();
        for w in pts.windows(2) {
            let step = (w[1] - w[0]) / self.initial_panels as f64;
            for k in 0..self.initial_panels {
                let a = w[0] + step * k as f64;
                let b = if k + 1 == self.initial_panels {
                    w[1]
                } else {
                    w[0] + step * (k + 1) as f64
                };
                heap.push(gk15(&f, a, b)?);
            }
        }
        loop {
            let (value, error) = heap
                .iter()
                .fold((0.0, 0.0), |(v, e), p| (v + p.value, e + p.error));
            let tol = self.abs_tol.max(self.rel_tol * value.abs());
            if error <= tol {
                return Ok(Integral {
                    value,
                    abs_error: error,
                    panels: heap.len(),
                });
            }
            let worst = *heap.peek().expect("non-empty panel heap");
            let width = worst.hi - worst.lo;
            if heap.len() >= self.max_panels || width <= 4.0 * f64::EPSILON * lo.abs().max(hi.abs()).max(1.0)
            {
                return Err(QuadratureError::NotConverged {
                    lo,
                    hi,
                    panels: heap.len(),
                    estimate: value,
                    error,
                    worst_lo: worst.lo,
                    worst_hi: worst.hi,
                });
            }
            heap.pop();
            let mid = 0.5 * (worst.lo + worst.hi);
            heap.push(gk15(&f, worst.lo, mid)?);
            heap.push(gk15(&f, mid, worst.hi)?);
        }
    }
}

/// Nodes and weights of the `order`-point Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(order: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; order];
    let mut weights = vec![0.0; order];
    let n = order as f64;
    for i in 0..order.div_ceil(2) {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut deriv = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=order {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            deriv = n * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / deriv;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[order - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * deriv * deriv);
        weights[i] = w;
        weights[order - 1 - i] = w;
    }
    (nodes, weights)
}

/// Composite Gauss–Legendre rule on [0, 1]: `panels` equal panels with
/// `order` nodes each. Returns (nodes, weights).
pub fn composite_gauss_legendre_unit(panels: usize, order: usize) -> (Vec<f64>, Vec<f64>) {
    let (gx, gw) = gauss_legendre(order);
    let h = 1.0 / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let c = (p as f64 + 0.5) * h;
        for (x, w) in gx.iter().zip(&gw) {
            nodes.push(c + 0.5 * h * x);
            weights.push(0.5 * h * w);
        }
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let q = Quadrature::default();
        let r = q.integrate(|x| x.powi(5) - 3.0 * x * x, -1.0, 2.0).unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0);
        assert!((r.value - exact).abs() < 1e-12);
    }

    #[test]
    fn gaussian_mass() {
        let q = Quadrature::default();
        let r = q
            .integrate(
                |x| (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt(),
                -10.0,
                10.0,
            )
            .unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kink_at_break() {
        let q = Quadrature::default();
        let r = q.integrate_with_breaks(|x: f64| x.abs(), &[-1.0, 0.3, 1.0]).unwrap();
        assert!((r.value - 1.0).abs() < 1e-10);
    }

    #[test]
    fn budget_exhaustion_reports_panel() {
        let q = Quadrature {
            max_panels: 8,
            abs_tol: 1e-14,
            ..Quadrature::default()
        };
        let err = q.integrate(|x| (200.0 * x).sin().abs(), 0.0, 10.0).unwrap_err();
        assert!(matches!(err, QuadratureError::NotConverged { panels: 8, .. }));
    }

    #[test]
    fn non_finite_integrand() {
        let q = Quadrature::default();
        assert!(matches!(
            q.integrate(|x| 1.0 / x, 0.0, 1.0),
            Err(QuadratureError::NonFinite { .. }) | Err(QuadratureError::NotConverged { .. })
        ));
    }

    #[test]
    fn gauss_legendre_weights() {
        for order in [1, 2, 5, 8, 16] {
            let (x, w) = gauss_legendre(order);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            // exact for degree 2·order − 1
            let deg = 2 * order - 2;
            let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg as i32)).sum();
            let exact = 2.0 / (deg as f64 + 1.0);
            assert!((approx - exact).abs() < 1e-12, "order {order}");
        }
        let (x, w) = composite_gauss_legendre_unit(16, 8);
        let v: f64 = x.iter().zip(&w).map(|(x, w)| w * (std::f64::consts::PI * x).sin()).sum();
        assert!((v - 2.0 / std::f64::consts::PI).abs() < 1e-13);
    }
}
