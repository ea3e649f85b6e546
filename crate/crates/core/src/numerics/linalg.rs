//! Dense symmetric positive-definite factorizations with a jitter schedule,
//! and symmetric eigenvalues. Factorization itself is delegated to `faer`.

use faer::{Mat, Side};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("Cholesky failed for a {dim}x{dim} matrix even with jitter {last_jitter:e} after {retries} retries")]
    NotPositiveDefinite {
        dim: usize,
        retries: usize,
        last_jitter: f64,
    },
    #[error("symmetric eigensolver did not converge for a {dim}x{dim} matrix")]
    EigenFailure { dim: usize },
}

/// Diagonal jitter added when a plain Cholesky fails: the first retry adds
/// `initial_rel · trace`, each further retry multiplies it by `factor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterSchedule {
    pub initial_rel: f64,
    pub factor: f64,
    pub max_retries: usize,
}

impl Default for JitterSchedule {
    fn default() -> Self {
        Self {
            initial_rel: 1e-10,
            factor: 10.0,
            max_retries: 5,
        }
    }
}

impl JitterSchedule {
    /// Jitter magnitudes tried after the jitter-free attempt.
    pub fn levels(&self, trace: f64) -> impl Iterator<Item = f64> + '_ {
        (0..self.max_retries).map(move |k| self.initial_rel * trace * self.factor.powi(k as i32))
    }
}

/// Lower Cholesky factor `L` with `A + jitter·I = L Lᵀ`, stored column-major.
#[derive(Debug, Clone)]
pub struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
    jitter: f64,
}

impl Cholesky {
    /// Factorizes `a`, escalating diagonal jitter on failure.
    pub fn factor(a: &Mat<f64>, schedule: &JitterSchedule) -> Result<Self, LinalgError> {
        let n = a.nrows();
        if let Ok(llt) = a.llt(Side::Lower) {
            return Ok(Self::from_faer(llt.L(), 0.0));
        }
        let trace: f64 = (0..n).map(|i| a[(i, i)]).sum();
        let mut last = 0.0;
        for jitter in schedule.levels(trace.abs().max(f64::MIN_POSITIVE)) {
            let mut shifted = a.clone();
            for i in 0..n {
                shifted[(i, i)] += jitter;
            }
            last = jitter;
            if let Ok(llt) = shifted.llt(Side::Lower) {
                return Ok(Self::from_faer(llt.L(), jitter));
            }
        }
        Err(LinalgError::NotPositiveDefinite {
            dim: n,
            retries: schedule.max_retries,
            last_jitter: last,
        })
    }

    /// Factorizes with a fixed extra diagonal shift and no escalation.
    pub fn factor_shifted(a: &Mat<f64>, shift: f64) -> Result<Self, LinalgError> {
        let mut shifted = a.clone();
        for i in 0..a.nrows() {
            shifted[(i, i)] += shift;
        }
        shifted
            .llt(Side::Lower)
            .map(|llt| Self::from_faer(llt.L(), shift))
            .map_err(|_| LinalgError::NotPositiveDefinite {
                dim: a.nrows(),
                retries: 0,
                last_jitter: shift,
            })
    }

    fn from_faer(l: faer::MatRef<'_, f64>, jitter: f64) -> Self {
        let n = l.nrows();
        let mut lower = vec![0.0; n * n];
        for j in 0..n {
            let col = &mut lower[j * n..(j + 1) * n];
            for (i, slot) in col.iter_mut().enumerate().skip(j) {
                *slot = l[(i, j)];
            }
        }
        Self {
            dim: n,
            lower,
            jitter,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Jitter that was needed for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn col(&self, j: usize) -> &[f64] {
        &self.lower[j * self.dim..(j + 1) * self.dim]
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.dim).map(|i| self.col(i)[i].ln()).sum::<f64>()
    }

    /// Solves `L x = b` in place.
    pub fn forward_solve(&self, x: &mut [f64]) {
        for j in 0..self.dim {
            let col = self.col(j);
            x[j] /= col[j];
            let xj = x[j];
            for i in j + 1..self.dim {
                x[i] -= col[i] * xj;
            }
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn backward_solve(&self, x: &mut [f64]) {
        for j in (0..self.dim).rev() {
            let col = self.col(j);
            let dot: f64 = col[j + 1..].iter().zip(&x[j + 1..]).map(|(l, v)| l * v).sum();
            x[j] = (x[j] - dot) / col[j];
        }
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.forward_solve(&mut x);
        self.backward_solve(&mut x);
        x
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form(&self, b: &[f64]) -> f64 {
        let mut x = b.to_vec();
        self.forward_solve(&mut x);
        x.iter().map(|v| v * v).sum()
    }

    /// `L z`, used to turn white noise into a correlated draw.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for j in 0..self.dim {
            let col = self.col(j);
            let zj = z[j];
            for i in j..self.dim {
                out[i] += col[i] * zj;
            }
        }
        out
    }
}

/// Eigenvalues of a symmetric matrix, sorted descending.
pub fn symmetric_eigenvalues_desc(a: &Mat<f64>) -> Result<Vec<f64>, LinalgError> {
    let mut values = a
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|_| LinalgError::EigenFailure { dim: a.nrows() })?;
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> Mat<f64> {
        Mat::from_fn(n, n, |i, j| {
            let d = (i as f64 - j as f64) / n as f64;
            (-4.0 * d * d).exp() + if i == j { 0.5 } else { 0.0 }
        })
    }

    #[test]
    fn solve_and_logdet() {
        let a = spd(7);
        let c = Cholesky::factor(&a, &JitterSchedule::default()).unwrap();
        assert_eq!(c.jitter(), 0.0);
        let b: Vec<f64> = (0..7).map(|i| (i as f64).sin()).collect();
        let x = c.solve(&b);
        for i in 0..7 {
            let ax: f64 = (0..7).map(|j| a[(i, j)] * x[j]).sum();
            assert!((ax - b[i]).abs() < 1e-12);
        }
        let q: f64 = b.iter().zip(&x).map(|(u, v)| u * v).sum();
        assert!((c.quad_form(&b) - q).abs() < 1e-12);
        let eig = symmetric_eigenvalues_desc(&a).unwrap();
        let ld: f64 = eig.iter().map(|v| v.ln()).sum();
        assert!((c.log_det() - ld).abs() < 1e-10);
    }

    #[test]
    fn jitter_rescues_singular_matrix() {
        let a = Mat::from_fn(4, 4, |_, _| 1.0);
        let c = Cholesky::factor(&a, &JitterSchedule::default()).unwrap();
        assert!(c.jitter() > 0.0);
    }

    #[test]
    fn indefinite_matrix_fails_after_retries() {
        let a = Mat::from_fn(3, 3, |i, j| if i == j { -1.0 } else { 0.0 });
        let err = Cholesky::factor(&a, &JitterSchedule::default()).unwrap_err();
        assert!(matches!(err, LinalgError::NotPositiveDefinite { retries: 5, .. }));
    }
}
