//! Shared numerical plumbing: quadrature, special functions, dense SPD
//! factorizations and seeded random streams.

pub mod linalg;
pub mod quadrature;
pub mod rng;
pub mod special;

pub use linalg::{Cholesky, JitterSchedule, LinalgError};
pub use quadrature::{Integral, Quadrature, QuadratureError};
pub use rng::{derive_seed, rng_from_seed, SeededRng};
pub use special::log_sum_exp;
