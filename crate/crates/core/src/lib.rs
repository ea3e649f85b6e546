pub mod divergence;
pub mod drvs;
pub mod gp;
pub mod harness;
pub mod identifiability;
pub mod kernels;
pub mod model_space;
pub mod numerics;
