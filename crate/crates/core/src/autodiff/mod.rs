//! Dense tensors, reverse-mode differentiation, Adam and seeded randomness.

mod adam;
pub mod checkpoint;
mod params;
mod rng;
mod tape;
mod tensor;

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use params::{BlockLayout, ParamId, ParamSet};
pub use rng::SeededRng;
pub use tape::{Gradients, Tape, Var, LEAKY_SLOPE};
pub use tensor::Tensor;

/// Logistic function, stable for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}
