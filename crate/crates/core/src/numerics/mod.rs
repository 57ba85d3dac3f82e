//! Dense linear algebra, reproducible random streams, Adam and a
//! finite-difference gradient checker.

mod adam;
mod gradcheck;
mod matrix;
mod rng;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{finite_diff_grad, relative_error};
pub use matrix::{affine, dot, ElementwiseOp, Matrix};
pub use rng::{derive_seed, RngStream};

/// Lower bound applied to powers and model variances before any IS
/// divergence or Gaussian likelihood is evaluated.
pub const VARIANCE_FLOOR: f64 = 1e-10;

/// Lower bound re-applied to NMF factors and gains after every multiplicative update.
pub const NMF_FLOOR: f64 = 1e-10;

#[inline]
pub fn floor_variance(v: f64) -> f64 {
    v.max(VARIANCE_FLOOR)
}

/// `ln(Σ exp(xᵢ))` without overflow.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Median of a non-empty slice (mean of the two central values for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Some(if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    })
}
