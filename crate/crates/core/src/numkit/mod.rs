//! Dense linear algebra, keyed random streams and a finite-difference
//! gradient oracle. Every reduction accumulates left to right so results are
//! reproducible bit for bit.

mod matrix;
mod rng;

pub use matrix::{Matrix, Vector};
pub use rng::Rng;

use crate::error::{Error, Result};

/// Matrix-vector product with left-to-right accumulation.
pub fn matvec(m: &Matrix, v: &Vector) -> Result<Vector> {
    m.matvec(v)
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad<F>(f: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: Fn(&Vector) -> f64,
{
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidInput(format!("step size must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite { coordinate: i });
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(Vector::from(grad))
}

/// Relative error used by the gradient checks: `|a-b| / max(|a|+|b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(floor)
}
