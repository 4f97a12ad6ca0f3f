use crate::error::{shape_err, Result};
use crate::scalar::Real;

use super::Matrix;

const TAYLOR_ORDER: usize = 16;

/// `e^m` by scaling and squaring around a degree-16 Taylor polynomial.
///
/// The matrix is scaled by `2^-s` until its 1-norm is at most 0.5, the
/// truncated series is evaluated with Horner's rule, and the result is
/// squared `s` times.
pub fn matrix_exponential<T: Real>(m: &Matrix<T>) -> Result<Matrix<T>> {
    if !m.is_square() {
        return Err(shape_err("matrix_exponential", format!("non-square {}x{}", m.rows(), m.cols())));
    }
    let n = m.rows();
    let norm = m.norm_one();
    let half = T::lit(0.5);
    let mut squarings = 0u32;
    let mut scaled_norm = norm;
    while scaled_norm > half {
        scaled_norm = scaled_norm * half;
        squarings += 1;
    }
    let a = m.scale(T::lit(0.5f64.powi(squarings as i32)));

    let identity = Matrix::identity(n);
    let mut p = identity.clone();
    for k in (1..=TAYLOR_ORDER).rev() {
        p = a.matmul(&p)?.scale(T::one() / T::lit(k as f64));
        for i in 0..n {
            p[(i, i)] = p[(i, i)] + T::one();
        }
    }
    for _ in 0..squarings {
        p = p.matmul(&p)?;
    }
    Ok(p)
}

/// Gradient of `trace(e^m)` with respect to `m`, which is `(e^m)ᵀ`.
pub fn trace_exp_gradient<T: Real>(exp_m: &Matrix<T>) -> Matrix<T> {
    exp_m.transpose()
}
