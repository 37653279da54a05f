//! Small dense helpers over row-major `f64` buffers. Factorisations go through
//! nalgebra; these only cover the inner-loop accumulations.

use nalgebra::{DMatrix, DVector};

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Symmetric rank-one update `a += alpha * x x^T` of a `k x k` row-major matrix.
#[inline]
pub fn syr(a: &mut [f64], alpha: f64, x: &[f64]) {
    let k = x.len();
    for r in 0..k {
        let s = alpha * x[r];
        if s == 0.0 {
            continue;
        }
        axpy(&mut a[r * k..(r + 1) * k], s, x);
    }
}

/// `x^T A x` for a `k x k` row-major matrix.
pub fn quad_form(a: &[f64], x: &[f64]) -> f64 {
    let k = x.len();
    (0..k).map(|r| x[r] * dot(&a[r * k..(r + 1) * k], x)).sum()
}

/// `A x` for a `k x k` row-major matrix.
pub fn mat_vec(a: &[f64], x: &[f64]) -> Vec<f64> {
    let k = x.len();
    (0..k).map(|r| dot(&a[r * k..(r + 1) * k], x)).collect()
}

/// Solves `A x = b` for symmetric positive definite `A` (row-major, `k x k`).
/// Returns `None` when the Cholesky factorisation fails.
pub fn solve_spd(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let k = b.len();
    // symmetric, so row-major and column-major coincide
    let m = DMatrix::from_column_slice(k, k, a);
    let chol = m.cholesky()?;
    let x = chol.solve(&DVector::from_column_slice(b));
    Some(x.as_slice().to_vec())
}

/// Neumaier-compensated sum of values sorted ascending, so the result does
/// not depend on input order.
pub fn stable_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(f64::total_cmp);
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for x in v {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Order-insensitive mean; `None` for an empty input.
pub fn stable_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    Some(stable_sum(v) / n)
}
