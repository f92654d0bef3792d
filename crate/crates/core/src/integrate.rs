//! Fixed-step classic Runge-Kutta kernels.
//!
//! ```text
//! k1 = f(y)
//! k2 = f(y + h/2 k1)
//! k3 = f(y + h/2 k2)
//! k4 = f(y + h k3)
//! y' = y + h/6 (k1 + 2 k2 + 2 k3 + k4)
//! ```
//!
//! Local error is O(h^5), global error O(h^4).

/// One RK4 step for an autonomous system of fixed dimension.
///
/// The right-hand side may fail; the first failing stage aborts the step.
pub fn rk4_step<const N: usize, E, F>(y: &[f64; N], h: f64, mut f: F) -> Result<[f64; N], E>
where
    F: FnMut(&[f64; N]) -> Result<[f64; N], E>,
{
    let k1 = f(y)?;
    let k2 = f(&axpy(y, 0.5 * h, &k1))?;
    let k3 = f(&axpy(y, 0.5 * h, &k2))?;
    let k4 = f(&axpy(y, h, &k3))?;
    let mut out = *y;
    for i in 0..N {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(out)
}

/// Same as [`rk4_step`] for systems whose dimension is only known at runtime.
pub fn rk4_step_dyn<F>(y: &[f64], h: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let shift = |k: &[f64], s: f64| -> Vec<f64> { y.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = f(y);
    let k2 = f(&shift(&k1, 0.5 * h));
    let k3 = f(&shift(&k2, 0.5 * h));
    let k4 = f(&shift(&k3, h));
    (0..y.len()).map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}
