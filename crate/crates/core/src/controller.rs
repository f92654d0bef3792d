//! Indirect adaptive fuzzy controller.
//!
//! The plant output is treated in canonical form `y^(n) = f(x) + g(x) u`.
//! Fuzzy estimates `f_hat = theta_f . basis_f(x)` and
//! `g_hat = theta_g . basis_g(x)` are used with certainty equivalence:
//!
//! ```text
//! u = (-f_hat + y_des^(n) + K . e) / max(g_hat, g_min)     saturated to +-u_max
//! ```
//!
//! and adapted online with
//!
//! ```text
//! d theta_f / dt = -gamma_f (e' P b) basis_f
//! d theta_g / dt = -gamma_g (e' P b) basis_g u            b = (0, ..., 0, 1)
//! ```
//!
//! integrated by explicit Euler and projected onto the parameter bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fuzzy::{dot, weighted, FuzzyError, ThetaVector};
use crate::integrate::rk4_step_dyn;
use crate::InvalidParam;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite value in control law: {0}")]
    NonFinite(&'static str),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error(transparent)]
    Invalid(#[from] InvalidParam),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Order of the canonical form.
    pub n: usize,
    /// Feedback gains, `K[i]` multiplies the `(i)`-th error derivative.
    #[serde(rename = "K")]
    pub gains: Vec<f64>,
    /// Symmetric positive-definite weighting of the adaptive law.
    #[serde(rename = "P")]
    pub p_matrix: Vec<Vec<f64>>,
    pub gamma_f: f64,
    pub gamma_g: f64,
    /// Lower bound on the estimated input gain.
    pub g_min: f64,
    /// Actuator saturation.
    pub u_max: f64,
    pub theta_f_bounds: (f64, f64),
    pub theta_g_bounds: (f64, f64),
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            n: 2,
            gains: vec![4.0, 4.0],
            p_matrix: vec![vec![1.0e3, 0.0], vec![0.0, 1.0e3]],
            gamma_f: 0.5,
            gamma_g: 0.5,
            g_min: 0.05,
            u_max: 10.0,
            theta_f_bounds: (-1.0e5, 1.0e5),
            theta_g_bounds: (0.05, 2.0e5),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        let n = self.n;
        if n == 0 {
            return Err(InvalidParam::new("n", "violates n >= 1"));
        }
        if self.gains.len() != n {
            return Err(InvalidParam::new("K", format!("must have n = {n} entries (got {})", self.gains.len())));
        }
        if !is_hurwitz(&self.gains) {
            return Err(InvalidParam::new("K", format!("error polynomial is not Hurwitz for K = {:?}", self.gains)));
        }
        if self.p_matrix.len() != n || self.p_matrix.iter().any(|r| r.len() != n) {
            return Err(InvalidParam::new("P", format!("must be {n}x{n}")));
        }
        if !is_symmetric_positive_definite(&self.p_matrix) {
            return Err(InvalidParam::new("P", "must be symmetric positive definite"));
        }
        for (field, value) in [("gamma_f", self.gamma_f), ("gamma_g", self.gamma_g)] {
            if !(value >= 0.0) || !value.is_finite() {
                return Err(InvalidParam::new(field, format!("violates {field} >= 0 (got {value})")));
            }
        }
        if !(self.g_min > 0.0) || !self.g_min.is_finite() {
            return Err(InvalidParam::new("g_min", format!("violates g_min > 0 (got {})", self.g_min)));
        }
        if !(self.u_max > 0.0) || !self.u_max.is_finite() {
            return Err(InvalidParam::new("u_max", format!("violates u_max > 0 (got {})", self.u_max)));
        }
        for (field, (lo, hi)) in [("theta_f_bounds", self.theta_f_bounds), ("theta_g_bounds", self.theta_g_bounds)] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(InvalidParam::new(field, format!("violates lo <= hi (got [{lo}, {hi}])")));
            }
        }
        if self.theta_g_bounds.1 < self.g_min {
            return Err(InvalidParam::new("theta_g_bounds", "upper bound must be >= g_min"));
        }
        Ok(())
    }

    /// Projection interval actually used for `theta_g`: never below `g_min`.
    pub fn effective_theta_g_bounds(&self) -> (f64, f64) {
        (self.theta_g_bounds.0.max(self.g_min), self.theta_g_bounds.1)
    }
}

/// Routh-Hurwitz test of `s^n + K[n-1] s^(n-1) + ... + K[0]`.
pub fn is_hurwitz(gains: &[f64]) -> bool {
    let n = gains.len();
    if n == 0 || gains.iter().any(|k| !k.is_finite() || *k <= 0.0) {
        return false;
    }
    // coefficients in descending powers: 1, K[n-1], ..., K[0]
    let coeffs: Vec<f64> = std::iter::once(1.0).chain(gains.iter().rev().copied()).collect();
    let width = n / 2 + 1;
    let mut prev: Vec<f64> = (0..width).map(|j| coeffs.get(2 * j).copied().unwrap_or(0.0)).collect();
    let mut cur: Vec<f64> = (0..width).map(|j| coeffs.get(2 * j + 1).copied().unwrap_or(0.0)).collect();
    for _ in 1..n {
        if cur[0] <= 0.0 {
            return false;
        }
        let next: Vec<f64> = (0..width)
            .map(|j| {
                let a = prev.get(j + 1).copied().unwrap_or(0.0);
                let b = cur.get(j + 1).copied().unwrap_or(0.0);
                (cur[0] * a - prev[0] * b) / cur[0]
            })
            .collect();
        prev = cur;
        cur = next;
    }
    cur[0] > 0.0
}

fn is_symmetric_positive_definite(p: &[Vec<f64>]) -> bool {
    let n = p.len();
    for i in 0..n {
        for j in 0..n {
            if !p[i][j].is_finite() || (p[i][j] - p[j][i]).abs() > 1e-12 * p[i][j].abs().max(1.0) {
                return false;
            }
        }
    }
    // Cholesky
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = p[i][i] - s;
                if !(d > 0.0) {
                    return false;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (p[i][j] - s) / l[j][j];
            }
        }
    }
    true
}

/// Adapted consequent parameters of both estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub theta_f: ThetaVector,
    pub theta_g: ThetaVector,
}

impl ControllerState {
    /// Checks that both vectors respect the projection bounds of `config`.
    pub fn new(theta_f: ThetaVector, theta_g: ThetaVector, config: &ControllerConfig) -> Result<Self, ControllerError> {
        let (glo, ghi) = config.effective_theta_g_bounds();
        let (flo, fhi) = config.theta_f_bounds;
        let f = ThetaVector::new(theta_f.values().to_vec(), vec![(flo, fhi); theta_f.len()])?;
        let g = ThetaVector::new(theta_g.values().to_vec(), vec![(glo, ghi); theta_g.len()])?;
        Ok(Self { theta_f: f, theta_g: g })
    }

    /// Uniform initial estimates.
    pub fn uniform(
        n_f: usize,
        f0: f64,
        n_g: usize,
        g0: f64,
        config: &ControllerConfig,
    ) -> Result<Self, ControllerError> {
        let f = ThetaVector::uniform(n_f, f0, config.theta_f_bounds)?;
        let g = ThetaVector::uniform(n_g, g0, config.effective_theta_g_bounds())?;
        Ok(Self { theta_f: f, theta_g: g })
    }

    /// In-place form of [`adapt`].
    pub fn adapt_in_place(
        &mut self,
        e: &ErrorVector,
        basis_f: &[f64],
        basis_g: &[f64],
        u: f64,
        dt: f64,
        config: &ControllerConfig,
    ) -> Result<(), ControllerError> {
        check_len(self.theta_f.len(), basis_f.len())?;
        check_len(self.theta_g.len(), basis_g.len())?;
        check_len(config.n, e.len())?;
        let last = config.n - 1;
        let s: f64 = e.as_slice().iter().zip(&config.p_matrix).map(|(ei, row)| ei * row[last]).sum();
        if s == 0.0 {
            return Ok(());
        }
        let kf = -config.gamma_f * s * dt;
        let kg = -config.gamma_g * s * u * dt;
        if kf != 0.0 {
            self.theta_f.apply_projected(basis_f.iter().map(|b| kf * b));
        }
        if kg != 0.0 {
            self.theta_g.apply_projected(basis_g.iter().map(|b| kg * b));
        }
        Ok(())
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), ControllerError> {
    if expected == got {
        Ok(())
    } else {
        Err(ControllerError::LengthMismatch { expected, got })
    }
}

/// Desired minus measured output and its first `n - 1` derivatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorVector(Vec<f64>);

impl ErrorVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|e| e.is_finite())
    }

    /// Overwrite in place; `measured` and `desired` both start with the output
    /// itself followed by its derivatives.
    pub fn fill(&mut self, measured: &[f64], desired: &[f64]) -> Result<(), ControllerError> {
        check_len(self.0.len(), measured.len())?;
        check_len(self.0.len(), desired.len())?;
        for ((e, m), d) in self.0.iter_mut().zip(measured).zip(desired) {
            *e = d - m;
        }
        Ok(())
    }
}

/// `e_i = y_des^(i) - y^(i)` for `i = 0..n`.
///
/// `y_derivs` and `y_des` hold derivatives `1..n` and `0..n` respectively,
/// so `y_des.len() == y_derivs.len() + 1`.
pub fn error_vector(y: f64, y_derivs: &[f64], y_des: &[f64]) -> Result<ErrorVector, ControllerError> {
    check_len(y_derivs.len() + 1, y_des.len())?;
    let measured: Vec<f64> = std::iter::once(y).chain(y_derivs.iter().copied()).collect();
    let mut e = ErrorVector::zeros(y_des.len());
    e.fill(&measured, y_des)?;
    if !e.is_finite() {
        return Err(ControllerError::NonFinite("error vector"));
    }
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub u: f64,
    /// Value before saturation.
    pub u_raw: f64,
    pub f_hat: f64,
    pub g_hat: f64,
    /// The `g_min` guard replaced the estimated gain.
    pub guarded: bool,
    pub saturated: bool,
}

/// Certainty-equivalence control law.
pub fn control_law(
    state: &ControllerState,
    basis_f: &[f64],
    basis_g: &[f64],
    e: &ErrorVector,
    y_des_n: f64,
    config: &ControllerConfig,
) -> Result<ControlOutput, ControllerError> {
    check_len(state.theta_f.len(), basis_f.len())?;
    check_len(state.theta_g.len(), basis_g.len())?;
    check_len(config.gains.len(), e.len())?;
    let f_hat = weighted(state.theta_f.values(), basis_f);
    let g_hat = weighted(state.theta_g.values(), basis_g);
    control_from_estimates(f_hat, g_hat, e.as_slice(), y_des_n, config)
}

/// The control law with the estimates already evaluated.
pub fn control_from_estimates(
    f_hat: f64,
    g_hat: f64,
    e: &[f64],
    y_des_n: f64,
    config: &ControllerConfig,
) -> Result<ControlOutput, ControllerError> {
    let guarded = !(g_hat >= config.g_min);
    let g = if guarded { config.g_min } else { g_hat };
    let u_raw = (-f_hat + y_des_n + dot(&config.gains, e)) / g;
    if !u_raw.is_finite() {
        return Err(ControllerError::NonFinite("control signal"));
    }
    let u = u_raw.clamp(-config.u_max, config.u_max);
    Ok(ControlOutput { u, u_raw, f_hat, g_hat, guarded, saturated: u != u_raw })
}

/// One projected Euler step of the adaptive law.
pub fn adapt(
    state: &ControllerState,
    e: &ErrorVector,
    basis_f: &[f64],
    basis_g: &[f64],
    u: f64,
    dt: f64,
    config: &ControllerConfig,
) -> Result<ControllerState, ControllerError> {
    let mut next = state.clone();
    next.adapt_in_place(e, basis_f, basis_g, u, dt, config)?;
    Ok(next)
}

/// Integrates the ideal error dynamics `e^(n) + K . e = 0` from `e0` with RK4;
/// returns `(t, e)` samples including the initial one. Intended as a test
/// oracle for the closed loop with exact estimates.
pub fn closed_form_check(gains: &[f64], e0: &[f64], dt: f64, t_final: f64) -> Vec<(f64, Vec<f64>)> {
    assert_eq!(gains.len(), e0.len());
    let n = gains.len();
    let steps = (t_final / dt).round() as usize;
    let mut out = Vec::with_capacity(steps + 1);
    let mut e = e0.to_vec();
    out.push((0.0, e.clone()));
    for k in 1..=steps {
        e = rk4_step_dyn(&e, dt, |y| {
            let mut d: Vec<f64> = y[1..].to_vec();
            d.push(-dot(gains, y));
            debug_assert_eq!(d.len(), n);
            d
        });
        out.push((k as f64 * dt, e.clone()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(nf: usize, f0: f64, ng: usize, g0: f64) -> ControllerState {
        ControllerState::uniform(nf, f0, ng, g0, &ControllerConfig::default()).unwrap()
    }

    #[test]
    fn default_config_is_valid() {
        let c = ControllerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.p_matrix, vec![vec![1000.0, 0.0], vec![0.0, 1000.0]]);
    }

    #[test]
    fn hurwitz_checks() {
        assert!(is_hurwitz(&[4.0, 4.0]));
        assert!(is_hurwitz(&[1.0, 2.0]));
        assert!(!is_hurwitz(&[-1.0, 2.0]));
        assert!(!is_hurwitz(&[1.0, 0.0]));
        // (s+1)^3 = s^3 + 3 s^2 + 3 s + 1
        assert!(is_hurwitz(&[1.0, 3.0, 3.0]));
        // s^3 + s^2 + s + 2: K1 K2... a2 a1 = 1 < a0 = 2 -> unstable
        assert!(!is_hurwitz(&[2.0, 1.0, 1.0]));
        // (s+1)(s+2)(s+3)(s+4) = s^4 + 10 s^3 + 35 s^2 + 50 s + 24
        assert!(is_hurwitz(&[24.0, 50.0, 35.0, 10.0]));
        // s^4 + s^3 + s^2 + s + 1 has roots on the right half plane
        assert!(!is_hurwitz(&[1.0, 1.0, 1.0, 1.0]));
    }

    #[test]
    fn config_validation_paths() {
        let bad_k = ControllerConfig { gains: vec![-1.0, 1.0], ..Default::default() };
        assert_eq!(bad_k.validate().unwrap_err().field, "K");
        let bad_p = ControllerConfig { p_matrix: vec![vec![1.0, 2.0], vec![2.0, 1.0]], ..Default::default() };
        assert_eq!(bad_p.validate().unwrap_err().field, "P");
        let asym = ControllerConfig { p_matrix: vec![vec![1.0, 0.5], vec![0.0, 1.0]], ..Default::default() };
        assert_eq!(asym.validate().unwrap_err().field, "P");
        let bad_g = ControllerConfig { g_min: 0.0, ..Default::default() };
        assert_eq!(bad_g.validate().unwrap_err().field, "g_min");
    }

    #[test]
    fn error_vector_examples() {
        assert_eq!(error_vector(1.0, &[2.0], &[1.0, 2.0]).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(error_vector(10.0, &[0.0], &[9.0, 1.0]).unwrap().as_slice(), &[-1.0, 1.0]);
        assert_eq!(error_vector(3.0, &[0.7], &[8.0, 0.7]).unwrap().as_slice(), &[5.0, 0.0]);
        assert!(matches!(error_vector(1.0, &[], &[1.0, 2.0]), Err(ControllerError::LengthMismatch { .. })));
    }

    #[test]
    fn control_law_examples() {
        let cfg = ControllerConfig::default();
        let basis = [1.0];
        let s = state(1, 0.0, 1, 1.0);
        let out = control_law(&s, &basis, &basis, &ErrorVector::zeros(2), 0.0, &cfg).unwrap();
        assert_eq!(out.u, 0.0);

        let e = ErrorVector::new(vec![0.5, 0.1]);
        let out = control_law(&s, &basis, &basis, &e, 0.0, &cfg).unwrap();
        assert!((out.u - 2.4).abs() < 1e-15);
        assert!(!out.guarded && !out.saturated);

        let cfg = ControllerConfig { g_min: 0.1, u_max: 100.0, theta_g_bounds: (0.0, 10.0), ..Default::default() };
        let out = control_from_estimates(3.0, 0.0, &[0.0, 0.0], 0.0, &cfg).unwrap();
        assert!((out.u + 30.0).abs() < 1e-12);
        assert!(out.guarded);
    }

    #[test]
    fn control_law_saturates() {
        let cfg = ControllerConfig::default();
        let out = control_from_estimates(0.0, 1.0, &[100.0, 0.0], 0.0, &cfg).unwrap();
        assert_eq!(out.u, 10.0);
        assert_eq!(out.u_raw, 400.0);
        assert!(out.saturated);
    }

    #[test]
    fn adapt_examples() {
        let cfg = ControllerConfig::default();
        let s = state(2, 0.3, 2, 2.0);
        let bf = [0.25, 0.75];
        let bg = [0.5, 0.5];
        assert_eq!(adapt(&s, &ErrorVector::zeros(2), &bf, &bg, 1.0, 1e-3, &cfg).unwrap(), s);

        let frozen = ControllerConfig { gamma_f: 0.0, gamma_g: 0.0, ..cfg.clone() };
        let e = ErrorVector::new(vec![0.2, -0.4]);
        assert_eq!(adapt(&s, &e, &bf, &bg, 1.0, 1e-3, &frozen).unwrap(), s);

        // e' P b = 0 when only the first component is nonzero
        let e1 = ErrorVector::new(vec![0.01, 0.0]);
        assert_eq!(adapt(&s, &e1, &bf, &bg, 1.0, 1e-3, &cfg).unwrap(), s);

        // e' P b = 1000 * 0.01 = 10
        let e2 = ErrorVector::new(vec![0.0, 0.01]);
        let dt = 1e-3;
        let u = 0.8;
        let next = adapt(&s, &e2, &bf, &bg, u, dt, &cfg).unwrap();
        for i in 0..2 {
            let want_f = 0.3 - 0.5 * 10.0 * bf[i] * dt;
            let want_g = 2.0 - 0.5 * 10.0 * bg[i] * u * dt;
            assert!((next.theta_f.values()[i] - want_f).abs() < 1e-15);
            assert!((next.theta_g.values()[i] - want_g).abs() < 1e-15);
        }
    }

    #[test]
    fn adapt_projects_theta_g_above_g_min() {
        let cfg = ControllerConfig::default();
        let s = state(1, 0.0, 1, 0.06);
        let next = adapt(&s, &ErrorVector::new(vec![0.0, 100.0]), &[1.0], &[1.0], 10.0, 1.0, &cfg).unwrap();
        assert_eq!(next.theta_g.values()[0], cfg.g_min);
    }

    #[test]
    fn closed_form_decay() {
        let traj = closed_form_check(&[1.0, 2.0], &[1.0, 0.0], 1e-3, 10.0);
        let (t, e) = traj.last().unwrap();
        assert!((t - 10.0).abs() < 1e-9);
        let norm = e.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "{norm}");
        // analytic e1(t) = (1 + t) e^-t for the double root at -1
        for (t, e) in traj.iter().step_by(500) {
            assert!((e[0] - (1.0 + t) * (-t).exp()).abs() < 1e-9);
        }

        let zero = closed_form_check(&[4.0, 4.0], &[0.0, 0.0], 1e-3, 5.0);
        assert!(zero.iter().all(|(_, e)| e.iter().all(|v| *v == 0.0)));

        // double root at -2: e1 = (1 + 2t) e^-2t stays positive
        let crit = closed_form_check(&[4.0, 4.0], &[1.0, 0.0], 1e-3, 10.0);
        assert!(crit.iter().all(|(_, e)| e[0] > -1e-12));
    }

    proptest! {
        #[test]
        fn control_residual_identity(
            f_hat in -1e3f64..1e3, g_hat in 0.05f64..1e3,
            e1 in -50.0f64..50.0, e2 in -50.0f64..50.0, yd in -1e3f64..1e3,
        ) {
            let cfg = ControllerConfig { u_max: f64::MAX, ..Default::default() };
            let out = control_from_estimates(f_hat, g_hat, &[e1, e2], yd, &cfg).unwrap();
            let residual = g_hat * out.u + f_hat - yd - (4.0 * e1 + 4.0 * e2);
            let scale = f_hat.abs() + yd.abs() + 4.0 * (e1.abs() + e2.abs()) + 1.0;
            prop_assert!(residual.abs() <= 1e-12 * scale);
        }
    }
}
