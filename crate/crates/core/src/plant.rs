//! Nonlinear pneumatic servo actuator.
//!
//! Four states: piston position `x`, velocity `v` and the two absolute chamber
//! pressures. The rates are
//!
//! ```text
//! dx  = v
//! dv  = (A1 P1 - A2 P2 - F_fr(v) + m g sin(theta)) / (M + m)
//! dP1 = eps / (A1 (l + x)) * ( C f1(P1, u) - A1 P1 v - dh)
//! dP2 = eps / (A2 (l - x)) * (-C f2(P2, u) - A2 P2 v - dh)
//! ```
//!
//! `f1`/`f2` are orifice-style valve laws (see [`valve_flow`]); friction is
//! viscous plus tanh-smoothed Coulomb (see [`friction_force`]).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::rk4_step;
use crate::InvalidParam;

/// Supply pressure feeding the valve (Pa).
pub const SUPPLY_PRESSURE: f64 = 6.0e5;
/// Exhaust (atmospheric) pressure (Pa).
pub const ATMOSPHERIC_PRESSURE: f64 = 1.013e5;
/// Velocity width of the tanh Coulomb smoothing (m/s).
pub const COULOMB_SMOOTHING: f64 = 1.0e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("chamber pressure {pressure} Pa is below the admissible minimum {min} Pa")]
    NonPhysicalPressure { pressure: f64, min: f64 },
    #[error("piston reached the end stop at x = {x} m (half stroke {half_stroke} m)")]
    EndStop { x: f64, half_stroke: f64 },
    #[error("non-finite plant quantity: {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error(transparent)]
    Invalid(#[from] InvalidParam),
}

/// Physical constants of the actuator.
///
/// Serialized field names follow the usual symbols (`M`, `m`, `A1`, ...).
/// The default set is a representative desk-scale cylinder, not a measured rig.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantParams {
    /// Piston mass (kg).
    #[serde(rename = "M")]
    pub piston_mass: f64,
    /// Load mass (kg).
    #[serde(rename = "m")]
    pub load_mass: f64,
    /// Head-side chamber area (m^2).
    #[serde(rename = "A1")]
    pub area1: f64,
    /// Rod-side chamber area (m^2).
    #[serde(rename = "A2")]
    pub area2: f64,
    /// Half stroke (m); the piston lives in `(-l, l)`.
    #[serde(rename = "l")]
    pub half_stroke: f64,
    /// Gravitational acceleration (m/s^2).
    #[serde(rename = "g")]
    pub gravity: f64,
    /// Incline angle (rad).
    #[serde(rename = "theta")]
    pub incline: f64,
    /// Thermodynamic coefficient.
    pub epsilon: f64,
    /// Valve flow constant.
    #[serde(rename = "C")]
    pub flow_constant: f64,
    /// Heat/leakage term in the pressure equations.
    pub delta_h: f64,
    /// Viscous friction coefficient (N s/m).
    pub b_v: f64,
    /// Coulomb friction magnitude (N).
    #[serde(rename = "F_c")]
    pub coulomb: f64,
    /// Minimum admissible absolute pressure (Pa).
    #[serde(rename = "P_min")]
    pub min_pressure: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            piston_mass: 1.0,
            load_mass: 0.5,
            area1: 1.0e-3,
            area2: 1.0e-3,
            half_stroke: 0.25,
            gravity: 9.81,
            incline: 0.0,
            epsilon: 1.4,
            flow_constant: 0.01,
            delta_h: 0.0,
            b_v: 50.0,
            coulomb: 2.0,
            min_pressure: 1.0e4,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        let checks: [(&'static str, f64, bool, &'static str); 12] = [
            ("M", self.piston_mass, self.piston_mass > 0.0, "M > 0"),
            ("m", self.load_mass, self.load_mass >= 0.0, "m >= 0"),
            ("A1", self.area1, self.area1 > 0.0, "A1 > 0"),
            ("A2", self.area2, self.area2 > 0.0, "A2 > 0"),
            ("l", self.half_stroke, self.half_stroke > 0.0, "l > 0"),
            ("epsilon", self.epsilon, self.epsilon > 0.0, "epsilon > 0"),
            ("C", self.flow_constant, self.flow_constant > 0.0, "C > 0"),
            ("P_min", self.min_pressure, self.min_pressure > 0.0, "P_min > 0"),
            ("b_v", self.b_v, self.b_v >= 0.0, "b_v >= 0"),
            ("F_c", self.coulomb, self.coulomb >= 0.0, "F_c >= 0"),
            ("g", self.gravity, true, "finite"),
            ("theta", self.incline, true, "finite"),
        ];
        for (field, value, ok, rule) in checks {
            if !value.is_finite() || !ok {
                return Err(InvalidParam::new(field, format!("violates {rule} (got {value})")));
            }
        }
        if !self.delta_h.is_finite() {
            return Err(InvalidParam::new("delta_h", "must be finite"));
        }
        Ok(())
    }

    fn total_mass(&self) -> f64 {
        self.piston_mass + self.load_mass
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantState {
    /// Position (m).
    pub x: f64,
    /// Velocity (m/s).
    pub v: f64,
    /// Head-side absolute pressure (Pa).
    #[serde(rename = "P1")]
    pub p1: f64,
    /// Rod-side absolute pressure (Pa).
    #[serde(rename = "P2")]
    pub p2: f64,
}

impl Default for PlantState {
    fn default() -> Self {
        Self { x: -0.1, v: 0.010, p1: 3.5e5, p2: 3.5e5 }
    }
}

impl PlantState {
    fn to_array(self) -> [f64; 4] {
        [self.x, self.v, self.p1, self.p2]
    }

    fn from_array(a: [f64; 4]) -> Self {
        Self { x: a[0], v: a[1], p1: a[2], p2: a[3] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|q| q.is_finite())
    }

    pub fn validate(&self, params: &PlantParams) -> Result<(), InvalidParam> {
        if !self.is_finite() {
            return Err(InvalidParam::new("x", "initial state must be finite"));
        }
        if self.x.abs() >= params.half_stroke {
            return Err(InvalidParam::new("x", format!("violates |x| < l (got {})", self.x)));
        }
        if self.p1 < params.min_pressure {
            return Err(InvalidParam::new("P1", format!("violates P1 >= P_min (got {})", self.p1)));
        }
        if self.p2 < params.min_pressure {
            return Err(InvalidParam::new("P2", format!("violates P2 >= P_min (got {})", self.p2)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateDerivative {
    pub dx: f64,
    pub dv: f64,
    pub dp1: f64,
    pub dp2: f64,
}

/// Which chamber a valve port feeds.
///
/// A positive command charges chamber one from supply and vents chamber two to
/// atmosphere; a negative command does the opposite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chamber {
    One,
    Two,
}

/// Viscous plus tanh-smoothed Coulomb friction. Odd and continuous in `v`.
pub fn friction_force(v: f64, params: &PlantParams) -> f64 {
    params.b_v * v + params.coulomb * (v / COULOMB_SMOOTHING).tanh()
}

/// Orifice flow through the valve port of `chamber`, already scaled by `C`.
///
/// The supply branch uses `sqrt(|P_s - P|)` and the exhaust branch
/// `sqrt(|P - P_atm|)`; the flow direction follows the sign of `u`. For fixed
/// `p` the result is piecewise linear and non-decreasing in `u`, and zero at
/// `u = 0`.
pub fn valve_flow(p: f64, u: f64, chamber: Chamber, params: &PlantParams) -> Result<f64, PlantError> {
    if !p.is_finite() || !u.is_finite() {
        return Err(PlantError::NonFinite("valve pressure or command"));
    }
    if p < params.min_pressure {
        return Err(PlantError::NonPhysicalPressure { pressure: p, min: params.min_pressure });
    }
    Ok(params.flow_constant * u * orifice(p, u, chamber))
}

#[inline]
fn orifice(p: f64, u: f64, chamber: Chamber) -> f64 {
    let supply = match chamber {
        Chamber::One => u >= 0.0,
        Chamber::Two => u < 0.0,
    };
    if supply {
        (SUPPLY_PRESSURE - p).abs().sqrt()
    } else {
        (p - ATMOSPHERIC_PRESSURE).abs().sqrt()
    }
}

/// Right-hand side of the actuator model.
pub fn derivatives(state: &PlantState, u: f64, params: &PlantParams) -> Result<StateDerivative, PlantError> {
    derivatives_with_load(state, u, 0.0, params)
}

/// [`derivatives`] with an additional external force (N) acting on the piston.
pub fn derivatives_with_load(
    state: &PlantState,
    u: f64,
    external_force: f64,
    params: &PlantParams,
) -> Result<StateDerivative, PlantError> {
    if !state.is_finite() || !u.is_finite() || !external_force.is_finite() {
        return Err(PlantError::NonFinite("state, command or load"));
    }
    if state.x.abs() >= params.half_stroke {
        return Err(PlantError::EndStop { x: state.x, half_stroke: params.half_stroke });
    }
    let flow1 = valve_flow(state.p1, u, Chamber::One, params)?;
    let flow2 = valve_flow(state.p2, u, Chamber::Two, params)?;
    Ok(rates(state, flow1, flow2, external_force, params))
}

#[inline]
fn rates(s: &PlantState, flow1: f64, flow2: f64, load: f64, p: &PlantParams) -> StateDerivative {
    let l = p.half_stroke;
    let force =
        p.area1 * s.p1 - p.area2 * s.p2 - friction_force(s.v, p) + p.load_mass * p.gravity * p.incline.sin() + load;
    StateDerivative {
        dx: s.v,
        dv: force / p.total_mass(),
        dp1: p.epsilon / (p.area1 * (l + s.x)) * (flow1 - p.area1 * s.p1 * s.v - p.delta_h),
        dp2: p.epsilon / (p.area2 * (l - s.x)) * (-flow2 - p.area2 * s.p2 * s.v - p.delta_h),
    }
}

/// Result of one integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: PlantState,
    /// Set when a pressure had to be lifted back to `P_min`.
    pub clamped: bool,
}

/// Advance the plant by `dt` with a zero-order-hold command (classic RK4).
pub fn step(state: &PlantState, u: f64, dt: f64, params: &PlantParams) -> Result<StepOutcome, PlantError> {
    step_with_load(state, u, 0.0, dt, params)
}

/// [`step`] with a constant external force over the interval.
pub fn step_with_load(
    state: &PlantState,
    u: f64,
    external_force: f64,
    dt: f64,
    params: &PlantParams,
) -> Result<StepOutcome, PlantError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(PlantError::InvalidStep(dt));
    }
    // Validates the starting point with the strict public contract.
    derivatives_with_load(state, u, external_force, params)?;

    let pmin = params.min_pressure;
    let l = params.half_stroke;
    let next = rk4_step(&state.to_array(), dt, |y| {
        let s = PlantState::from_array(*y);
        if s.x.abs() >= l {
            return Err(PlantError::EndStop { x: s.x, half_stroke: l });
        }
        if !s.is_finite() {
            return Err(PlantError::NonFinite("intermediate stage"));
        }
        // Intermediate stages may dip under P_min; evaluate them on the clamped
        // pressure so the valve law stays defined.
        let s = PlantState { p1: s.p1.max(pmin), p2: s.p2.max(pmin), ..s };
        let f1 = params.flow_constant * u * orifice(s.p1, u, Chamber::One);
        let f2 = params.flow_constant * u * orifice(s.p2, u, Chamber::Two);
        let d = rates(&s, f1, f2, external_force, params);
        Ok([d.dx, d.dv, d.dp1, d.dp2])
    })?;

    let mut out = PlantState::from_array(next);
    if !out.is_finite() {
        return Err(PlantError::NonFinite("integrated state"));
    }
    if out.x.abs() >= l {
        return Err(PlantError::EndStop { x: out.x, half_stroke: l });
    }
    let mut clamped = false;
    if out.p1 < pmin {
        out.p1 = pmin;
        clamped = true;
    }
    if out.p2 < pmin {
        out.p2 = pmin;
        clamped = true;
    }
    Ok(StepOutcome { state: out, clamped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn balanced() -> PlantState {
        PlantState { x: 0.05, v: 0.0, p1: 3.0e5, p2: 3.0e5 }
    }

    #[test]
    fn friction_examples() {
        let p = PlantParams::default();
        assert_eq!(friction_force(0.0, &p), 0.0);
        let viscous = PlantParams { b_v: 2.0, coulomb: 0.0, ..p };
        assert_eq!(friction_force(1.5, &viscous), 3.0);
        let coulomb = PlantParams { b_v: 0.0, coulomb: 1.0, ..p };
        let v = 50.0 * COULOMB_SMOOTHING;
        assert!((friction_force(v, &coulomb) - 50.0f64.tanh()).abs() < 1e-15);
        assert!((friction_force(v, &coulomb) - 1.0).abs() < 1e-12);
        for v in [-0.3, -1e-4, 2e-3, 7.0] {
            assert_eq!(friction_force(-v, &p), -friction_force(v, &p));
        }
    }

    #[test]
    fn valve_examples() {
        let p = PlantParams { flow_constant: 1.0, ..PlantParams::default() };
        assert_eq!(valve_flow(4.0e5, 0.0, Chamber::One, &p).unwrap(), 0.0);
        assert_eq!(valve_flow(4.0e5, 0.0, Chamber::Two, &p).unwrap(), 0.0);
        // positive command vents chamber two
        assert_eq!(valve_flow(ATMOSPHERIC_PRESSURE, 1.0, Chamber::Two, &p).unwrap(), 0.0);
        let q = valve_flow(3.0e5, 0.5, Chamber::One, &p).unwrap();
        assert!((q - 0.5 * 3.0e5f64.sqrt()).abs() < 1e-9);
        assert!(matches!(valve_flow(10.0, 1.0, Chamber::One, &p), Err(PlantError::NonPhysicalPressure { .. })));
    }

    #[test]
    fn valve_monotone_in_command() {
        let p = PlantParams::default();
        for chamber in [Chamber::One, Chamber::Two] {
            for pressure in [2.0e4, 1.013e5, 3.0e5, 6.0e5, 7.0e5] {
                let mut last = f64::NEG_INFINITY;
                for i in -100..=100 {
                    let q = valve_flow(pressure, i as f64 * 0.1, chamber, &p).unwrap();
                    assert!(q >= last, "{chamber:?} P={pressure} u={}", i as f64 * 0.1);
                    last = q;
                }
            }
        }
    }

    #[test]
    fn derivative_examples() {
        let p = PlantParams { load_mass: 0.0, b_v: 0.0, coulomb: 0.0, ..PlantParams::default() };
        let s = PlantState { x: 0.0, v: 0.0, p1: 4.0e5, p2: 3.0e5 };
        let d = derivatives(&s, 0.0, &p).unwrap();
        assert!((d.dv - 100.0).abs() < 1e-9);
        assert_eq!(d.dx, 0.0);

        let d = derivatives(&balanced(), 0.0, &PlantParams::default()).unwrap();
        assert_eq!((d.dx, d.dv, d.dp1, d.dp2), (0.0, 0.0, 0.0, 0.0));

        let moving = PlantState { v: 3.2, ..balanced() };
        assert_eq!(derivatives(&moving, 0.7, &PlantParams::default()).unwrap().dx, 3.2);
    }

    #[test]
    fn derivative_errors() {
        let p = PlantParams::default();
        let out = PlantState { x: 0.25, ..balanced() };
        assert!(matches!(derivatives(&out, 0.0, &p), Err(PlantError::EndStop { .. })));
        let nan = PlantState { v: f64::NAN, ..balanced() };
        assert!(matches!(derivatives(&nan, 0.0, &p), Err(PlantError::NonFinite(_))));
        assert!(derivatives(&balanced(), f64::INFINITY, &p).is_err());
    }

    #[test]
    fn rest_state_is_fixed_point() {
        let p = PlantParams::default();
        let s = balanced();
        let next = step(&s, 0.0, 1e-3, &p).unwrap();
        assert_eq!(next.state, s);
        assert!(!next.clamped);
    }

    #[test]
    fn step_is_deterministic() {
        let p = PlantParams::default();
        let s = PlantState::default();
        let a = step(&s, 0.8, 1e-3, &p).unwrap();
        let b = step(&s, 0.8, 1e-3, &p).unwrap();
        assert_eq!(a.state.to_array().map(f64::to_bits), b.state.to_array().map(f64::to_bits));
    }

    #[test]
    fn step_rejects_bad_dt() {
        let p = PlantParams::default();
        assert!(matches!(step(&balanced(), 0.0, 0.0, &p), Err(PlantError::InvalidStep(_))));
        assert!(step(&balanced(), 0.0, f64::NAN, &p).is_err());
    }

    #[test]
    fn end_stop_is_signalled() {
        let p = PlantParams::default();
        let mut s = PlantState { x: 0.2, v: 2.0, ..balanced() };
        let mut hit = false;
        for _ in 0..1000 {
            match step(&s, 10.0, 1e-3, &p) {
                Ok(o) => s = o.state,
                Err(PlantError::EndStop { .. }) => {
                    hit = true;
                    break;
                }
                Err(e) => panic!("unexpected {e}"),
            }
        }
        assert!(hit);
    }

    #[test]
    fn step_halving_error_is_fourth_order() {
        // One step of dt vs two of dt/2: the difference scales like dt^5
        // (local error), so it is bounded by K dt^4 with room to spare.
        let p = PlantParams::default();
        let s = PlantState::default();
        let mut diffs = Vec::new();
        for dt in [4e-4, 2e-4, 1e-4] {
            let one = step(&s, 0.5, dt, &p).unwrap().state;
            let half = step(&s, 0.5, dt / 2.0, &p).unwrap().state;
            let two = step(&half, 0.5, dt / 2.0, &p).unwrap().state;
            diffs.push((one.v - two.v).abs());
        }
        const K: f64 = 1.0e4;
        for (d, dt) in diffs.iter().zip([4e-4f64, 2e-4, 1e-4]) {
            assert!(*d <= K * dt.powi(4), "diff {d} at dt {dt}");
        }
    }

    #[test]
    fn default_trajectory_keeps_pressures_positive() {
        let p = PlantParams::default();
        let mut s = PlantState::default();
        for k in 0..5000 {
            let u = 2.0 * (k as f64 * 1e-3 * 3.0).sin();
            let o = step(&s, u, 1e-3, &p).unwrap();
            assert!(o.clamped || (o.state.p1 >= p.min_pressure && o.state.p2 >= p.min_pressure));
            s = o.state;
        }
    }
}
