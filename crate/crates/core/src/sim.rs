//! Closed-loop harness: desired trajectory, plant + adaptive fuzzy controller,
//! tracking metrics, the candidate encoding tuned by PSO, and the
//! baseline-vs-tuned comparison.
//!
//! Loop order for step `k` (time `t = k dt`):
//!
//! 1. measure `y` (velocity in output units) and update the filtered `y'`
//! 2. build `e = y_des - y` and `e' = y_des' - y'_filtered`
//! 3. evaluate the fuzzy basis on `(y, y'_filtered)` and the control law
//! 4. advance the plant by `dt` with the held command
//! 5. adapt `theta_f`, `theta_g` with the same basis and command

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{control_law, ControllerConfig, ControllerError, ControllerState, ErrorVector};
use crate::fuzzy::{uniform_partition, FuzzyError, LinguisticVariable, RuleBase};
use crate::plant::{step_with_load, PlantError, PlantParams, PlantState};
use crate::pso::{optimize, PsoError, PsoSettings, StopReason, Workers};
use crate::InvalidParam;

/// Additive cost for runs that hit an end stop or otherwise fail.
pub const FAILURE_PENALTY: f64 = 1.0e6;

pub const FLAG_GUARD: u8 = 1;
pub const FLAG_SATURATED: u8 = 2;
pub const FLAG_PRESSURE_CLAMP: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("time {t} outside the trajectory horizon [0, {duration}]")]
    TimeOutOfRange { t: f64, duration: f64 },
    #[error("error stream is empty")]
    EmptyStream,
    #[error("candidate has {got} entries, encoding expects {expected}")]
    CandidateLength { expected: usize, got: usize },
    #[error(transparent)]
    Invalid(#[from] InvalidParam),
    #[error(transparent)]
    Fuzzy(#[from] FuzzyError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Pso(#[from] PsoError),
}

/// Optional sinusoidal force acting on the piston.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Disturbance {
    /// Force amplitude (N).
    pub amplitude: f64,
    /// Frequency (Hz).
    pub frequency: f64,
}

impl Disturbance {
    fn force(&self, t: f64) -> f64 {
        self.amplitude * (2.0 * std::f64::consts::PI * self.frequency * t).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Integrator step (s).
    pub dt: f64,
    /// Horizon (s).
    pub t_final: f64,
    /// Keep every `log_every`-th sample in the trajectory.
    pub log_every: usize,
    /// Output units per m/s of piston velocity (1000 reports mm/s).
    pub output_scale: f64,
    /// Time constant of the output-derivative filter (s).
    pub derivative_filter: f64,
    pub initial: PlantState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<Disturbance>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1.0e-3,
            t_final: 10.0,
            log_every: 10,
            output_scale: 1.0e3,
            derivative_filter: 1.0e-2,
            initial: PlantState::default(),
            disturbance: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self, plant: &PlantParams) -> Result<(), InvalidParam> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(InvalidParam::new("dt", format!("violates dt > 0 (got {})", self.dt)));
        }
        if !(self.t_final >= self.dt) || !self.t_final.is_finite() {
            return Err(InvalidParam::new("t_final", format!("violates t_final >= dt (got {})", self.t_final)));
        }
        if self.log_every < 1 {
            return Err(InvalidParam::new("log_every", "violates log_every >= 1"));
        }
        if !(self.output_scale > 0.0) || !self.output_scale.is_finite() {
            return Err(InvalidParam::new("output_scale", "violates output_scale > 0"));
        }
        if !(self.derivative_filter > 0.0) || !self.derivative_filter.is_finite() {
            return Err(InvalidParam::new("derivative_filter", "violates derivative_filter > 0"));
        }
        if let Some(d) = &self.disturbance {
            if !d.amplitude.is_finite() || !(d.frequency >= 0.0) || !d.frequency.is_finite() {
                return Err(InvalidParam::new("disturbance", "amplitude and frequency must be finite, frequency >= 0"));
            }
        }
        self.initial.validate(plant).map_err(|e| e.within("initial"))
    }

    /// Number of integration steps covering the horizon.
    pub fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Desired-output endpoints; the shape is a quintic smoothstep over the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryConfig {
    pub y0: f64,
    pub y1: f64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self { y0: 9.0, y1: 15.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectorySpec {
    pub y0: f64,
    pub y1: f64,
    pub duration: f64,
}

impl TrajectorySpec {
    pub fn new(y0: f64, y1: f64, duration: f64) -> Result<Self, InvalidParam> {
        if !y0.is_finite() || !y1.is_finite() {
            return Err(InvalidParam::new("y0", "endpoints must be finite"));
        }
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(InvalidParam::new("duration", "violates duration > 0"));
        }
        Ok(Self { y0, y1, duration })
    }
}

/// Desired output and its first two derivatives at `t`.
///
/// `y = y0 + (y1 - y0) (10 s^3 - 15 s^4 + 6 s^5)` with `s = t / duration`; both
/// derivatives vanish at the endpoints.
pub fn desired(spec: &TrajectorySpec, t: f64) -> Result<(f64, f64, f64), SimError> {
    if !(0.0..=spec.duration).contains(&t) {
        return Err(SimError::TimeOutOfRange { t, duration: spec.duration });
    }
    Ok(desired_unchecked(spec, t))
}

#[inline]
fn desired_unchecked(spec: &TrajectorySpec, t: f64) -> (f64, f64, f64) {
    let d = spec.y1 - spec.y0;
    let big_t = spec.duration;
    let s = t / big_t;
    let s2 = s * s;
    let s3 = s2 * s;
    let y = spec.y0 + d * s3 * (10.0 - 15.0 * s + 6.0 * s2);
    let yd = d * 30.0 * s2 * (1.0 - 2.0 * s + s2) / big_t;
    let ydd = d * 60.0 * s * (1.0 - 3.0 * s + 2.0 * s2) / (big_t * big_t);
    (y, yd, ydd)
}

/// One fuzzy input: a uniform partition over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSpec {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub sets: usize,
}

/// Initial consequent values: one value for every rule or one per rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThetaInit {
    Uniform(f64),
    PerRule(Vec<f64>),
}

impl ThetaInit {
    pub fn expand(&self, len: usize) -> Result<Vec<f64>, InvalidParam> {
        match self {
            ThetaInit::Uniform(v) => Ok(vec![*v; len]),
            ThetaInit::PerRule(v) if v.len() == len => Ok(v.clone()),
            ThetaInit::PerRule(v) => Err(InvalidParam::new("", format!("needs {len} entries, got {}", v.len()))),
        }
    }
}

/// Fuzzy structure of both estimators.
///
/// The two controller inputs are the measured output and its filtered
/// derivative; the rule base is the complete grid over their partitions. The
/// output partitions span the consequent universes that the swarm searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuzzyConfig {
    pub inputs: Vec<InputSpec>,
    /// Per-input stretch of the universe about its center.
    pub input_scale: Vec<f64>,
    /// Number of output sets of each estimator.
    pub output_sets: usize,
    /// Consequent universe of `f_hat`.
    pub output_f: (f64, f64),
    /// Consequent universe of `g_hat`.
    pub output_g: (f64, f64),
    pub theta_f_init: ThetaInit,
    pub theta_g_init: ThetaInit,
}

impl Default for FuzzyConfig {
    fn default() -> Self {
        Self {
            inputs: vec![
                InputSpec { name: "y".into(), lo: 0.0, hi: 30.0, sets: 10 },
                InputSpec { name: "y_dot".into(), lo: -60.0, hi: 60.0, sets: 10 },
            ],
            input_scale: vec![1.0, 1.0],
            output_sets: 14,
            output_f: (-6.0e4, 6.0e4),
            output_g: (1.0e3, 1.0e5),
            theta_f_init: ThetaInit::Uniform(0.0),
            theta_g_init: ThetaInit::Uniform(2.0e4),
        }
    }
}

impl FuzzyConfig {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        if self.inputs.is_empty() {
            return Err(InvalidParam::new("inputs", "needs at least one input"));
        }
        for (i, inp) in self.inputs.iter().enumerate() {
            if !(inp.lo.is_finite() && inp.hi.is_finite() && inp.lo < inp.hi) {
                return Err(InvalidParam::new(format!("inputs[{i}]"), "violates lo < hi"));
            }
            if inp.sets < 2 {
                return Err(InvalidParam::new(format!("inputs[{i}].sets"), "violates sets >= 2"));
            }
        }
        if self.input_scale.len() != self.inputs.len() {
            return Err(InvalidParam::new("input_scale", "needs one entry per input"));
        }
        if self.input_scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(InvalidParam::new("input_scale", "entries must be > 0"));
        }
        if self.output_sets < 2 {
            return Err(InvalidParam::new("output_sets", "violates output_sets >= 2"));
        }
        for (field, (lo, hi)) in [("output_f", self.output_f), ("output_g", self.output_g)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(InvalidParam::new(field, "violates lo < hi"));
            }
        }
        let n = self.rule_count();
        self.theta_f_init.expand(n).map_err(|e| InvalidParam::new("theta_f_init", e.reason))?;
        self.theta_g_init.expand(n).map_err(|e| InvalidParam::new("theta_g_init", e.reason))?;
        Ok(())
    }

    pub fn rule_count(&self) -> usize {
        self.inputs.iter().map(|i| i.sets).product()
    }

    /// Input variables with `input_scale` applied.
    pub fn input_variables(&self) -> Result<Vec<LinguisticVariable>, FuzzyError> {
        self.inputs
            .iter()
            .zip(&self.input_scale)
            .map(|(inp, &s)| uniform_partition(inp.name.clone(), (inp.lo, inp.hi), inp.sets)?.scaled(s))
            .collect()
    }

    pub fn rule_base(&self) -> Result<RuleBase, FuzzyError> {
        RuleBase::complete_grid(self.input_variables()?)
    }

    /// Output partitions of `f_hat` and `g_hat`.
    pub fn output_variables(&self) -> Result<(LinguisticVariable, LinguisticVariable), FuzzyError> {
        Ok((
            uniform_partition("f_hat", self.output_f, self.output_sets)?,
            uniform_partition("g_hat", self.output_g, self.output_sets)?,
        ))
    }
}

/// Everything needed to run the closed loop with a given initial controller
/// state.
#[derive(Debug, Clone)]
pub struct LoopSetup {
    pub plant: PlantParams,
    pub controller: ControllerConfig,
    pub rule_base: RuleBase,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub y_des: f64,
    pub y: f64,
    pub u: f64,
    pub e1: f64,
    pub e2: f64,
    pub theta_f_norm: f64,
    pub theta_g_norm: f64,
    pub p1: f64,
    pub p2: f64,
    pub x: f64,
    pub flags: u8,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub rows: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub ise: f64,
    pub iae: f64,
    pub rmse: f64,
    pub max_abs_error: f64,
    pub final_error: f64,
}

/// Trapezoidal ISE/IAE over uniformly sampled errors, with
/// `RMSE = sqrt(ISE / T)` for the covered span `T`.
pub fn metrics(errors: &[f64], dt: f64) -> Result<Metrics, SimError> {
    let (&last, _) = errors.split_last().ok_or(SimError::EmptyStream)?;
    let mut ise = 0.0;
    let mut iae = 0.0;
    for w in errors.windows(2) {
        ise += 0.5 * dt * (w[0] * w[0] + w[1] * w[1]);
        iae += 0.5 * dt * (w[0].abs() + w[1].abs());
    }
    let span = (errors.len() - 1) as f64 * dt;
    let rmse = if span > 0.0 { (ise / span).sqrt() } else { 0.0 };
    let max_abs_error = errors.iter().fold(0.0f64, |m, e| m.max(e.abs()));
    Ok(Metrics { ise, iae, rmse, max_abs_error, final_error: last.abs() })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Logging {
    /// Keep decimated trajectory rows.
    Full,
    /// Metrics only.
    MetricsOnly,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub metrics: Metrics,
    pub final_state: ControllerState,
    /// Why the run stopped early, if it did.
    pub fault: Option<String>,
    /// Steps actually integrated.
    pub steps: usize,
    pub guard_steps: usize,
    pub saturated_steps: usize,
    pub clamp_steps: usize,
}

impl RunOutcome {
    pub fn truncated(&self) -> bool {
        self.fault.is_some()
    }
}

/// Runs the plant and adaptive controller over the horizon.
///
/// Plant faults (end stop, non-finite state) and non-finite control signals
/// end the run early; the outcome then carries the fault and metrics over the
/// simulated span.
pub fn run_closed_loop(
    setup: &LoopSetup,
    initial: ControllerState,
    sim: &SimConfig,
    spec: &TrajectorySpec,
    logging: Logging,
) -> Result<RunOutcome, SimError> {
    let rb = &setup.rule_base;
    let ctrl = &setup.controller;
    if ctrl.n != 2 {
        return Err(InvalidParam::new("controller.n", "the servo loop uses a second-order canonical form").into());
    }
    if initial.theta_f.len() != rb.theta_dim() || initial.theta_g.len() != rb.theta_dim() {
        return Err(ControllerError::LengthMismatch { expected: rb.theta_dim(), got: initial.theta_f.len() }.into());
    }
    let dt = sim.dt;
    let steps = sim.steps();
    let scale = sim.output_scale;
    let alpha = 1.0 - (-dt / sim.derivative_filter).exp();

    let mut state = initial;
    let mut plant = sim.initial;
    let mut errors = Vec::with_capacity(steps + 1);
    let mut rows = Vec::new();
    if logging == Logging::Full {
        rows.reserve(steps / sim.log_every + 1);
    }
    let mut scratch = vec![0.0; rb.scratch_len()];
    let mut basis = vec![0.0; rb.theta_dim()];
    let mut e = ErrorVector::zeros(2);

    let mut y_prev = scale * plant.v;
    let mut y_dot = 0.0;
    let mut clamped_last = false;
    let (mut guard_steps, mut saturated_steps, mut clamp_steps) = (0, 0, 0);
    let mut fault = None;
    let mut k = 0;
    loop {
        let t = k as f64 * dt;
        let y = scale * plant.v;
        if k > 0 {
            y_dot += alpha * ((y - y_prev) / dt - y_dot);
        }
        y_prev = y;
        let (yd, yd_dot, yd_ddot) = desired_unchecked(spec, t.min(spec.duration));
        e.fill(&[y, y_dot], &[yd, yd_dot])?;
        errors.push(e.as_slice()[0]);

        let last = k == steps;
        let mut flags = if clamped_last { FLAG_PRESSURE_CLAMP } else { 0 };
        let mut u = 0.0;
        let control = if last {
            None
        } else {
            rb.basis_into(&[y, y_dot], &mut scratch, &mut basis)?;
            match control_law(&state, &basis, &basis, &e, yd_ddot, ctrl) {
                Ok(out) => {
                    u = out.u;
                    if out.guarded {
                        flags |= FLAG_GUARD;
                        guard_steps += 1;
                    }
                    if out.saturated {
                        flags |= FLAG_SATURATED;
                        saturated_steps += 1;
                    }
                    Some(out)
                }
                Err(err @ ControllerError::NonFinite(_)) => {
                    fault = Some(err.to_string());
                    None
                }
                Err(err) => return Err(err.into()),
            }
        };

        if logging == Logging::Full && (k % sim.log_every == 0 || (fault.is_some() && last)) {
            rows.push(TrajectoryRow {
                t,
                y_des: yd,
                y,
                u,
                e1: e.as_slice()[0],
                e2: e.as_slice()[1],
                theta_f_norm: state.theta_f.norm(),
                theta_g_norm: state.theta_g.norm(),
                p1: plant.p1,
                p2: plant.p2,
                x: plant.x,
                flags,
            });
        }
        if last || control.is_none() {
            break;
        }

        let load = sim.disturbance.map_or(0.0, |d| d.force(t));
        match step_with_load(&plant, u, load, dt, &setup.plant) {
            Ok(next) => {
                plant = next.state;
                clamped_last = next.clamped;
                if next.clamped {
                    clamp_steps += 1;
                }
            }
            Err(err) => {
                fault = Some(err.to_string());
                break;
            }
        }
        state.adapt_in_place(&e, &basis, &basis, u, dt, ctrl)?;
        k += 1;
    }

    let metrics = metrics(&errors, dt)?;
    Ok(RunOutcome {
        trajectory: Trajectory { rows },
        metrics,
        final_state: state,
        fault,
        steps: k,
        guard_steps,
        saturated_steps,
        clamp_steps,
    })
}

/// Which parameter blocks the swarm tunes and over what ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncodingConfig {
    pub tune_theta_f: bool,
    pub tune_theta_g: bool,
    pub tune_input_scale: bool,
    pub tune_gains: bool,
    pub input_scale_range: (f64, f64),
    pub gain_range: (f64, f64),
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            tune_theta_f: true,
            tune_theta_g: true,
            tune_input_scale: true,
            tune_gains: true,
            input_scale_range: (0.5, 2.0),
            gain_range: (0.5, 100.0),
        }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        for (field, (lo, hi), min) in
            [("input_scale_range", self.input_scale_range, 0.0), ("gain_range", self.gain_range, 0.0)]
        {
            if !(lo.is_finite() && hi.is_finite() && lo > min && lo < hi) {
                return Err(InvalidParam::new(field, "violates 0 < lo < hi"));
            }
        }
        if !(self.tune_theta_f || self.tune_theta_g || self.tune_input_scale || self.tune_gains) {
            return Err(InvalidParam::new("tune_gains", "at least one block must be tuned"));
        }
        Ok(())
    }
}

/// The tunable part of an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Tunables {
    pub theta_f: Vec<f64>,
    pub theta_g: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub gains: Vec<f64>,
}

/// All fixed inputs of the closed-loop experiment.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Experiment {
    pub plant: PlantParams,
    pub fuzzy: FuzzyConfig,
    pub controller: ControllerConfig,
    pub sim: SimConfig,
    pub trajectory: TrajectoryConfig,
    pub encoding: EncodingConfig,
}

impl Experiment {
    pub fn validate(&self) -> Result<(), InvalidParam> {
        self.plant.validate().map_err(|e| e.within("plant"))?;
        self.fuzzy.validate().map_err(|e| e.within("fuzzy"))?;
        self.controller.validate().map_err(|e| e.within("controller"))?;
        self.sim.validate(&self.plant).map_err(|e| e.within("sim"))?;
        self.encoding.validate().map_err(|e| e.within("pso.encoding"))?;
        if self.controller.n != 2 {
            return Err(InvalidParam::new("controller.n", "the servo loop uses n = 2"));
        }
        let n = self.fuzzy.rule_count();
        let (flo, fhi) = self.controller.theta_f_bounds;
        let (glo, ghi) = self.controller.effective_theta_g_bounds();
        for v in self.fuzzy.theta_f_init.expand(n)? {
            if !(flo..=fhi).contains(&v) {
                return Err(InvalidParam::new("fuzzy.theta_f_init", "lies outside controller.theta_f_bounds"));
            }
        }
        for v in self.fuzzy.theta_g_init.expand(n)? {
            if !(glo..=ghi).contains(&v) {
                return Err(InvalidParam::new("fuzzy.theta_g_init", "lies outside controller.theta_g_bounds"));
            }
        }
        TrajectorySpec::new(self.trajectory.y0, self.trajectory.y1, self.sim.t_final)
            .map_err(|e| e.within("trajectory"))?;
        Ok(())
    }

    pub fn spec(&self) -> Result<TrajectorySpec, InvalidParam> {
        TrajectorySpec::new(self.trajectory.y0, self.trajectory.y1, self.sim.t_final)
    }

    /// The hand-set configuration as tunables.
    pub fn baseline(&self) -> Result<Tunables, InvalidParam> {
        let n = self.fuzzy.rule_count();
        Ok(Tunables {
            theta_f: self.fuzzy.theta_f_init.expand(n)?,
            theta_g: self.fuzzy.theta_g_init.expand(n)?,
            input_scale: self.fuzzy.input_scale.clone(),
            gains: self.controller.gains.clone(),
        })
    }

    /// Copy of the experiment with `t` substituted.
    pub fn with_tunables(&self, t: &Tunables) -> Experiment {
        let mut out = self.clone();
        out.fuzzy.theta_f_init = ThetaInit::PerRule(t.theta_f.clone());
        out.fuzzy.theta_g_init = ThetaInit::PerRule(t.theta_g.clone());
        out.fuzzy.input_scale = t.input_scale.clone();
        out.controller.gains = t.gains.clone();
        out
    }

    /// Builds the loop and runs it with the experiment's own initial estimates.
    pub fn run(&self, logging: Logging) -> Result<RunOutcome, SimError> {
        let setup =
            LoopSetup { plant: self.plant, controller: self.controller.clone(), rule_base: self.fuzzy.rule_base()? };
        let n = setup.rule_base.theta_dim();
        let state = ControllerState::new(
            crate::fuzzy::ThetaVector::new(
                self.fuzzy.theta_f_init.expand(n)?,
                vec![self.controller.theta_f_bounds; n],
            )?,
            crate::fuzzy::ThetaVector::new(
                self.fuzzy.theta_g_init.expand(n)?,
                vec![self.controller.effective_theta_g_bounds(); n],
            )?,
            &self.controller,
        )?;
        run_closed_loop(&setup, state, &self.sim, &self.spec()?, logging)
    }
}

/// Maps tunables to a flat PSO position and back. Frozen blocks keep their
/// baseline values.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateEncoding {
    config: EncodingConfig,
    baseline: Tunables,
    theta_f_range: (f64, f64),
    theta_g_range: (f64, f64),
}

impl CandidateEncoding {
    pub fn new(experiment: &Experiment) -> Result<Self, InvalidParam> {
        let (flo, fhi) = experiment.controller.theta_f_bounds;
        let (glo, ghi) = experiment.controller.effective_theta_g_bounds();
        let (of, og) = (experiment.fuzzy.output_f, experiment.fuzzy.output_g);
        let theta_f_range = (of.0.max(flo), of.1.min(fhi));
        let theta_g_range = (og.0.max(glo), og.1.min(ghi));
        if theta_f_range.0 >= theta_f_range.1 || theta_g_range.0 >= theta_g_range.1 {
            return Err(InvalidParam::new(
                "fuzzy.output_f",
                "output universes must overlap the controller projection bounds",
            ));
        }
        Ok(Self { config: experiment.encoding.clone(), baseline: experiment.baseline()?, theta_f_range, theta_g_range })
    }

    fn blocks(&self) -> [(bool, usize, (f64, f64)); 4] {
        let b = &self.baseline;
        [
            (self.config.tune_theta_f, b.theta_f.len(), self.theta_f_range),
            (self.config.tune_theta_g, b.theta_g.len(), self.theta_g_range),
            (self.config.tune_input_scale, b.input_scale.len(), self.config.input_scale_range),
            (self.config.tune_gains, b.gains.len(), self.config.gain_range),
        ]
    }

    pub fn dims(&self) -> usize {
        self.blocks().iter().filter(|b| b.0).map(|b| b.1).sum()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.blocks().iter().filter(|b| b.0).flat_map(|&(_, len, range)| std::iter::repeat_n(range, len)).collect()
    }

    pub fn baseline(&self) -> &Tunables {
        &self.baseline
    }

    pub fn encode(&self, t: &Tunables) -> Vec<f64> {
        let parts = [&t.theta_f, &t.theta_g, &t.input_scale, &t.gains];
        self.blocks().iter().zip(parts).filter(|(b, _)| b.0).flat_map(|(_, p)| p.iter().copied()).collect()
    }

    pub fn decode(&self, candidate: &[f64]) -> Result<Tunables, SimError> {
        if candidate.len() != self.dims() {
            return Err(SimError::CandidateLength { expected: self.dims(), got: candidate.len() });
        }
        let b = &self.baseline;
        let mut out = b.clone();
        let mut rest = candidate;
        let mut take = |tuned: bool, target: &mut Vec<f64>| {
            if tuned {
                let (head, tail) = rest.split_at(target.len());
                target.copy_from_slice(head);
                rest = tail;
            }
        };
        take(self.config.tune_theta_f, &mut out.theta_f);
        take(self.config.tune_theta_g, &mut out.theta_g);
        take(self.config.tune_input_scale, &mut out.input_scale);
        take(self.config.tune_gains, &mut out.gains);
        Ok(out)
    }
}

/// PSO cost of a candidate: ISE of the decoded closed loop, plus
/// [`FAILURE_PENALTY`] when the run is cut short or cannot be built.
pub fn fitness_from_candidate(candidate: &[f64], encoding: &CandidateEncoding, experiment: &Experiment) -> f64 {
    let Ok(t) = encoding.decode(candidate) else {
        return 2.0 * FAILURE_PENALTY;
    };
    let exp = experiment.with_tunables(&t);
    if exp.validate().is_err() {
        return 2.0 * FAILURE_PENALTY;
    }
    match exp.run(Logging::MetricsOnly) {
        Ok(out) => cost_of(&out),
        Err(_) => 2.0 * FAILURE_PENALTY,
    }
}

fn cost_of(out: &RunOutcome) -> f64 {
    let ise = if out.metrics.ise.is_finite() { out.metrics.ise.min(FAILURE_PENALTY) } else { FAILURE_PENALTY };
    if out.truncated() {
        ise + FAILURE_PENALTY
    } else {
        ise
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ArmReport {
    pub metrics: Metrics,
    pub fault: Option<String>,
    pub guard_steps: usize,
    pub saturated_steps: usize,
    pub clamp_steps: usize,
    pub gains: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub final_theta_f_norm: f64,
    pub final_theta_g_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchSummary {
    pub dims: usize,
    pub iterations: usize,
    pub stop_reason: StopReason,
    pub best_fitness: f64,
    pub history: Vec<f64>,
    pub mean_history: Vec<f64>,
}

/// Outcome of running the baseline and (optionally) the tuned controller.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub baseline: RunOutcome,
    pub baseline_tunables: Tunables,
    pub optimized: Option<(RunOutcome, Tunables)>,
    pub search: Option<SearchSummary>,
}

impl Comparison {
    /// `ISE_baseline / ISE_optimized`; 1 when both are zero.
    pub fn improvement_ratio(&self) -> Option<f64> {
        let (opt, _) = self.optimized.as_ref()?;
        let (b, o) = (self.baseline.metrics.ise, opt.metrics.ise);
        Some(if o == 0.0 {
            if b == 0.0 {
                1.0
            } else {
                f64::INFINITY
            }
        } else {
            b / o
        })
    }

    pub fn arm_report(out: &RunOutcome, t: &Tunables) -> ArmReport {
        ArmReport {
            metrics: out.metrics,
            fault: out.fault.clone(),
            guard_steps: out.guard_steps,
            saturated_steps: out.saturated_steps,
            clamp_steps: out.clamp_steps,
            gains: t.gains.clone(),
            input_scale: t.input_scale.clone(),
            final_theta_f_norm: out.final_state.theta_f.norm(),
            final_theta_g_norm: out.final_state.theta_g.norm(),
        }
    }
}

/// Tunes the experiment's fuzzy parameters with PSO, seeding particle 0 with
/// the baseline. With `max_iters == 0` no search runs and the baseline is
/// returned as the best candidate.
pub fn tune(
    experiment: &Experiment,
    pso: &PsoSettings,
    workers: Workers,
) -> Result<(Tunables, SearchSummary), SimError> {
    experiment.validate()?;
    pso.validate().map_err(|e| e.within("pso"))?;
    let encoding = CandidateEncoding::new(experiment)?;
    let baseline = encoding.encode(encoding.baseline());
    if pso.max_iters == 0 {
        let best = fitness_from_candidate(&baseline, &encoding, experiment);
        return Ok((
            encoding.baseline().clone(),
            SearchSummary {
                dims: encoding.dims(),
                iterations: 0,
                stop_reason: StopReason::Skipped,
                best_fitness: best,
                history: vec![],
                mean_history: vec![],
            },
        ));
    }
    let config = pso.with_bounds(encoding.bounds());
    let fitness = |x: &[f64]| fitness_from_candidate(x, &encoding, experiment);
    let result = optimize(&fitness, &config, &[baseline], workers)?;
    let best = encoding.decode(&result.best_position)?;
    Ok((
        best,
        SearchSummary {
            dims: encoding.dims(),
            iterations: result.iterations,
            stop_reason: result.stop_reason,
            best_fitness: result.best_fitness,
            history: result.history,
            mean_history: result.mean_history,
        },
    ))
}

/// Runs the hand-set baseline and, unless `skip_search`, the PSO-tuned arm.
pub fn compare_experiment(
    experiment: &Experiment,
    pso: &PsoSettings,
    workers: Workers,
    skip_search: bool,
) -> Result<Comparison, SimError> {
    experiment.validate()?;
    let baseline_tunables = experiment.baseline()?;
    let baseline = experiment.run(Logging::Full)?;
    if skip_search {
        return Ok(Comparison { baseline, baseline_tunables, optimized: None, search: None });
    }
    let (best, search) = tune(experiment, pso, workers)?;
    let optimized = experiment.with_tunables(&best).run(Logging::Full)?;
    Ok(Comparison { baseline, baseline_tunables, optimized: Some((optimized, best)), search: Some(search) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desired_examples() {
        let spec = TrajectorySpec::new(9.0, 15.5, 10.0).unwrap();
        assert_eq!(desired(&spec, 0.0).unwrap(), (9.0, 0.0, 0.0));
        let (y, yd, ydd) = desired(&spec, 10.0).unwrap();
        assert_eq!(y, 15.5);
        assert!(yd.abs() < 1e-15 && ydd.abs() < 1e-12);
        assert_eq!(desired(&spec, 5.0).unwrap().0, 12.25);
        assert!(matches!(desired(&spec, 10.5), Err(SimError::TimeOutOfRange { .. })));
        assert!(desired(&spec, -1e-9).is_err());
    }

    #[test]
    fn desired_derivatives_match_finite_differences() {
        let spec = TrajectorySpec::new(9.0, 15.5, 10.0).unwrap();
        let h = 1e-5;
        for i in 1..100 {
            let t = i as f64 * 0.1;
            let (_, yd, ydd) = desired(&spec, t).unwrap();
            let fd1 = (desired(&spec, t + h).unwrap().0 - desired(&spec, t - h).unwrap().0) / (2.0 * h);
            let fd2 = (desired(&spec, t + h).unwrap().1 - desired(&spec, t - h).unwrap().1) / (2.0 * h);
            assert!((yd - fd1).abs() < 1e-8, "t={t}");
            assert!((ydd - fd2).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn metrics_examples() {
        let m = metrics(&vec![0.0; 101], 0.01).unwrap();
        assert_eq!((m.ise, m.iae, m.rmse, m.max_abs_error, m.final_error), (0.0, 0.0, 0.0, 0.0, 0.0));

        let m = metrics(&vec![1.0; 5001], 1e-3).unwrap();
        assert!((m.ise - 5.0).abs() < 1e-9);
        assert!((m.iae - 5.0).abs() < 1e-9);
        assert!((m.rmse - 1.0).abs() < 1e-9);

        let ramp: Vec<f64> = (0..=1000).map(|k| k as f64 * 1e-3).collect();
        let m = metrics(&ramp, 1e-3).unwrap();
        assert!((m.ise - 1.0 / 3.0).abs() < 1e-5);
        assert_eq!(m.final_error, 1.0);
        assert!((m.rmse * m.rmse * 1.0 - m.ise).abs() <= 1e-9 * m.ise);

        assert_eq!(metrics(&[], 1e-3).unwrap_err(), SimError::EmptyStream);
    }

    #[test]
    fn baseline_round_trips_through_encoding() {
        let exp = Experiment::default();
        let enc = CandidateEncoding::new(&exp).unwrap();
        assert_eq!(enc.dims(), 100 + 100 + 2 + 2);
        let x = enc.encode(enc.baseline());
        assert_eq!(&enc.decode(&x).unwrap(), enc.baseline());
        assert!(matches!(enc.decode(&x[1..]), Err(SimError::CandidateLength { .. })));
    }

    #[test]
    fn frozen_blocks_keep_baseline() {
        let exp = Experiment {
            encoding: EncodingConfig { tune_theta_f: false, tune_theta_g: false, ..Default::default() },
            ..Default::default()
        };
        let enc = CandidateEncoding::new(&exp).unwrap();
        assert_eq!(enc.dims(), 4);
        let t = enc.decode(&[1.5, 0.8, 20.0, 9.0]).unwrap();
        assert_eq!(t.input_scale, vec![1.5, 0.8]);
        assert_eq!(t.gains, vec![20.0, 9.0]);
        assert_eq!(&t.theta_f, &enc.baseline().theta_f);
    }

    #[test]
    fn run_row_count_and_time_axis() {
        let exp = Experiment { sim: SimConfig { t_final: 1.0, ..Default::default() }, ..Default::default() };
        let out = exp.run(Logging::Full).unwrap();
        assert!(out.fault.is_none(), "{:?}", out.fault);
        assert_eq!(out.trajectory.rows.len(), 101);
        assert!(out.trajectory.rows.windows(2).all(|w| w[1].t > w[0].t));
        assert!((out.trajectory.rows.last().unwrap().t - 1.0).abs() < 1e-12);
    }
}
