//! Pneumatic servo simulation, indirect adaptive fuzzy control, and particle
//! swarm tuning of the controller's fuzzy parameters.
//!
//! The pieces compose bottom-up:
//!
//! * [`plant`]: the four-state pneumatic actuator and its RK4 stepper.
//! * [`fuzzy`]: triangular partitions, rule bases and the normalized fuzzy basis.
//! * [`controller`]: certainty-equivalence control law with projected adaptation.
//! * [`pso`]: a seeded, parallel-safe particle swarm optimizer.
//! * [`sim`]: the closed loop, tracking metrics, the candidate encoding and the
//!   baseline-vs-tuned comparison.
//! * [`config`], [`report`]: experiment file parsing and artifact emission used by
//!   the `servo-pso` binary.

pub mod config;
pub mod controller;
pub mod fuzzy;
pub mod integrate;
pub mod plant;
pub mod pso;
pub mod report;
pub mod sim;

use std::fmt;

/// A parameter that violates its documented invariant.
///
/// `field` is the key as it appears in the experiment file; callers prepend the
/// section name when they have it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidParam {
    pub field: String,
    pub reason: String,
}

impl InvalidParam {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { field: field.into(), reason: reason.into() }
    }

    /// Prefix the field path with an enclosing section.
    pub fn within(mut self, section: &str) -> Self {
        self.field = format!("{section}.{}", self.field);
        self
    }
}

impl fmt::Display for InvalidParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "`{}` {}", self.field, self.reason)
    }
}

impl std::error::Error for InvalidParam {}
