//! Experiment file: a TOML document with the sections `plant`, `fuzzy`,
//! `controller`, `pso`, `sim`, `trajectory` and `output`. Every key is
//! optional; [`REFERENCE`] lists them all with their defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::plant::PlantParams;
use crate::pso::PsoSettings;
use crate::sim::{EncodingConfig, Experiment, FuzzyConfig, SimConfig, TrajectoryConfig};
use crate::InvalidParam;

/// Every configuration key with its default value, as a loadable file.
pub const REFERENCE: &str = include_str!("reference.toml");

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown key `{path}` at line {line}, column {column}")]
    UnknownKey { path: String, line: usize, column: usize },
    #[error("line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(#[from] InvalidParam),
    #[error("cannot serialize configuration: {0}")]
    Serialize(#[from] toml::ser::Error),
}

/// The `pso` section: swarm settings plus the candidate encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoSection {
    pub n_particles: usize,
    pub w: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_iters: usize,
    pub stall_iters: usize,
    pub stall_tol: f64,
    pub seed: u64,
    pub v_max_fraction: f64,
    pub encoding: EncodingConfig,
}

impl Default for PsoSection {
    fn default() -> Self {
        Self::from_parts(PsoSettings::default(), EncodingConfig::default())
    }
}

impl PsoSection {
    pub fn from_parts(s: PsoSettings, encoding: EncodingConfig) -> Self {
        Self {
            n_particles: s.n_particles,
            w: s.w,
            c1: s.c1,
            c2: s.c2,
            max_iters: s.max_iters,
            stall_iters: s.stall_iters,
            stall_tol: s.stall_tol,
            seed: s.seed,
            v_max_fraction: s.v_max_fraction,
            encoding,
        }
    }

    pub fn settings(&self) -> PsoSettings {
        PsoSettings {
            n_particles: self.n_particles,
            w: self.w,
            c1: self.c1,
            c2: self.c2,
            max_iters: self.max_iters,
            stall_iters: self.stall_iters,
            stall_tol: self.stall_tol,
            seed: self.seed,
            v_max_fraction: self.v_max_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub plot: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), plot: true }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub plant: PlantParams,
    pub fuzzy: FuzzyConfig,
    pub controller: ControllerConfig,
    pub pso: PsoSection,
    pub sim: SimConfig,
    pub trajectory: TrajectoryConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn experiment(&self) -> Experiment {
        Experiment {
            plant: self.plant,
            fuzzy: self.fuzzy.clone(),
            controller: self.controller.clone(),
            sim: self.sim.clone(),
            trajectory: self.trajectory,
            encoding: self.pso.encoding.clone(),
        }
    }

    /// Re-checks every section's invariants; errors carry the full key path.
    pub fn validate(&self) -> Result<(), InvalidParam> {
        self.experiment().validate()?;
        self.pso.settings().validate().map_err(|e| e.within("pso"))?;
        if self.output.dir.as_os_str().is_empty() {
            return Err(InvalidParam::new("output.dir", "must not be empty"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        Ok(toml::to_string(self)?)
    }
}

/// Parses TOML text, fills in defaults and validates the result.
pub fn parse_str(src: &str) -> Result<ExperimentConfig, ConfigError> {
    let de = toml::Deserializer::new(src);
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|err| {
        let path = err.path().to_string();
        let inner = err.into_inner();
        let (line, column) = inner.span().map_or((0, 0), |s| line_col(src, s.start));
        let message = inner.message().to_string();
        if message.starts_with("unknown field") {
            ConfigError::UnknownKey { path, line, column }
        } else {
            let message = if path == "." { message } else { format!("`{path}`: {message}") };
            ConfigError::Syntax { line, column, message }
        }
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let src = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    parse_str(&src)
}

/// 1-based line and column of a byte offset.
fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_str("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn single_override() {
        let cfg = parse_str("[pso]\nseed = 42\n").unwrap();
        let mut expected = ExperimentConfig::default();
        expected.pso.seed = 42;
        assert_eq!(cfg, expected);
    }

    #[test]
    fn invalid_value_names_field_and_rule() {
        let err = parse_str("[plant]\nM = -1.0\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("plant.M") && msg.contains("M > 0"), "{msg}");
    }

    #[test]
    fn unknown_key_reports_path() {
        match parse_str("[sim]\ndt = 0.001\nbogus = 3\n").unwrap_err() {
            ConfigError::UnknownKey { path, line, .. } => {
                assert_eq!(path, "sim.bogus");
                assert_eq!(line, 3);
            }
            other => panic!("{other}"),
        }
        match parse_str("[pso.encoding]\nnope = true\n").unwrap_err() {
            ConfigError::UnknownKey { path, .. } => assert_eq!(path, "pso.encoding.nope"),
            other => panic!("{other}"),
        }
        match parse_str("top = 1\n").unwrap_err() {
            ConfigError::UnknownKey { path, .. } => assert_eq!(path, "top"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn syntax_error_has_position() {
        match parse_str("[plant]\nM = = 1\n").unwrap_err() {
            ConfigError::Syntax { line, column, .. } => {
                assert_eq!(line, 2);
                assert!(column >= 1);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn missing_file() {
        assert!(matches!(parse_config(Path::new("/nonexistent/x.toml")), Err(ConfigError::Io { .. })));
    }

    #[test]
    fn reference_matches_defaults() {
        assert_eq!(parse_str(REFERENCE).unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn reference_lists_every_key() {
        fn keys(prefix: &str, v: &toml::Value, out: &mut Vec<String>) {
            match v {
                toml::Value::Table(t) => {
                    for (k, v) in t {
                        keys(&format!("{prefix}{k}."), v, out);
                    }
                }
                toml::Value::Array(a) if a.iter().all(|x| x.is_table()) && !a.is_empty() => {
                    for x in a {
                        keys(prefix, x, out);
                    }
                }
                _ => out.push(prefix.trim_end_matches('.').to_string()),
            }
        }
        let defaults: toml::Value = toml::from_str(&ExperimentConfig::default().to_toml().unwrap()).unwrap();
        let reference: toml::Value = toml::from_str(REFERENCE).unwrap();
        let (mut a, mut b) = (vec![], vec![]);
        keys("", &defaults, &mut a);
        keys("", &reference, &mut b);
        a.sort();
        a.dedup();
        b.sort();
        b.dedup();
        assert_eq!(a, b);
    }

    #[test]
    fn serialized_config_round_trips() {
        let mut cfg = ExperimentConfig::default();
        cfg.fuzzy.theta_f_init = crate::sim::ThetaInit::PerRule((0..100).map(|i| i as f64 * 0.1).collect());
        cfg.sim.disturbance = Some(crate::sim::Disturbance { amplitude: 1.0, frequency: 2.0 });
        let text = cfg.to_toml().unwrap();
        assert_eq!(parse_str(&text).unwrap(), cfg);
    }
}
