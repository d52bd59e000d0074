//! Run configuration from flat dotted `key = value` files (TOML syntax).
//!
//! Absent keys keep their defaults, unknown keys are rejected, and every
//! value is checked before any computation starts.

use std::path::{Path, PathBuf};

use thiserror::Error;
use toml::Value;

use crate::environment::BathMode;
use crate::experiment::{ExperimentConfig, Separation};
use crate::observables::CoherenceMode;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown key '{key}'")]
    UnknownKey { key: String },

    #[error("{key}: expected {expected}")]
    Type { key: String, expected: &'static str },

    #[error("{key}: {reason}")]
    Constraint { key: String, reason: String },
}

impl ConfigError {
    pub fn category(&self) -> &'static str {
        match self {
            ConfigError::Io { .. } => "io",
            ConfigError::Parse { .. } => "config-parse",
            ConfigError::UnknownKey { .. } => "unknown-key",
            ConfigError::Type { .. } => "invalid-value",
            ConfigError::Constraint { .. } => "constraint-violation",
        }
    }

    /// The offending key, when there is one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey { key } | ConfigError::Type { key, .. } | ConfigError::Constraint { key, .. } => {
                Some(key)
            }
            _ => None,
        }
    }
}

pub const KEYS: &[&str] = &[
    "model.epsilon",
    "model.width",
    "bath.temperature",
    "bath.density",
    "bath.mass",
    "bath.env_width",
    "bath.mode",
    "bath.roster_size",
    "vicinity.radius",
    "vicinity.max_active",
    "ode_rel_tol",
    "ode_abs_tol",
    "ode_max_step",
    "delta_x_list",
    "t_max",
    "n_samples",
    "n_realizations",
    "master_seed",
    "threads",
    "output_dir",
    "coherence_mode",
    "separation",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self { experiment: ExperimentConfig::default(), output_dir: PathBuf::from("out") }
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

fn float(key: &str, v: &Value) -> Result<f64, ConfigError> {
    match v {
        Value::Float(f) => Ok(*f),
        Value::Integer(i) => Ok(*i as f64),
        _ => Err(ConfigError::Type { key: key.into(), expected: "a number" }),
    }
}

fn unsigned(key: &str, v: &Value) -> Result<u64, ConfigError> {
    match v {
        Value::Integer(i) if *i >= 0 => Ok(*i as u64),
        Value::Integer(_) => Err(ConfigError::Constraint { key: key.into(), reason: "must be non-negative".into() }),
        _ => Err(ConfigError::Type { key: key.into(), expected: "an integer" }),
    }
}

fn string<'a>(key: &str, v: &'a Value) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or(ConfigError::Type { key: key.into(), expected: "a string" })
}

fn constraint(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Constraint { key: key.into(), reason: reason.into() }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let line = e.span().map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            ConfigError::Parse { line, message: e.message().to_string() }
        })?;
        let mut entries = Vec::new();
        flatten("", &table, &mut entries);
        let mut cfg = RunConfig::default();
        let mut roster_size = None;
        let mut mode = None;
        for (key, value) in &entries {
            cfg.apply(key, value, &mut mode, &mut roster_size)?;
        }
        cfg.experiment.bath.mode = match (mode.as_deref(), roster_size) {
            (None | Some("flux"), _) => BathMode::Flux,
            (Some("roster"), size) => BathMode::Roster { size: size.unwrap_or(1500) },
            (Some(other), _) => return Err(constraint("bath.mode", format!("unknown mode '{other}' (flux|roster)"))),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(
        &mut self,
        key: &str,
        v: &Value,
        mode: &mut Option<String>,
        roster_size: &mut Option<usize>,
    ) -> Result<(), ConfigError> {
        let e = &mut self.experiment;
        match key {
            "model.epsilon" => e.model.epsilon = float(key, v)?,
            "model.width" => e.model.width = float(key, v)?,
            "bath.temperature" => e.bath.temperature = float(key, v)?,
            "bath.density" => e.bath.density = float(key, v)?,
            "bath.mass" => {
                e.bath.mass = float(key, v)?;
                e.model.m_env = e.bath.mass;
            }
            "bath.env_width" => e.bath.env_width = float(key, v)?,
            "bath.mode" => *mode = Some(string(key, v)?.to_string()),
            "bath.roster_size" => *roster_size = Some(unsigned(key, v)? as usize),
            "vicinity.radius" => e.bath.vicinity_radius = float(key, v)?,
            "vicinity.max_active" => e.bath.max_active = unsigned(key, v)? as usize,
            "ode_rel_tol" => e.tolerances.rel = float(key, v)?,
            "ode_abs_tol" => e.tolerances.abs = float(key, v)?,
            "ode_max_step" => e.tolerances.max_step = float(key, v)?,
            "delta_x_list" => {
                let list = v.as_array().ok_or(ConfigError::Type { key: key.into(), expected: "an array of numbers" })?;
                e.delta_x_list = list.iter().map(|x| float(key, x)).collect::<Result<_, _>>()?;
            }
            "t_max" => e.t_max = float(key, v)?,
            "n_samples" => e.n_samples = unsigned(key, v)? as usize,
            "n_realizations" => e.n_realizations = unsigned(key, v)? as usize,
            "master_seed" => e.master_seed = unsigned(key, v)?,
            "threads" => e.threads = unsigned(key, v)? as usize,
            "output_dir" => self.output_dir = PathBuf::from(string(key, v)?),
            "coherence_mode" => {
                e.coherence_mode = string(key, v)?.parse::<CoherenceMode>().map_err(|r| constraint(key, r))?
            }
            "separation" => e.separation = string(key, v)?.parse::<Separation>().map_err(|r| constraint(key, r))?,
            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.experiment;
        let positive = |key: &str, v: f64| {
            if v.is_finite() && v > 0.0 { Ok(()) } else { Err(constraint(key, format!("must be positive, got {v}"))) }
        };
        let non_negative = |key: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(constraint(key, format!("must be non-negative, got {v}")))
            }
        };
        if !e.model.epsilon.is_finite() {
            return Err(constraint("model.epsilon", "must be finite"));
        }
        positive("model.width", e.model.width)?;
        non_negative("bath.temperature", e.bath.temperature)?;
        non_negative("bath.density", e.bath.density)?;
        positive("bath.mass", e.bath.mass)?;
        positive("bath.env_width", e.bath.env_width)?;
        if let BathMode::Roster { size } = e.bath.mode {
            if size == 0 {
                return Err(constraint("bath.roster_size", "must be at least 1"));
            }
        }
        positive("vicinity.radius", e.bath.vicinity_radius)?;
        if e.bath.max_active == 0 {
            return Err(constraint("vicinity.max_active", "must be at least 1"));
        }
        positive("ode_rel_tol", e.tolerances.rel)?;
        positive("ode_abs_tol", e.tolerances.abs)?;
        positive("ode_max_step", e.tolerances.max_step)?;
        if e.delta_x_list.is_empty() {
            return Err(constraint("delta_x_list", "must not be empty"));
        }
        for dx in &e.delta_x_list {
            non_negative("delta_x_list", *dx)?;
        }
        positive("t_max", e.t_max)?;
        if e.n_samples < 2 {
            return Err(constraint("n_samples", "need at least 2 sample times"));
        }
        if e.n_realizations == 0 {
            return Err(constraint("n_realizations", "must be at least 1"));
        }
        Ok(())
    }

    /// Advisory notes that do not stop a run.
    pub fn warnings(&self) -> Vec<String> {
        let e = &self.experiment;
        let mut out = Vec::new();
        if e.bath.vicinity_radius <= e.model.width {
            out.push(format!(
                "vicinity.radius = {} does not exceed model.width = {}; the interaction is not negligible at the boundary",
                e.bath.vicinity_radius, e.model.width
            ));
        }
        out
    }

    /// Every setting as `(dotted key, value)`, in the order of [`KEYS`].
    pub fn key_values(&self) -> Vec<(&'static str, String)> {
        let e = &self.experiment;
        let (mode, roster) = match e.bath.mode {
            BathMode::Flux => ("flux", 1500),
            BathMode::Roster { size } => ("roster", size),
        };
        let list = e.delta_x_list.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(", ");
        vec![
            ("model.epsilon", format!("{:?}", e.model.epsilon)),
            ("model.width", format!("{:?}", e.model.width)),
            ("bath.temperature", format!("{:?}", e.bath.temperature)),
            ("bath.density", format!("{:?}", e.bath.density)),
            ("bath.mass", format!("{:?}", e.bath.mass)),
            ("bath.env_width", format!("{:?}", e.bath.env_width)),
            ("bath.mode", format!("\"{mode}\"")),
            ("bath.roster_size", roster.to_string()),
            ("vicinity.radius", format!("{:?}", e.bath.vicinity_radius)),
            ("vicinity.max_active", e.bath.max_active.to_string()),
            ("ode_rel_tol", format!("{:?}", e.tolerances.rel)),
            ("ode_abs_tol", format!("{:?}", e.tolerances.abs)),
            ("ode_max_step", format!("{:?}", e.tolerances.max_step)),
            ("delta_x_list", format!("[{list}]")),
            ("t_max", format!("{:?}", e.t_max)),
            ("n_samples", e.n_samples.to_string()),
            ("n_realizations", e.n_realizations.to_string()),
            ("master_seed", e.master_seed.to_string()),
            ("threads", e.threads.to_string()),
            ("output_dir", format!("{:?}", self.output_dir.display().to_string())),
            ("coherence_mode", format!("\"{}\"", e.coherence_mode.as_str())),
            ("separation", format!("\"{}\"", e.separation.as_str())),
        ]
    }

    /// Renders the configuration in the format `parse` reads.
    pub fn to_config_string(&self) -> String {
        self.key_values().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
