//! Flat `key = value` system configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error so that typos do not silently fall back to defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::ml::SCORE_FEATURES;
use crate::model::{validate_config, SystemConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

pub const ML_ALPHA_PREFIX: &str = "ml_alpha_";

pub fn load_config(path: impl AsRef<Path>) -> Result<SystemConfig, ConfigError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<SystemConfig, ConfigError> {
    let mut c = SystemConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| ConfigError::Syntax { line: i + 1, message };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected `key = value`, found `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let num = || -> Result<f64, ConfigError> {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| err(format!("`{key}` expects a number, found `{value}`")))
        };
        let int = || -> Result<i64, ConfigError> {
            value
                .parse::<i64>()
                .map_err(|_| err(format!("`{key}` expects an integer, found `{value}`")))
        };
        let count = || -> Result<usize, ConfigError> {
            value
                .parse::<usize>()
                .map_err(|_| err(format!("`{key}` expects a non-negative integer, found `{value}`")))
        };
        match key {
            "total_nodes" => c.total_nodes = count()?,
            "timestep_s" => c.timestep = int()?,
            "node_idle_w" => c.node_idle_watts = num()?,
            "node_max_w" => c.node_max_watts = num()?,
            "conversion_efficiency" => c.conversion_efficiency = num()?,
            "supply_temp_c" => c.cooling.supply_temp = num()?,
            "tau_s" => c.cooling.thermal_mass_tau = num()?,
            "flow_heat_capacity_w_per_c" => c.cooling.flow_heat_capacity = num()?,
            "cooling_static_w" => c.cooling.cooling_overhead_static = num()?,
            "cooling_slope" => c.cooling.cooling_overhead_slope = num()?,
            "carbon_kg_per_kwh" => c.carbon_intensity = num()?,
            "size_small_lt" => c.size_small_lt = count()?,
            "size_large_ge" => c.size_large_ge = count()?,
            "fugaku_ref_w" => c.fugaku_reference_watts = Some(num()?),
            _ => match key.strip_prefix(ML_ALPHA_PREFIX) {
                Some(feature) if SCORE_FEATURES.contains(&feature) => {
                    let v = num()?;
                    c.ml_alpha.retain(|(f, _)| f != feature);
                    c.ml_alpha.push((feature.to_string(), v));
                }
                Some(feature) => return Err(err(format!("unknown score feature `{feature}`"))),
                None => return Err(err(format!("unknown key `{key}`"))),
            },
        }
    }
    validate_config(c).map_err(ConfigError::Invalid)
}

/// Render a config in the format [`parse_config`] reads.
pub fn render_config(c: &SystemConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("total_nodes", c.total_nodes.to_string());
    kv("timestep_s", c.timestep.to_string());
    kv("node_idle_w", c.node_idle_watts.to_string());
    kv("node_max_w", c.node_max_watts.to_string());
    kv("conversion_efficiency", c.conversion_efficiency.to_string());
    kv("supply_temp_c", c.cooling.supply_temp.to_string());
    kv("tau_s", c.cooling.thermal_mass_tau.to_string());
    kv("flow_heat_capacity_w_per_c", c.cooling.flow_heat_capacity.to_string());
    kv("cooling_static_w", c.cooling.cooling_overhead_static.to_string());
    kv("cooling_slope", c.cooling.cooling_overhead_slope.to_string());
    kv("carbon_kg_per_kwh", c.carbon_intensity.to_string());
    kv("size_small_lt", c.size_small_lt.to_string());
    kv("size_large_ge", c.size_large_ge.to_string());
    if let Some(r) = c.fugaku_reference_watts {
        kv("fugaku_ref_w", r.to_string());
    }
    for (f, v) in &c.ml_alpha {
        kv(&format!("{ML_ALPHA_PREFIX}{f}"), v.to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("# nothing\n\n").unwrap(), SystemConfig::default());
    }

    #[test]
    fn keys_are_applied() {
        let c =
            parse_config("total_nodes = 8\ntimestep_s=1\ncooling_slope = 0.1\nml_alpha_wall_limit = 0.5\n").unwrap();
        assert_eq!(c.total_nodes, 8);
        assert_eq!(c.timestep, 1);
        assert_eq!(c.cooling.cooling_overhead_slope, 0.1);
        assert_eq!(c.ml_alpha, vec![("wall_limit".to_string(), 0.5)]);
    }

    #[test]
    fn unknown_key_and_bad_value() {
        assert!(matches!(
            parse_config("nodes = 3"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("\ntotal_nodes = x"),
            Err(ConfigError::Syntax { line: 2, .. })
        ));
        assert!(parse_config("ml_alpha_bogus = 1").is_err());
        assert!(parse_config("total_nodes").is_err());
    }

    #[test]
    fn invariants_are_checked() {
        let err = parse_config("node_idle_w = 900\nnode_max_w = 100\nconversion_efficiency = 0").unwrap_err();
        match err {
            ConfigError::Invalid(msgs) => assert_eq!(msgs.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn render_round_trip() {
        let mut c = SystemConfig {
            total_nodes: 12,
            fugaku_reference_watts: Some(450.0),
            ..SystemConfig::default()
        };
        c.ml_alpha.push(("priority".into(), -0.25));
        assert_eq!(parse_config(&render_config(&c)).unwrap(), c);
    }
}
