//! Run configuration shared by the command-line driver and scripted sweeps.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::error::{Error, Result};

/// Environment variable supplying the default output directory.
pub const OUTPUT_DIR_ENV: &str = "LQG_MC_OUTPUT_DIR";
pub const FALLBACK_OUTPUT_DIR: &str = "lqg-mc-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    Auto,
    Fixed(usize),
}

impl fmt::Display for Threads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threads::Auto => write!(f, "auto"),
            Threads::Fixed(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Threads {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(Threads::Auto);
        }
        s.parse::<usize>()
            .map(Threads::Fixed)
            .map_err(|_| Error::Format(format!("threads must be 'auto' or a positive integer, got '{s}'")))
    }
}

impl Serialize for Threads {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threads::Auto => s.serialize_str("auto"),
            Threads::Fixed(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for Threads {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match Value::deserialize(d)? {
            Value::String(s) => s.parse().map_err(serde::de::Error::custom),
            Value::Number(n) => n
                .as_u64()
                .map(|n| Threads::Fixed(n as usize))
                .ok_or_else(|| serde::de::Error::custom("threads must be a nonnegative integer")),
            other => Err(serde::de::Error::custom(format!("bad threads value {other}"))),
        }
    }
}

/// Grid resolution. `n_x` counts cells per 2π of x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub n_x: usize,
    pub n_theta: usize,
    pub n_modes: usize,
    pub n_steps: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            n_x: 16,
            n_theta: 16,
            n_modes: 7,
            n_steps: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub gamma: f64,
    pub seed: u64,
    pub n_samples: u64,
    pub grid: GridSpec,
    /// Per-subcommand truncation parameters, e.g. `{"loop": {"delta": 0.1}}`.
    pub truncations: BTreeMap<String, Value>,
    /// `None` falls back to the environment, then to `lqg-mc-out`.
    pub output_dir: Option<PathBuf>,
    pub threads: Threads,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            gamma: (8f64 / 3.0).sqrt(),
            seed: crate::verify::DEFAULT_SEED,
            n_samples: 100,
            grid: GridSpec::default(),
            truncations: BTreeMap::new(),
            output_dir: None,
            threads: Threads::Auto,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Format(format!("malformed config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        let counts = [
            ("n_samples", self.n_samples as usize),
            ("grid.n_x", g.n_x),
            ("grid.n_theta", g.n_theta),
            ("grid.n_modes", g.n_modes),
            ("grid.n_steps", g.n_steps),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v < 1) {
            return Err(Error::Format(format!("{name} must be at least 1")));
        }
        if let Threads::Fixed(0) = self.threads {
            return Err(Error::Format("threads must be at least 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 2.0) {
            return Err(Error::Format(format!("gamma must lie in (0, 2), got {}", self.gamma)));
        }
        if let Some((k, v)) = self.truncations.iter().find(|(_, v)| !v.is_object()) {
            return Err(Error::Format(format!("truncations.{k} must be an object, got {v}")));
        }
        Ok(())
    }

    /// Flag > config file > environment > fallback.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(FALLBACK_OUTPUT_DIR))
    }

    /// Number-valued truncation parameter `module.key`, or `default`.
    pub fn truncation_f64(&self, module: &str, key: &str, default: f64) -> Result<f64> {
        match self.truncations.get(module).and_then(|m| m.get(key)) {
            None => Ok(default),
            Some(v) => v
                .as_f64()
                .ok_or_else(|| Error::Format(format!("truncations.{module}.{key} must be a number, got {v}"))),
        }
    }

    /// String-valued truncation parameter `module.key`, or `default`.
    pub fn truncation_str<'a>(&'a self, module: &str, key: &str, default: &'a str) -> Result<&'a str> {
        match self.truncations.get(module).and_then(|m| m.get(key)) {
            None => Ok(default),
            Some(v) => v
                .as_str()
                .ok_or_else(|| Error::Format(format!("truncations.{module}.{key} must be a string, got {v}"))),
        }
    }

    /// The whole entry for `module` parsed as `T` (e.g. a tagged truncation
    /// enum), or `default` when absent.
    pub fn truncation_as<T: DeserializeOwned>(&self, module: &str, default: T) -> Result<T> {
        match self.truncations.get(module) {
            None => Ok(default),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| Error::Format(format!("truncations.{module}: {e}"))),
        }
    }

    /// Merge `{"module": {"key": value}}` into the truncation map, key by key.
    pub fn merge_truncations(&mut self, patch: &Value) -> Result<()> {
        let obj = patch
            .as_object()
            .ok_or_else(|| Error::Format("truncations must be a JSON object".into()))?;
        for (module, fields) in obj {
            let fields = fields
                .as_object()
                .ok_or_else(|| Error::Format(format!("truncations.{module} must be an object")))?;
            let slot = self
                .truncations
                .entry(module.clone())
                .or_insert_with(|| Value::Object(Default::default()));
            let target = slot.as_object_mut().ok_or_else(|| Error::Format(format!("truncations.{module} must be an object")))?;
            for (k, v) in fields {
                target.insert(k.clone(), v.clone());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_defaults() {
        let c = RunConfig::default();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), c);
        let partial = RunConfig::from_json(r#"{"seed": 9, "grid": {"n_theta": 32}, "threads": 4}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.grid.n_theta, 32);
        assert_eq!(partial.grid.n_modes, 7);
        assert_eq!(partial.threads, Threads::Fixed(4));
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            r#"{"n_samples": 0}"#,
            r#"{"grid": {"n_steps": 0}}"#,
            r#"{"threads": "many"}"#,
            r#"{"threads": 0}"#,
            r#"{"colour": 1}"#,
            r#"{"gamma": 2.5}"#,
            r#"{"truncations": {"loop": 3}}"#,
            "not json",
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::Format(_))), "{bad}");
        }
    }

    #[test]
    fn truncation_lookup_and_merge() {
        let mut c = RunConfig::from_json(r#"{"truncations": {"loop": {"delta": 0.2}}}"#).unwrap();
        assert_eq!(c.truncation_f64("loop", "delta", 0.1).unwrap(), 0.2);
        assert_eq!(c.truncation_f64("stable", "min_height", 1.0).unwrap(), 1.0);
        c.merge_truncations(&serde_json::json!({"loop": {"alpha": 0.5}, "disk": {"kind": "unit_area"}})).unwrap();
        assert_eq!(c.truncation_f64("loop", "delta", 0.1).unwrap(), 0.2);
        assert_eq!(c.truncation_f64("loop", "alpha", 0.0).unwrap(), 0.5);
        assert_eq!(c.truncation_str("disk", "kind", "unit_boundary").unwrap(), "unit_area");
        assert!(c.truncation_f64("disk", "kind", 0.0).is_err());
        let d: crate::sphere::DiskConstraint = c.truncation_as("disk", crate::sphere::DiskConstraint::UnitBoundary).unwrap();
        assert_eq!(d, crate::sphere::DiskConstraint::UnitArea);
        let s = crate::stable::StableTruncation::MinHeight { min_height: 1.0 };
        assert_eq!(c.truncation_as("stable", s).unwrap(), s);
    }
}
