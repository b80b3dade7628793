//! Run configuration: one versioned TOML document.
//!
//! ```toml
//! version = 1
//! m = 5
//! max_iterations = 5
//!
//! [endpoints.detector]
//! base_url = "http://localhost:8000/v1"
//! model_name = "detector"
//!
//! [endpoints.agents]
//! base_url = "https://api.example.com/v1"
//! model_name = "agent"
//! api_key_env = "AGENT_API_KEY"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{EndpointConfig, DEFAULT_PARALLELISM};
use crate::extract::DEFAULT_CONTEXT_BUDGET;
use crate::prompts::{LabelPolicy, VARIANTS};
use crate::sha256_hex;

pub const CONFIG_VERSION: u32 = 1;
/// Upper bound on Ranker–Critic rounds.
pub const MAX_ITERATIONS_CAP: usize = 5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoints {
    pub detector: EndpointConfig,
    pub reasoner: EndpointConfig,
    /// Shared by the Ranker and the Critic.
    pub agents: EndpointConfig,
    pub judge: EndpointConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub endpoints: Endpoints,
    /// Custom template file; the built-in set is used when absent.
    pub templates: Option<PathBuf>,
    /// Number of detector prompts.
    pub m: usize,
    pub max_iterations: usize,
    pub parallelism: usize,
    pub explain_safe: bool,
    /// Per-side character budget for call-context excerpts.
    pub context_budget: usize,
    pub seed: u64,
    /// Also give the detector the call context.
    pub detector_context: bool,
    pub label_policy: LabelPolicy,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            endpoints: Endpoints::default(),
            templates: None,
            m: VARIANTS,
            max_iterations: MAX_ITERATIONS_CAP,
            parallelism: DEFAULT_PARALLELISM,
            explain_safe: true,
            context_budget: DEFAULT_CONTEXT_BUDGET,
            seed: 42,
            detector_context: false,
            label_policy: LabelPolicy::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative template paths resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::parse(&std::fs::read_to_string(path)?)?;
        if let (Some(t), Some(dir)) = (&cfg.templates, path.parent()) {
            if t.is_relative() {
                cfg.templates = Some(dir.join(t));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {}", self.version));
        }
        if !(1..=VARIANTS).contains(&self.m) {
            return bad(format!("m must be in 1..={VARIANTS}, got {}", self.m));
        }
        if !(1..=MAX_ITERATIONS_CAP).contains(&self.max_iterations) {
            return bad(format!(
                "max_iterations must be in 1..={MAX_ITERATIONS_CAP}, got {}",
                self.max_iterations
            ));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be positive".into());
        }
        if self.context_budget == 0 {
            return bad("context_budget must be positive".into());
        }
        for (role, ep) in [
            ("detector", &self.endpoints.detector),
            ("reasoner", &self.endpoints.reasoner),
            ("agents", &self.endpoints.agents),
            ("judge", &self.endpoints.judge),
        ] {
            ep.validate()
                .map_err(|e| ConfigError::Invalid(format!("endpoints.{role}: {e}")))?;
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; recorded in run metadata.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = RunConfig::default();
        c.validate().unwrap();
        assert_eq!((c.m, c.max_iterations, c.parallelism), (5, 5, 5));
        assert!(c.explain_safe);
        assert_eq!(c.endpoints.detector.temperature, 0.0);
    }

    #[test]
    fn parses_partial_document() {
        let c = RunConfig::parse(
            "version = 1\nexplain_safe = false\n[endpoints.agents]\nmodel_name = \"agent\"\napi_key_env = \"KEY\"\n",
        )
        .unwrap();
        assert!(!c.explain_safe);
        assert_eq!(c.endpoints.agents.model_name, "agent");
        assert_eq!(c.endpoints.detector.model_name, "default");
    }

    #[test]
    fn rejects_out_of_range_values() {
        assert!(RunConfig::parse("version = 2").is_err());
        assert!(RunConfig::parse("version = 1\nmax_iterations = 6").is_err());
        assert!(RunConfig::parse("version = 1\nm = 0").is_err());
        assert!(RunConfig::parse("version = 1\nm = 6").is_err());
        assert!(RunConfig::parse("version = 1\nbogus = 1").is_err());
        assert!(RunConfig::parse("version = 1\n[endpoints.judge]\ntemperature = -1.0").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seed = 7;
        assert_ne!(a.hash(), b.hash());
    }
}
