//! Thresholds and runtime settings, loaded from a single TOML file.
//!
//! ```toml
//! tau = 0.3        # external filter threshold on rated effectiveness
//! theta = 0.75     # relevance needed for a method to apply to a problem
//! mu = 0.95        # relevance at which two problems share a tree node
//! alpha = 0.3      # feedback learning rate
//! k = 5            # max candidates handed to internal selection
//! n_out = 3        # max candidate outputs per turn
//! dimension = 256  # embedding dimension
//! seed = 84960162107204
//! backend = "mock" # or "live"
//! fixture = "fixtures/mock.toml"
//!
//! [live]
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-4o"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::gateway::{BackendKind, Embedder, LiveSettings, DEFAULT_DIMENSION, DEFAULT_SEED};
use crate::tree::TreeParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub tau: f64,
    pub theta: f64,
    pub mu: f64,
    pub alpha: f64,
    pub k: usize,
    pub n_out: usize,
    pub dimension: usize,
    pub seed: u64,
    pub backend: BackendKind,
    pub fixture: Option<PathBuf>,
    pub prompt_dir: Option<PathBuf>,
    pub repository: Option<PathBuf>,
    pub bind: String,
    pub live: LiveSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            tau: 0.3,
            theta: 0.75,
            mu: 0.95,
            alpha: 0.3,
            k: 5,
            n_out: 3,
            dimension: DEFAULT_DIMENSION,
            seed: DEFAULT_SEED,
            backend: BackendKind::Mock,
            fixture: None,
            prompt_dir: None,
            repository: None,
            bind: "127.0.0.1:8080".into(),
            live: LiveSettings::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Loads a config file. Relative `fixture`, `prompt_dir` and `repository`
    /// paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            for p in [&mut config.fixture, &mut config.prompt_dir, &mut config.repository]
                .into_iter()
                .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("tau", self.tau), ("theta", self.theta), ("mu", self.mu)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("{name} must lie in [0,1], got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(ConfigError::Invalid(format!("alpha must lie in (0,1], got {}", self.alpha)));
        }
        if self.k == 0 || self.n_out == 0 || self.dimension == 0 {
            return Err(ConfigError::Invalid("k, n_out and dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn embedder(&self) -> Embedder {
        Embedder::new(self.seed, self.dimension)
    }

    pub fn tree_params(&self) -> TreeParams {
        TreeParams {
            mu: self.mu,
            theta: self.theta,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = Config::default();
        assert_eq!((c.tau, c.theta, c.mu, c.alpha), (0.3, 0.75, 0.95, 0.3));
        assert_eq!((c.k, c.n_out, c.dimension), (5, 3, 256));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = Config::parse("tau = 0.5\nbackend = \"live\"\n").unwrap();
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.theta, 0.75);
        assert_eq!(c.backend, BackendKind::Live);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(Config::parse("theta = 1.5").is_err());
        assert!(Config::parse("alpha = 0.0").is_err());
        assert!(Config::parse("k = 0").is_err());
        assert!(Config::parse("unknown_key = 1").is_err());
    }
}
