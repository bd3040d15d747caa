//! Pipeline configuration: paths, thresholds, clustering and augmentation
//! knobs, and the backend for every model role. Loaded from TOML; every
//! threshold is overridable from the CLI.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augmentor::AugmentConfig;
use crate::diversity::DetectParams;
use crate::gateway::BackendConfig;
use crate::semantics::{EmbeddingBackend, HttpEmbedder, MockEmbedder};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("path does not exist: {0}")]
    MissingPath(PathBuf),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub buffer: Option<PathBuf>,
    pub incoming: Option<PathBuf>,
    pub exports: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub caches: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThresholdsConfig {
    pub dedup_cosine: f64,
    pub tau_g: f64,
    pub tau_b: f64,
    pub min_support: u64,
}

impl Default for ThresholdsConfig {
    fn default() -> Self {
        Self { dedup_cosine: 0.95, tau_g: 2.0, tau_b: 0.15, min_support: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringSettings {
    /// Cluster count; None picks clamp(ceil(sqrt(n/2)), 2, 50).
    pub k: Option<usize>,
    pub seed: u64,
}

impl Default for ClusteringSettings {
    fn default() -> Self {
        Self { k: None, seed: 42 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentationSettings {
    pub max_rounds: usize,
    pub candidates_per_round: usize,
    pub reps: usize,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for AugmentationSettings {
    fn default() -> Self {
        Self { max_rounds: 5, candidates_per_round: 5, reps: 5, temperature: 0.8, max_tokens: 2048 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstructionSettings {
    pub temperature: f64,
    pub parallelism: usize,
}

impl Default for ConstructionSettings {
    fn default() -> Self {
        Self { temperature: 0.0, parallelism: 1 }
    }
}

/// Embedding backend selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EmbeddingConfig {
    Mock {
        #[serde(default = "default_mock_dim")]
        dim: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        synonyms: BTreeMap<String, String>,
    },
    Http(crate::gateway::HttpEndpoint),
}

fn default_mock_dim() -> usize {
    64
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig::Mock { dim: default_mock_dim(), seed: 0, synonyms: BTreeMap::new() }
    }
}

impl EmbeddingConfig {
    pub fn build(&self) -> Box<dyn EmbeddingBackend> {
        match self {
            EmbeddingConfig::Mock { dim, seed, synonyms } => {
                Box::new(MockEmbedder::new(*dim, *seed).with_synonyms(synonyms.clone()))
            }
            EmbeddingConfig::Http(endpoint) => Box::new(HttpEmbedder::new(endpoint.clone())),
        }
    }
}

/// Model roles the pipeline talks to.
pub const ROLE_REFERENCE: &str = "reference";
pub const ROLE_GENERATOR: &str = "generator";
pub const ROLE_CHECKER: &str = "checker";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub thresholds: ThresholdsConfig,
    pub clustering: ClusteringSettings,
    pub augmentation: AugmentationSettings,
    pub construction: ConstructionSettings,
    pub embedding: EmbeddingConfig,
    /// role name -> chat backend.
    pub backends: BTreeMap<String, BackendConfig>,
}

impl PipelineConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.thresholds;
        if !(t.dedup_cosine > 0.0 && t.dedup_cosine <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "dedup_cosine must be in (0, 1], got {}",
                t.dedup_cosine
            )));
        }
        if t.tau_g <= 0.0 {
            return Err(ConfigError::Invalid(format!("tau_g must be positive, got {}", t.tau_g)));
        }
        if !(t.tau_b > 0.0 && t.tau_b < 1.0) {
            return Err(ConfigError::Invalid(format!("tau_b must be in (0, 1), got {}", t.tau_b)));
        }
        if self.augmentation.max_rounds == 0
            || self.augmentation.candidates_per_round == 0
            || self.augmentation.reps == 0
        {
            return Err(ConfigError::Invalid(
                "augmentation counts must be at least 1".to_string(),
            ));
        }
        if let Some(k) = self.clustering.k {
            if k == 0 {
                return Err(ConfigError::Invalid("clustering.k must be at least 1".to_string()));
            }
        }
        for path in [&self.paths.buffer, &self.paths.incoming, &self.paths.templates]
            .into_iter()
            .flatten()
        {
            if !path.exists() {
                return Err(ConfigError::MissingPath(path.clone()));
            }
        }
        Ok(())
    }

    pub fn detect_params(&self) -> DetectParams {
        DetectParams {
            tau_g: self.thresholds.tau_g,
            tau_b: self.thresholds.tau_b,
            min_support: self.thresholds.min_support,
        }
    }

    pub fn augment_config(&self) -> AugmentConfig {
        AugmentConfig {
            max_rounds: self.augmentation.max_rounds,
            candidates_per_round: self.augmentation.candidates_per_round,
            reps: self.augmentation.reps,
            generation_temperature: self.augmentation.temperature,
            checker_temperature: 0.0,
            max_tokens: self.augmentation.max_tokens,
            tau_b: self.thresholds.tau_b,
        }
    }

    pub fn backend(&self, role: &str) -> Option<&BackendConfig> {
        self.backends.get(role)
    }
}
