//! Service configuration: a JSON file with environment overrides.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use datadoc_core::chain::PromptCatalog;
use datadoc_core::completeness::{CoverageMode, HypothesisSet};
use datadoc_core::gateway::{
    CompletionBackend, EmbeddingBackend, Gateway, HttpCompletionBackend, HttpEmbeddingBackend, MockBackend, MockRuleSet,
    RemoteConfig, RetryPolicy,
};
use datadoc_core::ingest::{PreprocessConfig, TermDictionary};
use datadoc_core::retrieval::HashingEmbedder;
use datadoc_core::{CategoryLists, PipelineConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::DocumentCache;

/// Timestamp written into records in reproducible mode.
pub const REPRODUCIBLE_TIMESTAMP: &str = "1970-01-01T00:00:00Z";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Scripted replies. Inline rules are tried before those of the rules
    /// file, so they can override it.
    Mock {
        #[serde(default)]
        rules: MockRuleSet,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rules_file: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model: Option<String>,
    },
    Remote(RemoteConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock { rules: MockRuleSet::default(), rules_file: None, model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EmbedderConfig {
    Hashing {
        dim: usize,
    },
    Remote {
        #[serde(flatten)]
        remote: RemoteConfig,
        dim: usize,
    },
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig::Hashing { dim: 256 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSettings {
    pub dir: PathBuf,
    pub max_age_days: u64,
}

impl Default for CacheSettings {
    fn default() -> Self {
        Self { dir: PathBuf::from(".datadoc-cache"), max_age_days: 30 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessSettings {
    pub target_len: usize,
    pub overlap: usize,
    pub table_k: usize,
}

impl Default for PreprocessSettings {
    fn default() -> Self {
        let d = PreprocessConfig::default();
        Self { target_len: d.target_len, overlap: d.overlap, table_k: d.table_k }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub backend: BackendConfig,
    pub embedder: EmbedderConfig,
    pub k: usize,
    pub max_rounds: u32,
    pub preprocess: PreprocessSettings,
    /// Term dictionary JSON; the bundled one when absent.
    pub dictionary: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub prompt_catalog: Option<PathBuf>,
    pub hypotheses: Option<PathBuf>,
    pub coverage: CoverageMode,
    pub cache: CacheSettings,
    pub max_retries: u32,
    pub max_concurrency: usize,
    /// Fixed timestamps and zeroed timings, for byte-identical output.
    pub reproducible: bool,
    pub listen: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let pipeline = PipelineConfig::default();
        Self {
            backend: BackendConfig::default(),
            embedder: EmbedderConfig::default(),
            k: pipeline.k,
            max_rounds: pipeline.max_rounds,
            preprocess: PreprocessSettings::default(),
            dictionary: None,
            categories: None,
            prompt_catalog: None,
            hypotheses: None,
            coverage: CoverageMode::Sentinel,
            cache: CacheSettings::default(),
            max_retries: RetryPolicy::default().max_retries,
            max_concurrency: 4,
            reproducible: false,
            listen: "127.0.0.1:8080".into(),
        }
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

fn parse_error(path: &Path, detail: impl ToString) -> ConfigError {
    ConfigError::Parse { path: path.to_path_buf(), detail: detail.to_string() }
}

fn env_number<T: std::str::FromStr>(name: &str, value: Option<String>) -> Result<Option<T>, ConfigError> {
    value
        .map(|v| v.trim().parse().map_err(|_| ConfigError::Invalid(format!("{name}={v:?} is not a valid number"))))
        .transpose()
}

impl ServiceConfig {
    /// Reads the file, applies environment overrides and resolves relative
    /// paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let mut config: Self = serde_json::from_str(&read(path)?).map_err(|e| parse_error(path, e))?;
        config.apply_env(|name| std::env::var(name).ok())?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        Ok(config)
    }

    /// BACKEND_URL, BACKEND_MODEL, BACKEND_API_KEY, MAX_RETRIES and
    /// MAX_CONCURRENCY. A BACKEND_URL turns a mock backend into a remote one.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        let (url, model, key) = (lookup("BACKEND_URL"), lookup("BACKEND_MODEL"), lookup("BACKEND_API_KEY"));
        match &mut self.backend {
            BackendConfig::Remote(remote) => {
                if let Some(url) = url {
                    remote.url = url;
                }
                if let Some(model) = model {
                    remote.model = model;
                }
                if key.is_some() {
                    remote.api_key = key;
                }
            }
            BackendConfig::Mock { model: mock_model, .. } => {
                if let Some(url) = url {
                    let model = model.ok_or_else(|| {
                        ConfigError::Invalid("BACKEND_URL overrides a mock backend but BACKEND_MODEL is unset".into())
                    })?;
                    self.backend = BackendConfig::Remote(RemoteConfig { url, model, api_key: key, timeout_secs: 60 });
                } else if model.is_some() {
                    *mock_model = model;
                }
            }
        }
        if let Some(n) = env_number("MAX_RETRIES", lookup("MAX_RETRIES"))? {
            self.max_retries = n;
        }
        if let Some(n) = env_number("MAX_CONCURRENCY", lookup("MAX_CONCURRENCY"))? {
            self.max_concurrency = n;
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut self.dictionary, &mut self.categories, &mut self.prompt_catalog, &mut self.hypotheses]
            .into_iter()
            .flatten()
        {
            resolve(p);
        }
        if let BackendConfig::Mock { rules_file: Some(p), .. } = &mut self.backend {
            resolve(p);
        }
        resolve(&mut self.cache.dir);
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, ConfigError> {
        let mut preprocess = PreprocessConfig {
            target_len: self.preprocess.target_len,
            overlap: self.preprocess.overlap,
            table_k: self.preprocess.table_k,
            ..PreprocessConfig::default()
        };
        if let Some(path) = &self.dictionary {
            preprocess.dictionary = TermDictionary::from_json(&read(path)?).map_err(|e| parse_error(path, e))?;
        }
        let mut pipeline = PipelineConfig {
            preprocess,
            k: self.k,
            max_rounds: self.max_rounds,
            fixed_timestamp: self.reproducible.then(|| REPRODUCIBLE_TIMESTAMP.to_string()),
            ..PipelineConfig::default()
        };
        if let Some(path) = &self.categories {
            pipeline.categories = CategoryLists::from_json(&read(path)?).map_err(|e| parse_error(path, e))?;
        }
        if let Some(path) = &self.prompt_catalog {
            pipeline.catalog = PromptCatalog::from_json(&read(path)?).map_err(|e| parse_error(path, e))?;
        }
        if let Some(path) = &self.hypotheses {
            pipeline.hypotheses = HypothesisSet::from_json(&read(path)?).map_err(|e| parse_error(path, e))?;
        }
        pipeline.validate().map_err(ConfigError::Invalid)?;
        Ok(pipeline)
    }

    pub fn gateway(&self) -> Result<Gateway, ConfigError> {
        let completion: Arc<dyn CompletionBackend> = match &self.backend {
            BackendConfig::Mock { rules, rules_file, model } => {
                let mut set = rules.clone();
                if let Some(path) = rules_file {
                    let file: MockRuleSet = serde_json::from_str(&read(path)?).map_err(|e| parse_error(path, e))?;
                    set.rules.extend(file.rules);
                }
                let mut mock = MockBackend::from_rule_set(&set).map_err(ConfigError::Invalid)?;
                if let Some(model) = model {
                    mock = mock.with_model(model.clone());
                }
                Arc::new(mock)
            }
            BackendConfig::Remote(remote) => Arc::new(HttpCompletionBackend::new(remote.clone())),
        };
        let embedder: Arc<dyn EmbeddingBackend> = match &self.embedder {
            EmbedderConfig::Hashing { dim } if *dim > 0 => Arc::new(HashingEmbedder::new(*dim)),
            EmbedderConfig::Remote { remote, dim } if *dim > 0 => Arc::new(HttpEmbeddingBackend::new(remote.clone(), *dim)),
            _ => return Err(ConfigError::Invalid("embedder dim must be at least 1".into())),
        };
        if self.max_concurrency == 0 {
            return Err(ConfigError::Invalid("max_concurrency must be at least 1".into()));
        }
        Ok(Gateway::new(completion)
            .with_embedder(embedder)
            .with_retry(RetryPolicy { max_retries: self.max_retries, ..RetryPolicy::default() })
            .with_max_concurrency(self.max_concurrency))
    }

    pub fn cache(&self) -> Result<DocumentCache, ConfigError> {
        DocumentCache::open(&self.cache.dir, Duration::from_secs(self.cache.max_age_days * 24 * 3600))
            .map_err(|source| ConfigError::Io { path: self.cache.dir.clone(), source })
    }
}
