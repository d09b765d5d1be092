//! The pipeline behind the API and the CLI: cached ingestion, per-dimension
//! analysis and completeness reports over stored records.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use datadoc_core::completeness::{assess, CompletenessError, CompletenessReport, CoverageClassifier, CoverageMode};
use datadoc_core::dimensions::{extract_dimension, Dimension, DimensionRecord};
use datadoc_core::gateway::Gateway;
use datadoc_core::ingest::{IngestError, ParsedTable};
use datadoc_core::{build_document, PipelineConfig, PreparedDocument, RawInput};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{cache_key, CacheError, DocumentCache};
use crate::config::{ConfigError, ServiceConfig};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("text must not be empty")]
    EmptyText,
    #[error("invalid request: {0}")]
    BadRequest(String),
    #[error("{0}")]
    UnknownDimension(String),
    #[error("unknown document {0}")]
    UnknownDocument(String),
    #[error("document {0} has no analyzed dimensions yet")]
    NotAnalyzed(String),
    #[error("backend failure: {0}")]
    Backend(String),
    #[error("cache: {0}")]
    Cache(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::EmptyText => ServiceError::EmptyText,
            IngestError::TableBackend { .. } | IngestError::Retrieval(_) => ServiceError::Backend(e.to_string()),
            other => ServiceError::BadRequest(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Timings {
    pub preprocess_ms: u64,
    pub extraction_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    pub document_id: String,
    pub dimension: Dimension,
    pub record: DimensionRecord,
    /// Whether preprocessing was reused rather than rebuilt.
    pub cache_hit: bool,
    pub timings: Timings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentResponse {
    pub document_id: String,
    pub passages: usize,
    pub cache_hit: bool,
}

/// What to analyze: a known document or fresh content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub document_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tables: Option<Vec<ParsedTable>>,
}

pub struct Ingested {
    pub prepared: Arc<PreparedDocument>,
    pub cache_hit: bool,
    pub elapsed_ms: u64,
}

pub struct Service {
    pipeline: PipelineConfig,
    gateway: Arc<Gateway>,
    cache: DocumentCache,
    coverage: CoverageMode,
    reproducible: bool,
    documents: RwLock<HashMap<String, Arc<PreparedDocument>>>,
    records: Mutex<HashMap<String, BTreeMap<Dimension, DimensionRecord>>>,
}

fn millis(since: Instant) -> u64 {
    since.elapsed().as_millis() as u64
}

impl Service {
    pub fn new(
        pipeline: PipelineConfig,
        gateway: Arc<Gateway>,
        cache: DocumentCache,
        coverage: CoverageMode,
        reproducible: bool,
    ) -> Self {
        Self {
            pipeline,
            gateway,
            cache,
            coverage,
            reproducible,
            documents: RwLock::new(HashMap::new()),
            records: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_config(config: &ServiceConfig) -> Result<Self, ConfigError> {
        Ok(Self::new(
            config.pipeline()?,
            Arc::new(config.gateway()?),
            config.cache()?,
            config.coverage,
            config.reproducible,
        ))
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn pipeline(&self) -> &PipelineConfig {
        &self.pipeline
    }

    pub fn cache(&self) -> &DocumentCache {
        &self.cache
    }

    fn elapsed(&self, since: Instant) -> u64 {
        if self.reproducible {
            0
        } else {
            millis(since)
        }
    }

    /// Builds the document and its index, or reuses the cached ones.
    pub fn ingest(&self, input: &RawInput) -> Result<Ingested, ServiceError> {
        let start = Instant::now();
        if input.text.trim().is_empty() {
            return Err(ServiceError::EmptyText);
        }
        let embedder = self.gateway.embedder_id().ok_or_else(|| ServiceError::Backend("no embedder configured".into()))?;
        let key = cache_key(input, &self.pipeline.preprocess, &self.pipeline.catalog.digest(), &embedder);
        let built = self.cache.get_or_build(&key, || {
            build_document(input, &self.pipeline.preprocess, &self.pipeline.catalog, &self.gateway)
        });
        let (prepared, cache_hit) = match built {
            Ok(v) => v,
            Err(CacheError::Io(e)) => return Err(e.into()),
            Err(CacheError::Build(e)) => return Err(e.into()),
        };
        let prepared = Arc::new(prepared);
        self.documents.write().unwrap().insert(prepared.document.id.clone(), prepared.clone());
        Ok(Ingested { prepared, cache_hit, elapsed_ms: self.elapsed(start) })
    }

    pub fn document(&self, id: &str) -> Result<Arc<PreparedDocument>, ServiceError> {
        if let Some(doc) = self.documents.read().unwrap().get(id) {
            return Ok(doc.clone());
        }
        let found = self.cache.find_document(id)?.ok_or_else(|| ServiceError::UnknownDocument(id.to_string()))?;
        let found = Arc::new(found);
        self.documents.write().unwrap().insert(id.to_string(), found.clone());
        Ok(found)
    }

    /// Runs one dimension's chain. A backend failure still yields a
    /// (partial) record; callers inspect `record.error`.
    pub fn analyze(&self, dimension: Dimension, request: &AnalyzeRequest) -> Result<AnalyzeResponse, ServiceError> {
        let start = Instant::now();
        let (prepared, cache_hit, preprocess_ms) = match (&request.document_id, &request.text) {
            (Some(id), None) if request.tables.is_none() => (self.document(id)?, true, 0),
            (None, Some(text)) => {
                let input = RawInput { text: text.clone(), tables: request.tables.clone().unwrap_or_default() };
                let ingested = self.ingest(&input)?;
                (ingested.prepared, ingested.cache_hit, ingested.elapsed_ms)
            }
            _ => return Err(ServiceError::BadRequest("provide either document_id or text (with optional tables)".into())),
        };
        let extraction = Instant::now();
        let record = extract_dimension(&prepared, dimension, &self.gateway, &self.pipeline);
        let extraction_ms = self.elapsed(extraction);
        self.records
            .lock()
            .unwrap()
            .entry(prepared.document.id.clone())
            .or_default()
            .insert(dimension, record.clone());
        Ok(AnalyzeResponse {
            document_id: prepared.document.id.clone(),
            dimension,
            record,
            cache_hit,
            timings: Timings { preprocess_ms, extraction_ms, total_ms: self.elapsed(start) },
        })
    }

    pub fn records(&self, document_id: &str) -> Vec<DimensionRecord> {
        self.records.lock().unwrap().get(document_id).map(|m| m.values().cloned().collect()).unwrap_or_default()
    }

    pub fn assess(&self, records: &[DimensionRecord]) -> Result<CompletenessReport, CompletenessError> {
        let classifier = match self.coverage {
            CoverageMode::Sentinel => CoverageClassifier::Sentinel,
            CoverageMode::Entailment => CoverageClassifier::Entailment {
                gateway: &self.gateway,
                catalog: &self.pipeline.catalog,
                hypotheses: &self.pipeline.hypotheses,
            },
        };
        assess(records, &classifier)
    }

    /// Completeness over the dimensions analyzed so far.
    pub fn report(&self, document_id: &str) -> Result<CompletenessReport, ServiceError> {
        self.document(document_id)?;
        let records = self.records(document_id);
        if records.is_empty() {
            return Err(ServiceError::NotAnalyzed(document_id.to_string()));
        }
        self.assess(&records).map_err(|e| ServiceError::BadRequest(e.to_string()))
    }
}
