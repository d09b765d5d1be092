//! Preprocessing: raw documentation text (plus pre-extracted tables) into a
//! [`Document`] of passages and a term profile, with its [`VectorIndex`].

mod split;
mod table;
mod terms;

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use split::split_passages;
pub use table::{contextualize_table, ParsedTable};
pub use terms::{build_term_profile, tune_query, ConceptTerms, TermCount, TermDictionary, TermProfile};

use crate::chain::prompts::PromptCatalog;
use crate::digest::{json_digest, FieldHasher};
use crate::gateway::{BackendError, Gateway};
use crate::retrieval::{embed_passages, index_passages, RetrievalError, VectorIndex};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid term dictionary: {0}")]
    Dictionary(String),
    #[error("unknown placeholder {{{0}}} in query template")]
    UnknownPlaceholder(String),
    #[error("empty table (table {table})")]
    EmptyTable { table: usize },
    #[error("table {table}: {detail}")]
    Table { table: usize, detail: String },
    #[error("table {table}: backend failed: {source}")]
    TableBackend {
        table: usize,
        #[source]
        source: BackendError,
    },
    #[error("document text is empty")]
    EmptyText,
    #[error("invalid preprocessing config: {0}")]
    Config(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInput {
    pub text: String,
    #[serde(default)]
    pub tables: Vec<ParsedTable>,
}

impl RawInput {
    pub fn new(text: impl Into<String>) -> Self {
        Self { text: text.into(), tables: Vec::new() }
    }

    pub fn with_tables(mut self, tables: Vec<ParsedTable>) -> Self {
        self.tables = tables;
        self
    }

    /// Normalized copy: CRLF/CR line endings become LF, a leading BOM is
    /// dropped, and captionless tables are named `table-<i>`.
    pub fn normalized(&self) -> RawInput {
        let text = self.text.strip_prefix('\u{feff}').unwrap_or(&self.text);
        let text = text.replace("\r\n", "\n").replace('\r', "\n");
        let tables = self
            .tables
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut t = t.clone();
                if t.caption.trim().is_empty() {
                    t.caption = format!("table-{i}");
                }
                t
            })
            .collect();
        RawInput { text, tables }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PassageOrigin {
    Body,
    TableDerived,
}

/// Character span of a body passage; table-derived passages have none.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Span {
    Range(usize, usize),
    Synthetic,
}

impl Serialize for Span {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Span::Range(start, end) => (start, end).serialize(serializer),
            Span::Synthetic => serializer.serialize_str("synthetic"),
        }
    }
}

impl<'de> Deserialize<'de> for Span {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Range(usize, usize),
            Tag(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Range(s, e) if s <= e => Ok(Span::Range(s, e)),
            Raw::Range(s, e) => Err(de::Error::custom(format!("span start {s} after end {e}"))),
            Raw::Tag(t) if t == "synthetic" => Ok(Span::Synthetic),
            Raw::Tag(t) => Err(de::Error::custom(format!("unknown span tag {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub index: usize,
    pub text: String,
    pub span: Span,
    pub origin: PassageOrigin,
}

impl Passage {
    pub fn body(index: usize, text: String, start: usize, end: usize) -> Self {
        Self { index, text, span: Span::Range(start, end), origin: PassageOrigin::Body }
    }

    pub fn table_derived(index: usize, text: String) -> Self {
        Self { index, text, span: Span::Synthetic, origin: PassageOrigin::TableDerived }
    }
}

impl fmt::Display for Passage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.index, self.text.trim())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub target_len: usize,
    pub overlap: usize,
    /// Passages retrieved as context when rendering a table.
    pub table_k: usize,
    pub dictionary: TermDictionary,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { target_len: 1000, overlap: 100, table_k: 4, dictionary: TermDictionary::default() }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        if self.target_len <= self.overlap {
            return Err(IngestError::Config(format!(
                "target_len ({}) must exceed overlap ({})",
                self.target_len, self.overlap
            )));
        }
        if self.table_k == 0 {
            return Err(IngestError::Config("table_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    /// Body passages in text order, then table-derived passages.
    pub passages: Vec<Passage>,
    pub term_profile: TermProfile,
}

impl Document {
    pub fn body_passages(&self) -> impl Iterator<Item = &Passage> {
        self.passages.iter().filter(|p| p.origin == PassageOrigin::Body)
    }

    pub fn passage(&self, index: usize) -> Option<&Passage> {
        self.passages.get(index).filter(|p| p.index == index)
    }
}

/// A document together with the index over all of its passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDocument {
    pub document: Document,
    pub index: VectorIndex,
}

/// Identity of normalized input under a preprocessing config.
pub fn document_id(normalized: &RawInput, config: &PreprocessConfig) -> String {
    let tables = serde_json::to_vec(&normalized.tables).expect("tables serialize");
    FieldHasher::new()
        .field(&normalized.text)
        .field(tables)
        .field(config.digest())
        .finish()
}

/// Splits, profiles, renders tables and indexes.
///
/// Tables are rendered against the body-passage index, then appended as
/// passages and embedded like any other passage.
pub fn build_document(
    input: &RawInput,
    config: &PreprocessConfig,
    catalog: &PromptCatalog,
    gateway: &Gateway,
) -> Result<PreparedDocument, IngestError> {
    config.validate()?;
    let input = input.normalized();
    if input.text.trim().is_empty() {
        return Err(IngestError::EmptyText);
    }
    let mut passages = split_passages(&input.text, config.target_len, config.overlap);
    let term_profile = build_term_profile(&input.text, &config.dictionary);
    let body_index = index_passages(&passages, gateway)?;

    let mut derived = Vec::with_capacity(input.tables.len());
    for (i, table) in input.tables.iter().enumerate() {
        let next = passages.len() + derived.len();
        derived.push(contextualize_table(table, i, &passages, &body_index, gateway, catalog, config.table_k, next)?);
    }
    let index = if derived.is_empty() {
        body_index
    } else {
        let entries = embed_passages(&derived, gateway)?;
        body_index.extended(entries)?
    };
    passages.extend(derived);

    Ok(PreparedDocument {
        document: Document { id: document_id(&input, config), passages, term_profile },
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{MockBackend, MockRule};
    use crate::retrieval::{top_k, EmbeddingVector, HashingEmbedder};
    use std::sync::Arc;

    fn gateway(rules: Vec<MockRule>) -> (Gateway, Arc<MockBackend>) {
        let mock = Arc::new(MockBackend::new(rules));
        let gw = Gateway::new(mock.clone()).with_embedder(Arc::new(HashingEmbedder::new(64)));
        (gw, mock)
    }

    fn sample_text() -> String {
        let mut text = String::new();
        for i in 0..40 {
            text.push_str(&format!(
                "Sentence {i} describes the acquisition of PET/CT scans at the clinic. "
            ));
        }
        text.push_str("The annotators' demographics are shown in the table below. ");
        text
    }

    fn demographics_table() -> ParsedTable {
        ParsedTable {
            caption: "Demographics of annotators".into(),
            rows: vec![vec!["Role".into(), "Years".into()], vec!["Radiologist".into(), "10".into()]],
            source_position: None,
        }
    }

    #[test]
    fn no_tables_means_plain_split() {
        let (gw, _) = gateway(vec![]);
        let text = sample_text();
        let config = PreprocessConfig::default();
        let doc = build_document(&RawInput::new(text.clone()), &config, &PromptCatalog::default(), &gw).unwrap();
        assert_eq!(doc.document.passages, split_passages(&text, 1000, 100));
        assert_eq!(doc.index.len(), doc.document.passages.len());
        assert_eq!(doc.document.term_profile.chosen("gathering"), Some("acquisition"));
    }

    #[test]
    fn identical_input_gives_identical_document() {
        let (gw, _) = gateway(vec![]);
        let input = RawInput::new(sample_text());
        let config = PreprocessConfig::default();
        let a = build_document(&input, &config, &PromptCatalog::default(), &gw).unwrap();
        let b = build_document(&input, &config, &PromptCatalog::default(), &gw).unwrap();
        assert_eq!(a.document.id, b.document.id);
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());

        let other = PreprocessConfig { target_len: 500, ..config };
        let c = build_document(&input, &other, &PromptCatalog::default(), &gw).unwrap();
        assert_ne!(a.document.id, c.document.id);
    }

    #[test]
    fn crlf_is_normalized_before_hashing() {
        let config = PreprocessConfig::default();
        let a = document_id(&RawInput::new("a\r\nb").normalized(), &config);
        let b = document_id(&RawInput::new("a\nb").normalized(), &config);
        assert_eq!(a, b);
    }

    #[test]
    fn one_table_appends_one_derived_passage() {
        let rendering = "The annotation team consisted of two radiologists with ten years of experience.";
        let (gw, mock) = gateway(vec![MockRule::contains("Demographics of annotators", rendering)]);
        let input = RawInput::new(sample_text()).with_tables(vec![demographics_table()]);
        let config = PreprocessConfig::default();
        let body_count = split_passages(&input.text, 1000, 100).len();
        let doc = build_document(&input, &config, &PromptCatalog::default(), &gw).unwrap();
        let passages = &doc.document.passages;
        assert_eq!(passages.len(), body_count + 1);
        let last = passages.last().unwrap();
        assert_eq!(last.origin, PassageOrigin::TableDerived);
        assert_eq!(last.span, Span::Synthetic);
        assert_eq!(last.text, rendering);
        assert_eq!(doc.index.len(), passages.len());
        let prompt = &mock.prompts()[0];
        assert!(prompt.contains("| Role | Years |\n| --- | --- |\n| Radiologist | 10 |"), "{prompt}");
    }

    #[test]
    fn table_context_matches_brute_force_retrieval() {
        let (gw, mock) = gateway(vec![MockRule::contains("Demographics of annotators", "rendered")]);
        let text = sample_text();
        let passages = split_passages(&text, 300, 50);
        let index = index_passages(&passages, &gw).unwrap();
        let table = demographics_table();
        contextualize_table(&table, 0, &passages, &index, &gw, &PromptCatalog::default(), 3, passages.len()).unwrap();

        // brute force: embed caption and every passage independently, sort all
        let embedder = HashingEmbedder::new(64);
        let q = EmbeddingVector::normalized(embedder.vectorize(&table.caption)).unwrap();
        let mut scored: Vec<(usize, f64)> = passages
            .iter()
            .map(|p| (p.index, EmbeddingVector::normalized(embedder.vectorize(&p.text)).unwrap().dot(&q)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let expected: Vec<usize> = scored.iter().take(3).map(|s| s.0).collect();
        let got: Vec<usize> = top_k(&index, &q, 3).unwrap().iter().map(|h| h.passage).collect();
        assert_eq!(got, expected);
        let prompt = &mock.prompts()[0];
        for id in expected {
            assert!(prompt.contains(&format!("[{id}] ")), "passage {id} missing from prompt");
        }
    }

    #[test]
    fn empty_table_is_rejected() {
        let (gw, _) = gateway(vec![]);
        let passages = split_passages("Some text here.", 100, 10);
        let index = index_passages(&passages, &gw).unwrap();
        let table = ParsedTable { caption: "x".into(), rows: vec![], source_position: None };
        let err = contextualize_table(&table, 0, &passages, &index, &gw, &PromptCatalog::default(), 2, 1).unwrap_err();
        assert!(matches!(err, IngestError::EmptyTable { table: 0 }));
        assert!(err.to_string().contains("empty table"));
    }

    #[test]
    fn backend_failure_names_the_table() {
        let (gw, _) = gateway(vec![]);
        let input = RawInput::new(sample_text()).with_tables(vec![demographics_table()]);
        let err = build_document(&input, &PreprocessConfig::default(), &PromptCatalog::default(), &gw).unwrap_err();
        assert!(matches!(err, IngestError::TableBackend { table: 0, .. }), "{err}");
    }

    #[test]
    fn captionless_tables_get_a_name() {
        let input = RawInput::new("t").with_tables(vec![ParsedTable {
            caption: " ".into(),
            rows: vec![vec!["a".into()]],
            source_position: None,
        }]);
        assert_eq!(input.normalized().tables[0].caption, "table-0");
    }

    #[test]
    fn span_serializes_as_pair_or_tag() {
        let p = Passage::body(0, "x".into(), 3, 9);
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["span"], serde_json::json!([3, 9]));
        let t = Passage::table_derived(1, "y".into());
        assert_eq!(serde_json::to_value(&t).unwrap()["span"], "synthetic");
        let back: Passage = serde_json::from_value(serde_json::to_value(&t).unwrap()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn empty_text_is_rejected() {
        let (gw, _) = gateway(vec![]);
        let err = build_document(&RawInput::new("  \n"), &PreprocessConfig::default(), &PromptCatalog::default(), &gw);
        assert!(matches!(err, Err(IngestError::EmptyText)));
    }
}
