//! Passage embeddings and exact top-k cosine search.
//!
//! Vectors are L2-normalized on the way in, so cosine similarity is a plain
//! dot product. Search is a full scan: documents hold a few hundred passages
//! at most and exact results keep retrieval reproducible.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{BackendError, BackendFailure, EmbeddingBackend, Gateway};
use crate::ingest::Passage;

/// Passages per embedding request when indexing.
pub const EMBED_BATCH: usize = 16;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding has zero norm")]
    ZeroVector,
    #[error("dimension mismatch: index has {index}, query has {query}")]
    DimMismatch { index: usize, query: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("cannot index an empty passage list")]
    NoPassages,
    #[error("duplicate passage ref {0}")]
    DuplicateRef(usize),
    #[error("embedding passages {first}..={last} failed: {source}")]
    Passage {
        first: usize,
        last: usize,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// A unit-length embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `values` to unit L2 norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self, RetrievalError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(RetrievalError::ZeroVector);
        }
        Ok(Self(values.into_iter().map(|v| v / norm).collect()))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

/// Embeds one text through the gateway and normalizes it.
pub fn embed(gateway: &Gateway, text: &str, tag: &str) -> Result<EmbeddingVector, RetrievalError> {
    if text.trim().is_empty() {
        return Err(RetrievalError::EmptyText);
    }
    let mut raw = gateway.embed(&[text], tag)?;
    EmbeddingVector::normalized(raw.pop().unwrap_or_default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub passage: usize,
    pub vector: EmbeddingVector,
}

/// Immutable set of embedded passages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub passage: usize,
    pub score: f64,
}

impl VectorIndex {
    pub fn from_entries(entries: Vec<IndexEntry>) -> Result<Self, RetrievalError> {
        let dim = entries.first().ok_or(RetrievalError::NoPassages)?.vector.dim();
        let mut seen = std::collections::HashSet::new();
        for entry in &entries {
            if entry.vector.dim() != dim {
                return Err(RetrievalError::DimMismatch { index: dim, query: entry.vector.dim() });
            }
            if !seen.insert(entry.passage) {
                return Err(RetrievalError::DuplicateRef(entry.passage));
            }
        }
        Ok(Self { dim, entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// New index holding these entries followed by `more`.
    pub fn extended(&self, more: Vec<IndexEntry>) -> Result<Self, RetrievalError> {
        let mut entries = self.entries.clone();
        entries.extend(more);
        Self::from_entries(entries)
    }
}

/// Embeds passages in order, batching requests through the gateway.
pub fn embed_passages(passages: &[Passage], gateway: &Gateway) -> Result<Vec<IndexEntry>, RetrievalError> {
    let mut entries = Vec::with_capacity(passages.len());
    for batch in passages.chunks(EMBED_BATCH) {
        let texts: Vec<&str> = batch.iter().map(|p| p.text.as_str()).collect();
        let first = batch[0].index;
        let last = batch[batch.len() - 1].index;
        let raw = gateway
            .embed(&texts, "ingest/passages")
            .map_err(|source| RetrievalError::Passage { first, last, source })?;
        for (passage, values) in batch.iter().zip(raw) {
            entries.push(IndexEntry { passage: passage.index, vector: EmbeddingVector::normalized(values)? });
        }
    }
    Ok(entries)
}

pub fn index_passages(passages: &[Passage], gateway: &Gateway) -> Result<VectorIndex, RetrievalError> {
    if passages.is_empty() {
        return Err(RetrievalError::NoPassages);
    }
    VectorIndex::from_entries(embed_passages(passages, gateway)?)
}

/// Exact top-k by cosine similarity; ties go to the lower passage index.
pub fn top_k(index: &VectorIndex, query: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit>, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if query.dim() != index.dim {
        return Err(RetrievalError::DimMismatch { index: index.dim, query: query.dim() });
    }
    let mut hits: Vec<RetrievalHit> = index
        .entries
        .iter()
        .map(|e| RetrievalHit { passage: e.passage, score: e.vector.dot(query) })
        .collect();
    hits.sort_by(|a, b| match b.score.total_cmp(&a.score) {
        Ordering::Equal => a.passage.cmp(&b.passage),
        other => other,
    });
    hits.truncate(k);
    Ok(hits)
}

/// Deterministic offline embedder: character 3-grams feature-hashed into
/// `dim` buckets (FNV-1a). Texts shorter than three characters hash whole.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dim must be positive");
        Self { dim }
    }

    pub fn vectorize(&self, text: &str) -> Vec<f64> {
        let chars: Vec<char> = text.to_lowercase().chars().collect();
        let mut out = vec![0.0; self.dim];
        let mut bump = |gram: &[char]| {
            let s: String = gram.iter().collect();
            out[(fnv1a(s.as_bytes()) % self.dim as u64) as usize] += 1.0;
        };
        if chars.len() < 3 {
            if !chars.is_empty() {
                bump(&chars);
            }
        } else {
            chars.windows(3).for_each(&mut bump);
        }
        out
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    hash
}

impl EmbeddingBackend for HashingEmbedder {
    fn id(&self) -> String {
        format!("hashing-3gram:{}", self.dim)
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendFailure> {
        Ok(texts.iter().map(|t| self.vectorize(t)).collect())
    }
}

/// Scripted embedder: exact texts map to fixed vectors, anything else falls
/// back to the hashing embedder. Lets tests arrange what retrieval returns.
#[derive(Debug, Clone)]
pub struct LookupEmbedder {
    fallback: HashingEmbedder,
    table: std::collections::HashMap<String, Vec<f64>>,
}

impl LookupEmbedder {
    pub fn new(dim: usize) -> Self {
        Self { fallback: HashingEmbedder::new(dim), table: Default::default() }
    }

    pub fn with(mut self, text: impl Into<String>, vector: Vec<f64>) -> Self {
        assert_eq!(vector.len(), self.fallback.dim, "vector has the wrong dim");
        self.table.insert(text.into(), vector);
        self
    }

    /// Maps `text` to the `i`-th standard basis vector.
    pub fn with_axis(self, text: impl Into<String>, i: usize) -> Self {
        let mut v = vec![0.0; self.fallback.dim];
        v[i] = 1.0;
        self.with(text, v)
    }
}

impl EmbeddingBackend for LookupEmbedder {
    fn id(&self) -> String {
        format!("lookup:{}", self.fallback.dim)
    }

    fn dim(&self) -> usize {
        self.fallback.dim
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, BackendFailure> {
        Ok(texts
            .iter()
            .map(|t| self.table.get(*t).cloned().unwrap_or_else(|| self.fallback.vectorize(t)))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBackend;
    use crate::ingest::PassageOrigin;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn gateway(dim: usize) -> Gateway {
        Gateway::new(Arc::new(MockBackend::new(vec![]))).with_embedder(Arc::new(HashingEmbedder::new(dim)))
    }

    fn passages(texts: &[&str]) -> Vec<Passage> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Passage::body(i, t.to_string(), 0, t.chars().count()))
            .collect()
    }

    fn unit(values: &[f64]) -> EmbeddingVector {
        EmbeddingVector::normalized(values.to_vec()).unwrap()
    }

    #[test]
    fn embedding_is_deterministic_and_unit_length() {
        let gw = gateway(64);
        let a = embed(&gw, "annotation guidelines", "t").unwrap();
        let b = embed(&gw, "annotation guidelines", "t").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.values().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(embed(&gateway(8), "  ", "t"), Err(RetrievalError::EmptyText)));
    }

    #[test]
    fn short_strings_rarely_collide() {
        let gw = gateway(64);
        let vectors: Vec<_> = (0..100).map(|i| embed(&gw, &format!("item {i}"), "t").unwrap()).collect();
        let mut distinct: Vec<&EmbeddingVector> = Vec::new();
        for v in &vectors {
            if !distinct.contains(&v) {
                distinct.push(v);
            }
        }
        assert!(distinct.len() >= 99, "only {} distinct", distinct.len());
    }

    #[test]
    fn index_preserves_order_and_is_reproducible() {
        let ps = passages(&["alpha", "beta", "gamma"]);
        let gw = gateway(16);
        let a = index_passages(&ps, &gw).unwrap();
        let b = index_passages(&ps, &gw).unwrap();
        assert_eq!(a.entries().iter().map(|e| e.passage).collect::<Vec<_>>(), [0, 1, 2]);
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_eq!(index_passages(&ps[..1], &gw).unwrap().len(), 1);
        assert!(matches!(index_passages(&[], &gw), Err(RetrievalError::NoPassages)));
    }

    #[test]
    fn self_similarity_ranks_first() {
        let entries: Vec<_> = [[1.0, 2.0, 0.0], [0.0, 1.0, 1.0], [3.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
            .iter()
            .enumerate()
            .map(|(i, v)| IndexEntry { passage: i, vector: unit(v) })
            .collect();
        let index = VectorIndex::from_entries(entries).unwrap();
        let query = index.entries()[3].vector.clone();
        let hits = top_k(&index, &query, 2).unwrap();
        assert_eq!(hits[0].passage, 3);
        assert!((hits[0].score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn orthogonal_query_scores_zero() {
        let entries = vec![
            IndexEntry { passage: 0, vector: unit(&[1.0, 0.0, 0.0]) },
            IndexEntry { passage: 1, vector: unit(&[0.0, 1.0, 0.0]) },
        ];
        let index = VectorIndex::from_entries(entries).unwrap();
        let hits = top_k(&index, &unit(&[0.0, 0.0, 1.0]), 5).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.score.abs() < 1e-6));
        // tie broken by passage index
        assert_eq!(hits[0].passage, 0);
    }

    #[test]
    fn dim_mismatch_and_zero_k() {
        let index = VectorIndex::from_entries(vec![IndexEntry { passage: 0, vector: unit(&[1.0, 0.0]) }]).unwrap();
        assert!(matches!(top_k(&index, &unit(&[1.0, 0.0, 0.0]), 1), Err(RetrievalError::DimMismatch { .. })));
        assert!(matches!(top_k(&index, &unit(&[1.0, 0.0]), 0), Err(RetrievalError::ZeroK)));
    }

    #[test]
    fn duplicate_refs_are_rejected() {
        let entries = vec![
            IndexEntry { passage: 0, vector: unit(&[1.0, 0.0]) },
            IndexEntry { passage: 0, vector: unit(&[0.0, 1.0]) },
        ];
        assert!(matches!(VectorIndex::from_entries(entries), Err(RetrievalError::DuplicateRef(0))));
    }

    #[test]
    fn passage_errors_carry_the_batch_range() {
        let gw = Gateway::new(Arc::new(MockBackend::new(vec![])));
        let ps = passages(&["a", "b"]);
        match index_passages(&ps, &gw) {
            Err(RetrievalError::Passage { first: 0, last: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn body_passage_helper_sets_origin() {
        assert_eq!(passages(&["x"])[0].origin, PassageOrigin::Body);
    }

    proptest! {
        #[test]
        fn results_are_sorted_and_complete(
            raw in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..40),
            q in prop::collection::vec(-1.0f64..1.0, 4),
        ) {
            let entries: Vec<_> = raw
                .iter()
                .enumerate()
                .filter_map(|(i, v)| EmbeddingVector::normalized(v.clone()).ok().map(|vector| IndexEntry { passage: i, vector }))
                .collect();
            prop_assume!(!entries.is_empty());
            let Ok(query) = EmbeddingVector::normalized(q) else { return Ok(()); };
            let index = VectorIndex::from_entries(entries).unwrap();
            let hits = top_k(&index, &query, index.len()).unwrap();
            prop_assert_eq!(hits.len(), index.len());
            let mut ids: Vec<_> = hits.iter().map(|h| h.passage).collect();
            ids.sort_unstable();
            ids.dedup();
            prop_assert_eq!(ids.len(), index.len());
            for w in hits.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
        }
    }
}
