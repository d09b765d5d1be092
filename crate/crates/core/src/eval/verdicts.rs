//! Human verdicts and their append-only JSON-lines store.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{parse_dimension, parse_subdimension, EvalError, ItemKey};
use crate::dimensions::Dimension;

/// Annotator id reserved for the agreed final verdict.
pub const ADJUDICATOR: &str = "adjudicated";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Correct,
    IncorrectFaithful,
    /// Wrong and not supported by the source document: a hallucination.
    IncorrectUnfaithful,
}

impl FromStr for Verdict {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "correct" => Ok(Verdict::Correct),
            "incorrect_faithful" => Ok(Verdict::IncorrectFaithful),
            "incorrect_unfaithful" => Ok(Verdict::IncorrectUnfaithful),
            other => Err(EvalError::InvalidVerdict(other.to_string())),
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Correct => "correct",
            Verdict::IncorrectFaithful => "incorrect_faithful",
            Verdict::IncorrectUnfaithful => "incorrect_unfaithful",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalVerdict {
    pub doi: String,
    pub dimension: Dimension,
    pub subdimension: String,
    pub model: String,
    pub annotator: String,
    pub verdict: Verdict,
}

/// `(doi, dimension, sub-dimension, model, annotator)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VerdictKey {
    pub item: ItemKey,
    pub model: String,
    pub annotator: String,
}

impl EvalVerdict {
    /// Builds a verdict from loose text, canonicalizing names.
    pub fn parse(
        doi: &str,
        dimension: &str,
        subdimension: &str,
        model: &str,
        annotator: &str,
        verdict: &str,
    ) -> Result<Self, EvalError> {
        let dimension = parse_dimension(dimension)?;
        let v = Self {
            doi: doi.trim().to_string(),
            dimension,
            subdimension: parse_subdimension(dimension, subdimension)?.to_string(),
            model: model.trim().to_string(),
            annotator: annotator.trim().to_string(),
            verdict: verdict.parse()?,
        };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.doi.is_empty() || self.model.is_empty() || self.annotator.is_empty() {
            return Err(EvalError::Format("doi, model and annotator must be non-empty".into()));
        }
        parse_subdimension(self.dimension, &self.subdimension).map(|_| ())
    }

    pub fn item(&self) -> ItemKey {
        ItemKey { doi: self.doi.clone(), dimension: self.dimension, subdimension: self.subdimension.clone() }
    }

    pub fn key(&self) -> VerdictKey {
        VerdictKey { item: self.item(), model: self.model.clone(), annotator: self.annotator.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordOutcome {
    Inserted,
    Replaced,
}

/// One verdict per key; re-recording a key replaces the earlier verdict.
/// With a backing file every record is appended, and loading replays the
/// file so the last line per key wins.
#[derive(Debug, Default)]
pub struct VerdictStore {
    path: Option<PathBuf>,
    verdicts: BTreeMap<VerdictKey, EvalVerdict>,
}

fn parse_line(line: &str, number: usize) -> Result<EvalVerdict, EvalError> {
    let raw: serde_json::Value =
        serde_json::from_str(line).map_err(|e| EvalError::Format(format!("line {number}: {e}")))?;
    let field = |name: &str| -> Result<String, EvalError> {
        raw.get(name)
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| EvalError::Format(format!("line {number}: missing string field {name:?}")))
    };
    EvalVerdict::parse(
        &field("doi")?,
        &field("dimension")?,
        &field("subdimension")?,
        &field("model")?,
        &field("annotator")?,
        &field("verdict")?,
    )
}

impl VerdictStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) a JSON-lines store at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, EvalError> {
        let path = path.into();
        let mut store = Self { path: None, verdicts: BTreeMap::new() };
        if path.exists() {
            for v in load_verdicts(&path)? {
                store.insert(v);
            }
        }
        store.path = Some(path);
        Ok(store)
    }

    fn insert(&mut self, verdict: EvalVerdict) -> RecordOutcome {
        match self.verdicts.insert(verdict.key(), verdict) {
            Some(_) => RecordOutcome::Replaced,
            None => RecordOutcome::Inserted,
        }
    }

    pub fn record(&mut self, verdict: EvalVerdict) -> Result<RecordOutcome, EvalError> {
        verdict.validate()?;
        if let Some(path) = &self.path {
            let io = |source| EvalError::Io { path: path.display().to_string(), source };
            let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
            let line = serde_json::to_string(&verdict).expect("verdicts serialize");
            writeln!(file, "{line}").map_err(io)?;
        }
        let key = verdict.key();
        let outcome = self.insert(verdict);
        if outcome == RecordOutcome::Replaced {
            tracing::warn!(
                doi = %key.item.doi,
                dimension = %key.item.dimension,
                subdimension = %key.item.subdimension,
                model = %key.model,
                annotator = %key.annotator,
                "verdict re-recorded; replacing the earlier one"
            );
        }
        Ok(outcome)
    }

    pub fn len(&self) -> usize {
        self.verdicts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.verdicts.is_empty()
    }

    pub fn verdicts(&self) -> Vec<EvalVerdict> {
        self.verdicts.values().cloned().collect()
    }
}

/// Reads a JSON-lines verdict file; later lines replace earlier ones with
/// the same key.
pub fn load_verdicts(path: &Path) -> Result<Vec<EvalVerdict>, EvalError> {
    let text =
        std::fs::read_to_string(path).map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    let mut latest = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v = parse_line(line, i + 1)?;
        latest.insert(v.key(), v);
    }
    Ok(latest.into_values().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verdict(annotator: &str, v: &str) -> EvalVerdict {
        EvalVerdict::parse("10.1/a", "uses", "recommendations", "gpt", annotator, v).unwrap()
    }

    #[test]
    fn recording_and_replacing() {
        let mut store = VerdictStore::in_memory();
        assert_eq!(store.record(verdict("ann1", "correct")).unwrap(), RecordOutcome::Inserted);
        assert_eq!(store.len(), 1);
        assert_eq!(store.record(verdict("ann1", "incorrect_faithful")).unwrap(), RecordOutcome::Replaced);
        assert_eq!(store.len(), 1);
        assert_eq!(store.verdicts()[0].verdict, Verdict::IncorrectFaithful);
    }

    #[test]
    fn invalid_verdict_is_rejected() {
        let err = EvalVerdict::parse("10.1/a", "uses", "recommendations", "gpt", "ann1", "maybe").unwrap_err();
        assert!(matches!(err, EvalError::InvalidVerdict(v) if v == "maybe"));
    }

    #[test]
    fn file_store_replays_last_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("verdicts.jsonl");
        {
            let mut store = VerdictStore::open(&path).unwrap();
            store.record(verdict("ann1", "correct")).unwrap();
            store.record(verdict("ann2", "correct")).unwrap();
            store.record(verdict("ann1", "incorrect_unfaithful")).unwrap();
        }
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 3);
        let store = VerdictStore::open(&path).unwrap();
        assert_eq!(store.len(), 2);
        let loaded = load_verdicts(&path).unwrap();
        assert_eq!(loaded.iter().find(|v| v.annotator == "ann1").unwrap().verdict, Verdict::IncorrectUnfaithful);
    }

    #[test]
    fn malformed_lines_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.jsonl");
        std::fs::write(
            &path,
            "{\"doi\":\"d\",\"dimension\":\"uses\",\"subdimension\":\"recommendations\",\"model\":\"m\",\"annotator\":\"a\",\"verdict\":\"perhaps\"}\n",
        )
        .unwrap();
        assert!(matches!(load_verdicts(&path), Err(EvalError::InvalidVerdict(_))));
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(load_verdicts(&path), Err(EvalError::Format(m)) if m.starts_with("line 1")));
    }
}
