//! Evaluation harness: ground-truth labels, human verdicts on extraction
//! outputs, accuracy/unfaithfulness aggregation and annotator agreement.

mod agreement;
mod summary;
mod verdicts;

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agreement::{agreement, AgreementReport, SubdimensionAgreement};
pub use summary::{
    aggregate, summarize, CellScore, DimensionSummary, EvalSummary, ModelSummary, SubdimensionScore,
};
pub use verdicts::{load_verdicts, EvalVerdict, RecordOutcome, Verdict, VerdictKey, VerdictStore, ADJUDICATOR};

use crate::dimensions::Dimension;

/// Sub-dimensions of each dimension, as `(slug, label)`.
pub fn subdimensions(dimension: Dimension) -> &'static [(&'static str, &'static str)] {
    match dimension {
        Dimension::Uses => &[
            ("design_intentions", "Design intentions"),
            ("recommendations", "Recommendations"),
            ("ml_benchmarks", "ML Benchmarks"),
        ],
        Dimension::Contributors => &[("authors", "Authors"), ("funding", "Funding"), ("maintenance", "Maintenance")],
        Dimension::Distribution => &[
            ("accessibility", "Accessibility"),
            ("licenses", "Licenses"),
            ("deprecation_policies", "Deprecation policies"),
        ],
        Dimension::Composition => {
            &[("data_records", "Data records"), ("data_splits", "Data splits"), ("statistics", "Statistics")]
        }
        Dimension::Gathering => &[
            ("description_and_type", "Description & type"),
            ("team", "Team"),
            ("source_and_infrastructure", "Source & infrastructure"),
            ("localization", "Localization"),
        ],
        Dimension::Annotation => &[
            ("description_and_type", "Description & type"),
            ("team", "Team"),
            ("infrastructure", "Infrastructure"),
            ("validation", "Validation"),
        ],
        Dimension::SocialConcerns => &[("bias", "Bias"), ("sensitivity_data", "Sensitivity data"), ("privacy", "Privacy")],
    }
}

pub fn dimension_label(dimension: Dimension) -> &'static str {
    match dimension {
        Dimension::Uses => "Uses",
        Dimension::Contributors => "Contributors",
        Dimension::Distribution => "Distribution",
        Dimension::Composition => "Composition",
        Dimension::Gathering => "Gathering",
        Dimension::Annotation => "Annotation",
        Dimension::SocialConcerns => "Social Concerns",
    }
}

/// "Description & type" → "description_and_type".
pub fn slug(text: &str) -> String {
    let spaced: String = text
        .trim()
        .to_lowercase()
        .replace('&', " and ")
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    spaced.split_whitespace().collect::<Vec<_>>().join("_")
}

pub fn parse_dimension(text: &str) -> Result<Dimension, EvalError> {
    slug(text).parse().map_err(|_| EvalError::UnknownDimension {
        value: text.to_string(),
        valid: Dimension::ALL.iter().map(|d| d.as_str()).collect::<Vec<_>>().join(", "),
    })
}

/// Canonical slug of a sub-dimension label or slug.
pub fn parse_subdimension(dimension: Dimension, text: &str) -> Result<&'static str, EvalError> {
    let wanted = slug(text);
    let known = subdimensions(dimension);
    known.iter().map(|(s, _)| *s).find(|s| *s == wanted).ok_or_else(|| EvalError::UnknownSubdimension {
        dimension,
        value: text.to_string(),
        valid: known.iter().map(|(s, _)| *s).collect::<Vec<_>>().join(", "),
    })
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed input: {0}")]
    Format(String),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate ground-truth key {0}")]
    DuplicateKey(ItemKey),
    #[error("unknown dimension {value:?}; valid dimensions: {valid}")]
    UnknownDimension { value: String, valid: String },
    #[error("unknown sub-dimension {value:?} of {dimension}; valid: {valid}")]
    UnknownSubdimension { dimension: Dimension, value: String, valid: String },
    #[error("invalid verdict {0:?}; expected correct, incorrect_faithful or incorrect_unfaithful")]
    InvalidVerdict(String),
    #[error("unresolved annotator conflicts: {}", .0.join(", "))]
    Conflict(Vec<String>),
    #[error("no verdicts")]
    NoVerdicts,
    #[error("invalid score: {0}")]
    InvalidScore(String),
}

/// `(doi, dimension, sub-dimension)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ItemKey {
    pub doi: String,
    pub dimension: Dimension,
    pub subdimension: String,
}

impl fmt::Display for ItemKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.doi, self.dimension, self.subdimension)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthRow {
    pub doi: String,
    pub title: String,
    pub dimension: Dimension,
    pub subdimension: String,
    pub label: String,
}

impl GroundTruthRow {
    pub fn key(&self) -> ItemKey {
        ItemKey { doi: self.doi.clone(), dimension: self.dimension, subdimension: self.subdimension.clone() }
    }
}

const GROUND_TRUTH_COLUMNS: [&str; 5] = ["doi", "title", "dimension", "subdimension", "label"];

fn validate_rows(raw: Vec<[String; 5]>) -> Result<Vec<GroundTruthRow>, EvalError> {
    let mut seen = std::collections::HashSet::new();
    let mut rows = Vec::with_capacity(raw.len());
    for [doi, title, dimension, subdimension, label] in raw {
        if doi.trim().is_empty() {
            return Err(EvalError::Format("empty doi".into()));
        }
        let dimension = parse_dimension(&dimension)?;
        let subdimension = parse_subdimension(dimension, &subdimension)?.to_string();
        let row = GroundTruthRow { doi: doi.trim().to_string(), title, dimension, subdimension, label };
        if !seen.insert(row.key()) {
            return Err(EvalError::DuplicateKey(row.key()));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn parse_ground_truth_csv(text: &str) -> Result<Vec<GroundTruthRow>, EvalError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| EvalError::Format(e.to_string()))?.clone();
    let mut positions = [0; 5];
    for (slot, column) in positions.iter_mut().zip(GROUND_TRUTH_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(column))
            .ok_or_else(|| EvalError::MissingColumn(column.into()))?;
    }
    let mut raw = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EvalError::Format(e.to_string()))?;
        raw.push(positions.map(|i| record.get(i).unwrap_or_default().to_string()));
    }
    validate_rows(raw)
}

pub fn parse_ground_truth_json(text: &str) -> Result<Vec<GroundTruthRow>, EvalError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| EvalError::Format(e.to_string()))?;
    let items = value.as_array().ok_or_else(|| EvalError::Format("expected a JSON array of rows".into()))?;
    let mut raw = Vec::with_capacity(items.len());
    for item in items {
        let object = item.as_object().ok_or_else(|| EvalError::Format("rows must be JSON objects".into()))?;
        let mut row: [String; 5] = Default::default();
        for (slot, column) in row.iter_mut().zip(GROUND_TRUTH_COLUMNS) {
            *slot = match object.get(column) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(other) => return Err(EvalError::Format(format!("column {column:?} must be a string, got {other}"))),
                None => return Err(EvalError::MissingColumn(column.into())),
            };
        }
        raw.push(row);
    }
    validate_rows(raw)
}

/// Reads a `.csv` or `.json` ground-truth file.
pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>, EvalError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| EvalError::Io { path: path.display().to_string(), source })?;
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("csv") => parse_ground_truth_csv(&text),
        Some("json") => parse_ground_truth_json(&text),
        _ => Err(EvalError::Format(format!("{}: expected a .csv or .json file", path.display()))),
    }
}
