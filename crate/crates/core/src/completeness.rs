//! Coverage report over extracted records.
//!
//! The default rule is deterministic: a field is covered when it was found
//! with a non-empty value. The entailment mode asks the backend which of a
//! positive/negative hypothesis pair the extracted value supports.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{normalize_label, PromptCatalog, PromptVars};
use crate::dimensions::{Dimension, DimensionRecord, ExtractedField, FieldStatus};
use crate::gateway::{CompletionRequest, Gateway};

const DEFAULT_HYPOTHESES: &str = include_str!("../assets/hypotheses.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hypothesis {
    pub positive: String,
    pub negative: String,
}

/// dimension → field → hypothesis pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisSet(pub BTreeMap<String, BTreeMap<String, Hypothesis>>);

impl Default for HypothesisSet {
    fn default() -> Self {
        Self::from_json(DEFAULT_HYPOTHESES).expect("bundled hypotheses are valid")
    }
}

impl HypothesisSet {
    pub fn from_json(json: &str) -> Result<Self, String> {
        let set: Self = serde_json::from_str(json).map_err(|e| e.to_string())?;
        for (dim, fields) in &set.0 {
            dim.parse::<Dimension>().map_err(|e| e.to_string())?;
            for (field, h) in fields {
                if h.positive.trim().is_empty() || h.negative.trim().is_empty() {
                    return Err(format!("{dim}/{field}: empty hypothesis"));
                }
            }
        }
        Ok(set)
    }

    /// The configured pair, or a generic one naming the field.
    pub fn get(&self, dimension: Dimension, field: &str) -> Hypothesis {
        self.0.get(dimension.as_str()).and_then(|f| f.get(field)).cloned().unwrap_or_else(|| {
            let what = format!("{} of the {}", field.replace('_', " "), dimension.as_str().replace('_', " "));
            Hypothesis {
                positive: format!("there is information about the {what}"),
                negative: format!("there is no information about the {what}"),
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMode {
    Sentinel,
    Entailment,
}

pub enum CoverageClassifier<'a> {
    Sentinel,
    Entailment { gateway: &'a Gateway, catalog: &'a PromptCatalog, hypotheses: &'a HypothesisSet },
}

impl CoverageClassifier<'_> {
    pub fn mode(&self) -> CoverageMode {
        match self {
            CoverageClassifier::Sentinel => CoverageMode::Sentinel,
            CoverageClassifier::Entailment { .. } => CoverageMode::Entailment,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldCoverage {
    pub field: String,
    pub covered: bool,
    /// Why the sentinel rule was used in entailment mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionCoverage {
    pub dimension: Dimension,
    pub fields: Vec<FieldCoverage>,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletenessReport {
    pub mode: CoverageMode,
    pub dimensions: Vec<DimensionCoverage>,
    pub overall: f64,
    /// True when some of the seven dimensions were not assessed.
    pub partial: bool,
}

impl CompletenessReport {
    pub fn dimension(&self, dimension: Dimension) -> Option<&DimensionCoverage> {
        self.dimensions.iter().find(|d| d.dimension == dimension)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CompletenessError {
    #[error("no records to assess")]
    NoRecords,
    #[error("dimension {0} appears more than once")]
    DuplicateDimension(Dimension),
}

/// Found with a non-empty value.
pub fn sentinel_covered(field: &ExtractedField) -> bool {
    field.status == FieldStatus::Found && field.value_text().is_some_and(|v| !v.trim().is_empty())
}

fn entailed(
    dimension: Dimension,
    field: &ExtractedField,
    gateway: &Gateway,
    catalog: &PromptCatalog,
    hypotheses: &HypothesisSet,
) -> FieldCoverage {
    let fallback = |note: String| FieldCoverage { field: field.name.clone(), covered: sentinel_covered(field), note: Some(note) };
    // Nothing extracted: nothing can support the positive statement.
    let Some(answer) = field.value_text().filter(|_| field.status == FieldStatus::Found) else {
        return FieldCoverage { field: field.name.clone(), covered: false, note: None };
    };
    let h = hypotheses.get(dimension, &field.name);
    let tag = format!("{}#coverage", field.name);
    let prompt = match catalog.render_step(
        dimension.as_str(),
        &tag,
        "entailment",
        &PromptVars { answer: Some(&answer), positive: Some(&h.positive), negative: Some(&h.negative), ..Default::default() },
    ) {
        Ok(p) => p,
        Err(e) => return fallback(format!("prompt error: {e}")),
    };
    match gateway.complete(&CompletionRequest::new(prompt, format!("{}/{tag}", dimension.as_str()))) {
        Ok(reply) => match normalize_label(&reply.text).as_str() {
            "a" => FieldCoverage { field: field.name.clone(), covered: true, note: None },
            "b" => FieldCoverage { field: field.name.clone(), covered: false, note: None },
            other => fallback(format!("unrecognized entailment reply {other:?}")),
        },
        Err(e) => fallback(format!("backend failure: {e}")),
    }
}

fn ratio(covered: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        covered as f64 / total as f64
    }
}

pub fn assess(records: &[DimensionRecord], classifier: &CoverageClassifier<'_>) -> Result<CompletenessReport, CompletenessError> {
    if records.is_empty() {
        return Err(CompletenessError::NoRecords);
    }
    let mut seen = BTreeSet::new();
    let mut dimensions = Vec::with_capacity(records.len());
    let (mut covered_all, mut total_all) = (0, 0);
    for record in records {
        if !seen.insert(record.dimension) {
            return Err(CompletenessError::DuplicateDimension(record.dimension));
        }
        let fields: Vec<FieldCoverage> = record
            .fields
            .iter()
            .map(|f| match classifier {
                CoverageClassifier::Sentinel => {
                    FieldCoverage { field: f.name.clone(), covered: sentinel_covered(f), note: None }
                }
                CoverageClassifier::Entailment { gateway, catalog, hypotheses } => {
                    entailed(record.dimension, f, gateway, catalog, hypotheses)
                }
            })
            .collect();
        let covered = fields.iter().filter(|f| f.covered).count();
        covered_all += covered;
        total_all += fields.len();
        dimensions.push(DimensionCoverage { dimension: record.dimension, coverage: ratio(covered, fields.len()), fields });
    }
    Ok(CompletenessReport {
        mode: classifier.mode(),
        dimensions,
        overall: ratio(covered_all, total_all),
        partial: seen.len() < Dimension::ALL.len(),
    })
}
