//! Table-3-style aggregation.
//!
//! A sub-dimension's accuracy is the share of its items judged correct; a
//! dimension's overall is the unweighted mean of its sub-dimension
//! accuracies, and a model's overall the unweighted mean of its dimension
//! overalls.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{dimension_label, subdimensions, EvalError, EvalVerdict, ItemKey, Verdict, ADJUDICATOR};
use crate::dimensions::Dimension;

/// Scores of one `(model, dimension, sub-dimension)` cell, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub model: String,
    pub dimension: Dimension,
    pub subdimension: String,
    pub accuracy: f64,
    pub unfaith: f64,
    /// Number of judged items, when the cell came from verdicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdimensionScore {
    pub subdimension: String,
    pub accuracy: f64,
    pub unfaith: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSummary {
    pub dimension: Dimension,
    pub overall: f64,
    pub subdimensions: Vec<SubdimensionScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub overall: f64,
    pub dimensions: Vec<DimensionSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    /// Sorted by model id.
    pub models: Vec<ModelSummary>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

fn subdimension_rank(dimension: Dimension, slug: &str) -> usize {
    subdimensions(dimension).iter().position(|(s, _)| *s == slug).unwrap_or(usize::MAX)
}

/// Aggregates cell scores into dimension and model overalls.
pub fn aggregate(cells: &[CellScore]) -> Result<EvalSummary, EvalError> {
    if cells.is_empty() {
        return Err(EvalError::NoVerdicts);
    }
    let mut grouped: BTreeMap<&str, BTreeMap<Dimension, Vec<&CellScore>>> = BTreeMap::new();
    for cell in cells {
        super::parse_subdimension(cell.dimension, &cell.subdimension)?;
        let in_range = |v: f64| (0.0..=100.0).contains(&v);
        if !in_range(cell.accuracy) || !in_range(cell.unfaith) || cell.accuracy + cell.unfaith > 100.0 + 1e-9 {
            return Err(EvalError::InvalidScore(format!(
                "{} {}/{}: accuracy {} and unfaith {} must be percentages summing to at most 100",
                cell.model, cell.dimension, cell.subdimension, cell.accuracy, cell.unfaith
            )));
        }
        let list = grouped.entry(&cell.model).or_default().entry(cell.dimension).or_default();
        if list.iter().any(|c| c.subdimension == cell.subdimension) {
            return Err(EvalError::InvalidScore(format!(
                "duplicate cell {} {}/{}",
                cell.model, cell.dimension, cell.subdimension
            )));
        }
        list.push(cell);
    }
    let models = grouped
        .into_iter()
        .map(|(model, dims)| {
            let dimensions: Vec<DimensionSummary> = dims
                .into_iter()
                .map(|(dimension, mut list)| {
                    list.sort_by_key(|c| subdimension_rank(dimension, &c.subdimension));
                    DimensionSummary {
                        dimension,
                        overall: mean(list.iter().map(|c| c.accuracy)),
                        subdimensions: list
                            .iter()
                            .map(|c| SubdimensionScore {
                                subdimension: c.subdimension.clone(),
                                accuracy: c.accuracy,
                                unfaith: c.unfaith,
                                items: c.items,
                            })
                            .collect(),
                    }
                })
                .collect();
            ModelSummary { model: model.to_string(), overall: mean(dimensions.iter().map(|d| d.overall)), dimensions }
        })
        .collect();
    Ok(EvalSummary { models })
}

/// The agreed verdict of one item: the adjudicated verdict if present,
/// otherwise a strict majority of annotators.
fn consensus(verdicts: &[&EvalVerdict]) -> Option<Verdict> {
    if let Some(v) = verdicts.iter().find(|v| v.annotator == ADJUDICATOR) {
        return Some(v.verdict);
    }
    let mut counts: BTreeMap<Verdict, usize> = BTreeMap::new();
    for v in verdicts {
        *counts.entry(v.verdict).or_default() += 1;
    }
    counts.into_iter().find(|(_, n)| 2 * n > verdicts.len()).map(|(v, _)| v)
}

/// Resolves each item's verdict and aggregates. Unresolvable items are
/// reported together.
pub fn summarize(verdicts: &[EvalVerdict]) -> Result<EvalSummary, EvalError> {
    if verdicts.is_empty() {
        return Err(EvalError::NoVerdicts);
    }
    let mut items: BTreeMap<(&str, ItemKey), Vec<&EvalVerdict>> = BTreeMap::new();
    for v in verdicts {
        v.validate()?;
        items.entry((&v.model, v.item())).or_default().push(v);
    }
    let mut conflicts = Vec::new();
    let mut tallies: BTreeMap<(&str, Dimension, &str), (usize, usize, usize)> = BTreeMap::new();
    for ((model, key), list) in &items {
        let Some(verdict) = consensus(list) else {
            conflicts.push(format!("{model} {key}"));
            continue;
        };
        let tally = tallies.entry((model, key.dimension, list[0].subdimension.as_str())).or_default();
        tally.0 += 1;
        tally.1 += usize::from(verdict == Verdict::Correct);
        tally.2 += usize::from(verdict == Verdict::IncorrectUnfaithful);
    }
    if !conflicts.is_empty() {
        return Err(EvalError::Conflict(conflicts));
    }
    let cells: Vec<CellScore> = tallies
        .into_iter()
        .map(|((model, dimension, sub), (total, correct, unfaithful))| CellScore {
            model: model.to_string(),
            dimension,
            subdimension: sub.to_string(),
            accuracy: 100.0 * correct as f64 / total as f64,
            unfaith: 100.0 * unfaithful as f64 / total as f64,
            items: Some(total),
        })
        .collect();
    aggregate(&cells)
}

impl EvalSummary {
    pub fn model(&self, model: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == model)
    }

    /// Fixed-width text table with one block of columns per model.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(Dimension, String)> = Vec::new();
        for m in &self.models {
            for d in &m.dimensions {
                for s in &d.subdimensions {
                    if !rows.iter().any(|(dim, sub)| *dim == d.dimension && *sub == s.subdimension) {
                        rows.push((d.dimension, s.subdimension.clone()));
                    }
                }
            }
        }
        rows.sort_by_key(|(d, s)| (*d, subdimension_rank(*d, s)));

        let mut out = String::new();
        let _ = write!(out, "{:<16} {:<26}", "Dimension", "Subdimension");
        for m in &self.models {
            let _ = write!(out, " | {:^26}", m.model);
        }
        out.push('\n');
        let _ = write!(out, "{:<16} {:<26}", "", "");
        for _ in &self.models {
            let _ = write!(out, " | {:>8} {:>8} {:>8}", "Accuracy", "Unfaith", "Overall");
        }
        out.push('\n');
        let mut previous = None;
        for (dimension, sub) in &rows {
            let first = previous != Some(*dimension);
            previous = Some(*dimension);
            let label = subdimensions(*dimension).iter().find(|(s, _)| s == sub).map_or(sub.as_str(), |(_, l)| l);
            let _ = write!(out, "{:<16} {:<26}", if first { dimension_label(*dimension) } else { "" }, label);
            for m in &self.models {
                let dim = m.dimensions.iter().find(|d| d.dimension == *dimension);
                match dim.and_then(|d| d.subdimensions.iter().find(|s| s.subdimension == *sub)) {
                    Some(s) => {
                        let overall = if first { format!("{:.2}%", dim.unwrap().overall) } else { String::new() };
                        let _ = write!(
                            out,
                            " | {:>8} {:>8} {:>8}",
                            format!("{:.2}%", s.accuracy),
                            format!("{:.2}%", s.unfaith),
                            overall
                        );
                    }
                    None => {
                        let _ = write!(out, " | {:>8} {:>8} {:>8}", "-", "-", "");
                    }
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<16} {:<26}", "Overall", "");
        for m in &self.models {
            let _ = write!(out, " | {:>8} {:>8} {:>8}", "", "", format!("{:.2}%", m.overall));
        }
        out.push('\n');
        out
    }
}
