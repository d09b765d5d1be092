//! Inter-annotator agreement per sub-dimension.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{subdimensions, EvalVerdict, Verdict, ADJUDICATOR};
use crate::dimensions::Dimension;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubdimensionAgreement {
    pub dimension: Dimension,
    pub subdimension: String,
    /// Mean over annotator pairs of the share of common items judged alike.
    pub agreement: f64,
    /// Annotator pairs with at least one common item.
    pub pairs: usize,
    /// Mean Cohen's kappa over the pairs where it is defined.
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub subdimensions: Vec<SubdimensionAgreement>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

type Judgements<'a> = BTreeMap<(&'a str, &'a str), Verdict>;

fn pair_scores(a: &Judgements<'_>, b: &Judgements<'_>) -> Option<(f64, Option<f64>)> {
    let common: Vec<(Verdict, Verdict)> = a.iter().filter_map(|(k, va)| b.get(k).map(|vb| (*va, *vb))).collect();
    if common.is_empty() {
        return None;
    }
    let n = common.len() as f64;
    let observed = common.iter().filter(|(x, y)| x == y).count() as f64 / n;
    let mut marginal_a: BTreeMap<Verdict, f64> = BTreeMap::new();
    let mut marginal_b: BTreeMap<Verdict, f64> = BTreeMap::new();
    for (x, y) in &common {
        *marginal_a.entry(*x).or_default() += 1.0 / n;
        *marginal_b.entry(*y).or_default() += 1.0 / n;
    }
    let expected: f64 = marginal_a.iter().map(|(v, p)| p * marginal_b.get(v).copied().unwrap_or(0.0)).sum();
    let kappa = (expected < 1.0 - 1e-12).then(|| (observed - expected) / (1.0 - expected));
    Some((observed, kappa))
}

/// Pairwise agreement between annotators, excluding adjudicated verdicts.
/// Items are `(model, doi)` pairs within a sub-dimension.
pub fn agreement(verdicts: &[EvalVerdict]) -> AgreementReport {
    let mut groups: BTreeMap<(Dimension, &str), BTreeMap<&str, Judgements<'_>>> = BTreeMap::new();
    let mut annotators = BTreeSet::new();
    for v in verdicts.iter().filter(|v| v.annotator != ADJUDICATOR) {
        annotators.insert(v.annotator.as_str());
        groups
            .entry((v.dimension, v.subdimension.as_str()))
            .or_default()
            .entry(&v.annotator)
            .or_default()
            .insert((&v.model, &v.doi), v.verdict);
    }
    if annotators.len() < 2 {
        return AgreementReport {
            subdimensions: Vec::new(),
            note: Some(format!("agreement needs at least two annotators, found {}", annotators.len())),
        };
    }

    let mut out = Vec::new();
    for ((dimension, sub), by_annotator) in groups {
        let judges: Vec<&Judgements<'_>> = by_annotator.values().collect();
        let mut scores = Vec::new();
        for i in 0..judges.len() {
            for j in i + 1..judges.len() {
                scores.extend(pair_scores(judges[i], judges[j]));
            }
        }
        if scores.is_empty() {
            continue;
        }
        let kappas: Vec<f64> = scores.iter().filter_map(|(_, k)| *k).collect();
        out.push(SubdimensionAgreement {
            dimension,
            subdimension: sub.to_string(),
            agreement: scores.iter().map(|(a, _)| a).sum::<f64>() / scores.len() as f64,
            pairs: scores.len(),
            kappa: (!kappas.is_empty()).then(|| kappas.iter().sum::<f64>() / kappas.len() as f64),
        });
    }
    out.sort_by_key(|s| {
        (s.dimension, subdimensions(s.dimension).iter().position(|(slug, _)| *slug == s.subdimension))
    });
    let note = out.is_empty().then(|| "no item was judged by more than one annotator".to_string());
    AgreementReport { subdimensions: out, note }
}
