//! Editable prompt templates.
//!
//! A catalog maps each step type to a default template and may override the
//! template of a single `(dimension, step id)`. Templates use `{name}`
//! placeholders drawn from a fixed vocabulary.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::json_digest;

const DEFAULT_CATALOG: &str = include_str!("../../assets/prompts.json");

pub const STEP_TYPES: [&str; 9] = [
    "classify",
    "classify_strict",
    "entailment",
    "in_context",
    "open_domain",
    "parse",
    "refine",
    "summarize",
    "table",
];

const PLACEHOLDERS: [&str; 12] = [
    "answer",
    "caption",
    "categories",
    "context",
    "entity",
    "max_sentences",
    "negative",
    "positive",
    "query",
    "sentinel",
    "separator",
    "table",
];

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("catalog has no template for step type {0:?}")]
    MissingStepType(String),
    #[error("template {template:?} uses unknown placeholder {{{name}}}")]
    UnknownPlaceholder { template: String, name: String },
    #[error("no value for placeholder {{{0}}}")]
    MissingValue(String),
    #[error("invalid prompt catalog: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PromptVars<'a> {
    pub answer: Option<&'a str>,
    pub caption: Option<&'a str>,
    pub categories: Option<&'a str>,
    pub context: Option<&'a str>,
    pub entity: Option<&'a str>,
    pub max_sentences: Option<&'a str>,
    pub negative: Option<&'a str>,
    pub positive: Option<&'a str>,
    pub query: Option<&'a str>,
    pub sentinel: Option<&'a str>,
    pub separator: Option<&'a str>,
    pub table: Option<&'a str>,
}

impl<'a> PromptVars<'a> {
    fn get(&self, name: &str) -> Option<&'a str> {
        match name {
            "answer" => self.answer,
            "caption" => self.caption,
            "categories" => self.categories,
            "context" => self.context,
            "entity" => self.entity,
            "max_sentences" => self.max_sentences,
            "negative" => self.negative,
            "positive" => self.positive,
            "query" => self.query,
            "sentinel" => self.sentinel,
            "separator" => self.separator,
            "table" => self.table,
            _ => None,
        }
    }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptCatalog {
    pub version: String,
    pub step_types: BTreeMap<String, String>,
    /// dimension → step id → template
    #[serde(default)]
    pub steps: BTreeMap<String, BTreeMap<String, String>>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::from_json(DEFAULT_CATALOG).expect("bundled prompt catalog is valid")
    }
}

impl PromptCatalog {
    pub fn from_json(json: &str) -> Result<Self, PromptError> {
        let catalog: Self = serde_json::from_str(json).map_err(|e| PromptError::Parse(e.to_string()))?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        for kind in STEP_TYPES {
            if !self.step_types.contains_key(kind) {
                return Err(PromptError::MissingStepType(kind.into()));
            }
        }
        let overrides = self.steps.iter().flat_map(|(dim, steps)| {
            steps.iter().map(move |(id, t)| (format!("{dim}/{id}"), t))
        });
        let defaults = self.step_types.iter().map(|(k, t)| (k.clone(), t));
        for (name, template) in defaults.chain(overrides) {
            for cap in placeholder_re().captures_iter(template) {
                if !PLACEHOLDERS.contains(&&cap[1]) {
                    return Err(PromptError::UnknownPlaceholder { template: name, name: cap[1].to_string() });
                }
            }
        }
        Ok(())
    }

    /// Changes whenever any template or the version changes.
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn template(&self, dimension: &str, step_id: &str, step_type: &str) -> Result<&str, PromptError> {
        if let Some(t) = self.steps.get(dimension).and_then(|s| s.get(step_id)) {
            return Ok(t);
        }
        self.step_types
            .get(step_type)
            .map(String::as_str)
            .ok_or_else(|| PromptError::MissingStepType(step_type.into()))
    }

    pub fn render_step(
        &self,
        dimension: &str,
        step_id: &str,
        step_type: &str,
        vars: &PromptVars<'_>,
    ) -> Result<String, PromptError> {
        render(self.template(dimension, step_id, step_type)?, vars)
    }

    pub fn render_table(&self, vars: &PromptVars<'_>) -> Result<String, PromptError> {
        render(self.template("", "", "table")?, vars)
    }
}

/// Substitutes placeholders in one pass; substituted text is not rescanned.
pub fn render(template: &str, vars: &PromptVars<'_>) -> Result<String, PromptError> {
    let re = placeholder_re();
    for cap in re.captures_iter(template) {
        if vars.get(&cap[1]).is_none() {
            return Err(PromptError::MissingValue(cap[1].to_string()));
        }
    }
    Ok(re
        .replace_all(template, |c: &regex::Captures<'_>| vars.get(&c[1]).unwrap_or_default().to_string())
        .into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_catalog_is_complete() {
        let catalog = PromptCatalog::default();
        for kind in STEP_TYPES {
            assert!(catalog.step_types.contains_key(kind));
        }
        assert_eq!(catalog.digest().len(), 64);
    }

    #[test]
    fn in_context_template_carries_the_instruction() {
        let catalog = PromptCatalog::default();
        let prompt = catalog
            .render_step(
                "uses",
                "tasks",
                "in_context",
                &PromptVars {
                    query: Some("What tasks?"),
                    context: Some("[0] ctx"),
                    sentinel: Some("NOT_FOUND"),
                    ..Default::default()
                },
            )
            .unwrap();
        assert!(prompt.starts_with(
            "Answer using only the context below; if the context does not contain the answer, reply exactly NOT_FOUND."
        ));
        assert!(prompt.contains("Question: What tasks?"));
    }

    #[test]
    fn overrides_win_and_change_the_digest() {
        let mut catalog = PromptCatalog::default();
        let before = catalog.digest();
        catalog
            .steps
            .entry("gathering".into())
            .or_default()
            .insert("sources".into(), "Q: {query}\n{context}".into());
        assert_ne!(catalog.digest(), before);
        assert_eq!(catalog.template("gathering", "sources", "in_context").unwrap(), "Q: {query}\n{context}");
        assert_eq!(
            catalog.template("gathering", "other", "in_context").unwrap(),
            catalog.step_types["in_context"]
        );
    }

    #[test]
    fn substituted_values_are_not_rescanned() {
        let out = render("{answer}!", &PromptVars { answer: Some("{query}"), ..Default::default() }).unwrap();
        assert_eq!(out, "{query}!");
    }

    #[test]
    fn missing_values_and_unknown_placeholders_fail() {
        assert_eq!(render("{query}", &PromptVars::default()), Err(PromptError::MissingValue("query".into())));
        let mut catalog = PromptCatalog::default();
        catalog.step_types.insert("parse".into(), "{bogus}".into());
        assert!(matches!(catalog.validate(), Err(PromptError::UnknownPlaceholder { .. })));
        catalog.step_types.remove("parse");
        assert_eq!(catalog.validate(), Err(PromptError::MissingStepType("parse".into())));
    }
}
