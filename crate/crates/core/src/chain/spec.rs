//! Declarative chain descriptions and their static validation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NOT_FOUND: &str = "NOT_FOUND";
pub const DEFAULT_K: usize = 4;
pub const DEFAULT_MAX_ROUNDS: u32 = 3;
pub const DEFAULT_SEPARATOR: &str = ";";
pub const DEFAULT_MAX_ITEMS: usize = 10;

fn default_k() -> usize {
    DEFAULT_K
}
fn default_sentinel() -> String {
    NOT_FOUND.to_string()
}
fn default_max_rounds() -> u32 {
    DEFAULT_MAX_ROUNDS
}
fn default_separator() -> String {
    DEFAULT_SEPARATOR.to_string()
}
fn default_max_sentences() -> usize {
    3
}
fn default_max_items() -> usize {
    DEFAULT_MAX_ITEMS
}

/// Retrieval-augmented question answered from document passages only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextStep {
    /// May contain `{concept}` placeholders (tuned per document) and, inside
    /// a `for_each`, `{item}`.
    pub query: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_sentinel")]
    pub sentinel: String,
    /// Earlier steps whose answers are added to the context.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context_from: Vec<String>,
}

/// Generate-then-read: retrieve with the previous answer, refine it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineStep {
    pub input: String,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifyStep {
    pub input: String,
    pub categories: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStep {
    pub input: String,
    pub entity: String,
    #[serde(default = "default_separator")]
    pub separator: String,
}

/// Context-free question answered from the model's own knowledge.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenDomainStep {
    pub query: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummarizeStep {
    pub input: String,
    #[serde(default = "default_max_sentences")]
    pub max_sentences: usize,
}

/// Runs `steps` only when the `input` classification equals `match_category`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchStep {
    pub input: String,
    pub match_category: String,
    pub steps: Vec<StepSpec>,
}

/// Runs `steps` once per entity parsed by the `input` step, with `{item}`
/// bound to the entity. `export` names the sub-steps reported as entity
/// details.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForEachStep {
    pub input: String,
    pub steps: Vec<StepSpec>,
    #[serde(default)]
    pub export: Vec<String>,
    #[serde(default = "default_max_items")]
    pub max_items: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StepKind {
    InContext(InContextStep),
    Refine(RefineStep),
    Classify(ClassifyStep),
    Parse(ParseStep),
    OpenDomain(OpenDomainStep),
    Summarize(SummarizeStep),
    Branch(BranchStep),
    ForEach(ForEachStep),
}

impl StepKind {
    pub fn type_name(&self) -> &'static str {
        match self {
            StepKind::InContext(_) => "in_context",
            StepKind::Refine(_) => "refine",
            StepKind::Classify(_) => "classify",
            StepKind::Parse(_) => "parse",
            StepKind::OpenDomain(_) => "open_domain",
            StepKind::Summarize(_) => "summarize",
            StepKind::Branch(_) => "branch",
            StepKind::ForEach(_) => "for_each",
        }
    }

    /// The step this one reads from, if any.
    pub fn input(&self) -> Option<&str> {
        match self {
            StepKind::InContext(_) | StepKind::OpenDomain(_) => None,
            StepKind::Refine(s) => Some(&s.input),
            StepKind::Classify(s) => Some(&s.input),
            StepKind::Parse(s) => Some(&s.input),
            StepKind::Summarize(s) => Some(&s.input),
            StepKind::Branch(s) => Some(&s.input),
            StepKind::ForEach(s) => Some(&s.input),
        }
    }

    pub fn substeps(&self) -> &[StepSpec] {
        match self {
            StepKind::Branch(b) => &b.steps,
            StepKind::ForEach(f) => &f.steps,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: StepKind,
}

impl StepSpec {
    pub fn new(id: impl Into<String>, kind: StepKind) -> Self {
        Self { id: id.into(), kind }
    }

    pub fn in_context(id: &str, query: &str) -> Self {
        Self::new(
            id,
            StepKind::InContext(InContextStep {
                query: query.into(),
                k: DEFAULT_K,
                sentinel: NOT_FOUND.into(),
                context_from: Vec::new(),
            }),
        )
    }

    pub fn refine(id: &str, input: &str) -> Self {
        Self::new(id, StepKind::Refine(RefineStep { input: input.into(), k: DEFAULT_K, max_rounds: DEFAULT_MAX_ROUNDS }))
    }

    pub fn classify(id: &str, input: &str, categories: &[String]) -> Self {
        Self::new(id, StepKind::Classify(ClassifyStep { input: input.into(), categories: categories.to_vec() }))
    }

    pub fn parse(id: &str, input: &str, entity: &str) -> Self {
        Self::new(
            id,
            StepKind::Parse(ParseStep { input: input.into(), entity: entity.into(), separator: DEFAULT_SEPARATOR.into() }),
        )
    }

    pub fn open_domain(id: &str, query: &str) -> Self {
        Self::new(id, StepKind::OpenDomain(OpenDomainStep { query: query.into() }))
    }

    pub fn summarize(id: &str, input: &str, max_sentences: usize) -> Self {
        Self::new(id, StepKind::Summarize(SummarizeStep { input: input.into(), max_sentences }))
    }

    pub fn branch(id: &str, input: &str, match_category: &str, steps: Vec<StepSpec>) -> Self {
        Self::new(
            id,
            StepKind::Branch(BranchStep { input: input.into(), match_category: match_category.into(), steps }),
        )
    }

    pub fn for_each(id: &str, input: &str, steps: Vec<StepSpec>, export: &[&str]) -> Self {
        Self::new(
            id,
            StepKind::ForEach(ForEachStep {
                input: input.into(),
                steps,
                export: export.iter().map(|s| s.to_string()).collect(),
                max_items: DEFAULT_MAX_ITEMS,
            }),
        )
    }

    pub fn with_context_from(mut self, ids: &[&str]) -> Self {
        if let StepKind::InContext(s) = &mut self.kind {
            s.context_from = ids.iter().map(|s| s.to_string()).collect();
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldBinding {
    pub field: String,
    pub step: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub dimension: String,
    pub steps: Vec<StepSpec>,
    /// Record field → step id, in record order.
    pub output_map: Vec<FieldBinding>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainSpecError {
    #[error("duplicate step id {0:?}")]
    DuplicateStep(String),
    #[error("step {step:?} reads {input:?}, which is not an earlier step in scope")]
    DanglingInput { step: String, input: String },
    #[error("step {step:?}: {reason}")]
    Invalid { step: String, reason: String },
    #[error("output field {field:?} maps to unknown step {step:?}")]
    UnknownOutput { field: String, step: String },
    #[error("duplicate output field {0:?}")]
    DuplicateField(String),
}

impl ChainSpec {
    pub fn validate(&self) -> Result<(), ChainSpecError> {
        let mut all = BTreeMap::new();
        collect_ids(&self.steps, &mut all)?;
        let mut scope = BTreeMap::new();
        validate_steps(&self.steps, &mut scope)?;
        let mut fields = BTreeSet::new();
        for binding in &self.output_map {
            if !fields.insert(binding.field.as_str()) {
                return Err(ChainSpecError::DuplicateField(binding.field.clone()));
            }
            if !all.contains_key(binding.step.as_str()) {
                return Err(ChainSpecError::UnknownOutput { field: binding.field.clone(), step: binding.step.clone() });
            }
        }
        Ok(())
    }

    /// Finds a step by id anywhere in the chain.
    pub fn find(&self, id: &str) -> Option<&StepSpec> {
        fn walk<'a>(steps: &'a [StepSpec], id: &str) -> Option<&'a StepSpec> {
            steps.iter().find_map(|s| if s.id == id { Some(s) } else { walk(s.kind.substeps(), id) })
        }
        walk(&self.steps, id)
    }

    /// Every step in execution order, sub-steps after their parent.
    pub fn flatten(&self) -> Vec<&StepSpec> {
        fn walk<'a>(steps: &'a [StepSpec], out: &mut Vec<&'a StepSpec>) {
            for s in steps {
                out.push(s);
                walk(s.kind.substeps(), out);
            }
        }
        let mut out = Vec::new();
        walk(&self.steps, &mut out);
        out
    }

    /// The `for_each` steps that iterate over the entities of `parse_step`.
    pub fn for_each_over(&self, parse_step: &str) -> Vec<&ForEachStep> {
        self.flatten()
            .into_iter()
            .filter_map(|s| match &s.kind {
                StepKind::ForEach(f) if f.input == parse_step => Some(f),
                _ => None,
            })
            .collect()
    }
}

fn collect_ids<'a>(steps: &'a [StepSpec], ids: &mut BTreeMap<&'a str, &'a StepKind>) -> Result<(), ChainSpecError> {
    for step in steps {
        if step.id.is_empty() || ids.insert(&step.id, &step.kind).is_some() {
            return Err(ChainSpecError::DuplicateStep(step.id.clone()));
        }
        collect_ids(step.kind.substeps(), ids)?;
    }
    Ok(())
}

fn invalid(step: &StepSpec, reason: impl Into<String>) -> ChainSpecError {
    ChainSpecError::Invalid { step: step.id.clone(), reason: reason.into() }
}

/// `scope` holds the steps visible to later siblings. Steps inside a branch
/// stay visible after it (they may simply not have run); `for_each` bodies
/// are private to the iteration.
fn validate_steps<'a>(
    steps: &'a [StepSpec],
    scope: &mut BTreeMap<&'a str, &'a StepKind>,
) -> Result<(), ChainSpecError> {
    for step in steps {
        let input_kind = match step.kind.input() {
            Some(input) => Some(*scope.get(input).ok_or_else(|| ChainSpecError::DanglingInput {
                step: step.id.clone(),
                input: input.to_string(),
            })?),
            None => None,
        };
        match &step.kind {
            StepKind::InContext(s) => {
                if s.query.trim().is_empty() {
                    return Err(invalid(step, "empty query"));
                }
                if s.k == 0 {
                    return Err(invalid(step, "k must be at least 1"));
                }
                if s.sentinel.trim().is_empty() {
                    return Err(invalid(step, "empty sentinel"));
                }
                for id in &s.context_from {
                    if !scope.contains_key(id.as_str()) {
                        return Err(ChainSpecError::DanglingInput { step: step.id.clone(), input: id.clone() });
                    }
                }
            }
            StepKind::Refine(s) => {
                if !matches!(input_kind, Some(StepKind::InContext(_))) {
                    return Err(invalid(step, "refine must follow an in_context step"));
                }
                if s.k == 0 || s.max_rounds == 0 {
                    return Err(invalid(step, "k and max_rounds must be at least 1"));
                }
            }
            StepKind::Classify(s) => {
                if s.categories.is_empty() {
                    return Err(invalid(step, "no categories"));
                }
            }
            StepKind::Parse(s) => {
                if s.separator.is_empty() || s.entity.trim().is_empty() {
                    return Err(invalid(step, "entity and separator must be non-empty"));
                }
            }
            StepKind::OpenDomain(s) => {
                if s.query.trim().is_empty() {
                    return Err(invalid(step, "empty query"));
                }
            }
            StepKind::Summarize(s) => {
                if s.max_sentences == 0 {
                    return Err(invalid(step, "max_sentences must be at least 1"));
                }
            }
            StepKind::Branch(b) => {
                let Some(StepKind::Classify(c)) = input_kind else {
                    return Err(invalid(step, "branch input must be a classify step"));
                };
                if !c.categories.contains(&b.match_category) {
                    return Err(invalid(step, format!("{:?} is not a category of {:?}", b.match_category, b.input)));
                }
                validate_steps(&b.steps, scope)?;
            }
            StepKind::ForEach(f) => {
                if !matches!(input_kind, Some(StepKind::Parse(_))) {
                    return Err(invalid(step, "for_each input must be a parse step"));
                }
                if f.max_items == 0 {
                    return Err(invalid(step, "max_items must be at least 1"));
                }
                let mut inner = scope.clone();
                validate_steps(&f.steps, &mut inner)?;
                for id in &f.export {
                    if !f.steps.iter().any(|s| &s.id == id) {
                        return Err(invalid(step, format!("exported {id:?} is not a direct sub-step")));
                    }
                }
            }
        }
        scope.insert(&step.id, &step.kind);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    fn chain(steps: Vec<StepSpec>, outputs: &[(&str, &str)]) -> ChainSpec {
        ChainSpec {
            dimension: "test".into(),
            steps,
            output_map: outputs.iter().map(|(f, s)| FieldBinding { field: f.to_string(), step: s.to_string() }).collect(),
        }
    }

    #[test]
    fn valid_chain_passes() {
        let c = chain(
            vec![
                StepSpec::in_context("q", "Who?"),
                StepSpec::refine("r", "q"),
                StepSpec::classify("t", "r", &cats(&["internal", "crowd-workers"])),
                StepSpec::branch("b", "t", "crowd-workers", vec![StepSpec::in_context("labor", "Pay?")]),
                StepSpec::in_context("after", "More?").with_context_from(&["labor"]),
            ],
            &[("team", "r"), ("labor", "labor")],
        );
        c.validate().unwrap();
        assert_eq!(c.flatten().len(), 6);
        assert!(c.find("labor").is_some());
    }

    #[test]
    fn forward_reference_is_dangling() {
        let c = chain(vec![StepSpec::classify("t", "q", &cats(&["a"])), StepSpec::in_context("q", "?")], &[]);
        assert_eq!(
            c.validate(),
            Err(ChainSpecError::DanglingInput { step: "t".into(), input: "q".into() })
        );
    }

    #[test]
    fn structural_rules() {
        let dup = chain(vec![StepSpec::in_context("q", "?"), StepSpec::in_context("q", "?")], &[]);
        assert_eq!(dup.validate(), Err(ChainSpecError::DuplicateStep("q".into())));

        let empty_cats = chain(vec![StepSpec::in_context("q", "?"), StepSpec::classify("t", "q", &[])], &[]);
        assert!(matches!(empty_cats.validate(), Err(ChainSpecError::Invalid { .. })));

        let refine_after_parse = chain(
            vec![StepSpec::in_context("q", "?"), StepSpec::parse("p", "q", "x"), StepSpec::refine("r", "p")],
            &[],
        );
        assert!(matches!(refine_after_parse.validate(), Err(ChainSpecError::Invalid { .. })));

        let mut zero_rounds = StepSpec::refine("r", "q");
        if let StepKind::Refine(r) = &mut zero_rounds.kind {
            r.max_rounds = 0;
        }
        assert!(chain(vec![StepSpec::in_context("q", "?"), zero_rounds], &[]).validate().is_err());

        let bad_output = chain(vec![StepSpec::in_context("q", "?")], &[("f", "nope")]);
        assert!(matches!(bad_output.validate(), Err(ChainSpecError::UnknownOutput { .. })));

        let bad_branch = chain(
            vec![
                StepSpec::in_context("q", "?"),
                StepSpec::classify("t", "q", &cats(&["a"])),
                StepSpec::branch("b", "t", "zzz", vec![]),
            ],
            &[],
        );
        assert!(matches!(bad_branch.validate(), Err(ChainSpecError::Invalid { .. })));
    }

    #[test]
    fn for_each_bodies_are_private() {
        let c = chain(
            vec![
                StepSpec::in_context("q", "?"),
                StepSpec::parse("p", "q", "funder"),
                StepSpec::for_each("each", "p", vec![StepSpec::open_domain("kind", "Is '{item}' public?")], &["kind"]),
                StepSpec::summarize("s", "kind", 1),
            ],
            &[],
        );
        assert!(matches!(c.validate(), Err(ChainSpecError::DanglingInput { .. })));
    }

    #[test]
    fn serde_shape_is_tagged() {
        let step = StepSpec::classify("t", "q", &cats(&["a", "b"]));
        let json = serde_json::to_value(&step).unwrap();
        assert_eq!(json, serde_json::json!({"id": "t", "type": "classify", "input": "q", "categories": ["a", "b"]}));
        let parsed: StepSpec =
            serde_json::from_str(r#"{"id": "q", "type": "in_context", "query": "Who?"}"#).unwrap();
        assert_eq!(parsed, StepSpec::in_context("q", "Who?"));
    }
}
