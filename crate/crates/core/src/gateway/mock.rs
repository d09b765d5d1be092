//! Scripted completion backend for tests and offline runs.
//!
//! Rules are checked in order and the first match wins. A matcher is either
//! a case-insensitive substring or a regular expression. Rule files look like:
//!
//! ```json
//! {"rules": [
//!   {"contains": "classify the following", "respond": "internal"},
//!   {"pattern": "(?s)Question: Who funded.*", "respond_seq": ["a", "b"]},
//!   {"contains": "flaky", "fail": {"kind": "timeout", "times": 2}, "respond": "ok"}
//! ]}
//! ```

use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendFailure, BackendReply, CompletionBackend, CompletionRequest, ErrorKind};

#[derive(Debug, Clone)]
pub enum Matcher {
    Contains(String),
    Pattern(Regex),
}

impl Matcher {
    fn matches(&self, prompt: &str, prompt_lower: &str) -> bool {
        match self {
            Matcher::Contains(needle) => prompt_lower.contains(needle.as_str()),
            Matcher::Pattern(re) => re.is_match(prompt),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MockAction {
    Respond(String),
    /// Successive responses; the last one repeats once exhausted.
    Sequence(Vec<String>),
}

#[derive(Debug)]
pub struct MockRule {
    matcher: Matcher,
    action: MockAction,
    /// `Some((kind, None))` fails forever, `Some((kind, Some(n)))` fails the
    /// first `n` matching calls.
    failure: Option<(ErrorKind, Option<u32>)>,
    hits: AtomicU32,
}

impl MockRule {
    pub fn contains(needle: impl Into<String>, response: impl Into<String>) -> Self {
        Self::new(Matcher::Contains(needle.into().to_lowercase()), MockAction::Respond(response.into()))
    }

    pub fn pattern(pattern: &str, response: impl Into<String>) -> Result<Self, regex::Error> {
        Ok(Self::new(Matcher::Pattern(Regex::new(pattern)?), MockAction::Respond(response.into())))
    }

    pub fn sequence(needle: impl Into<String>, responses: Vec<String>) -> Self {
        Self::new(Matcher::Contains(needle.into().to_lowercase()), MockAction::Sequence(responses))
    }

    pub fn failing(mut self, kind: ErrorKind, times: Option<u32>) -> Self {
        self.failure = Some((kind, times));
        self
    }

    fn new(matcher: Matcher, action: MockAction) -> Self {
        Self { matcher, action, failure: None, hits: AtomicU32::new(0) }
    }

    fn fire(&self) -> Result<BackendReply, BackendFailure> {
        let hit = self.hits.fetch_add(1, Ordering::SeqCst);
        if let Some((kind, times)) = self.failure {
            if times.is_none_or(|n| hit < n) {
                return Err(BackendFailure::new(kind, format!("scripted {kind} (call {})", hit + 1)));
            }
        }
        let served = match self.failure {
            Some((_, Some(n))) => hit - n,
            _ => hit,
        };
        let text = match &self.action {
            MockAction::Respond(text) => text.clone(),
            MockAction::Sequence(items) => match items.get(served as usize).or(items.last()) {
                Some(text) => text.clone(),
                None => String::new(),
            },
        };
        Ok(BackendReply::text(text))
    }
}

/// Serialized form of a rule list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockRuleSet {
    pub rules: Vec<MockRuleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockRuleSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub respond: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub respond_seq: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fail: Option<FailSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailSpec {
    pub kind: ErrorKind,
    #[serde(default)]
    pub times: Option<u32>,
}

impl MockRuleSpec {
    pub fn contains(needle: &str, response: &str) -> Self {
        Self {
            contains: Some(needle.to_string()),
            pattern: None,
            respond: Some(response.to_string()),
            respond_seq: None,
            fail: None,
        }
    }

    pub fn compile(&self) -> Result<MockRule, String> {
        let matcher = match (&self.contains, &self.pattern) {
            (Some(needle), None) => Matcher::Contains(needle.to_lowercase()),
            (None, Some(pattern)) => {
                Matcher::Pattern(Regex::new(pattern).map_err(|e| format!("bad pattern {pattern:?}: {e}"))?)
            }
            _ => return Err("rule needs exactly one of `contains` or `pattern`".into()),
        };
        let action = match (&self.respond, &self.respond_seq) {
            (Some(text), None) => MockAction::Respond(text.clone()),
            (None, Some(seq)) if !seq.is_empty() => MockAction::Sequence(seq.clone()),
            (None, None) if self.fail.as_ref().is_some_and(|f| f.times.is_none()) => {
                MockAction::Respond(String::new())
            }
            _ => return Err("rule needs exactly one of `respond` or a non-empty `respond_seq`".into()),
        };
        let mut rule = MockRule::new(matcher, action);
        rule.failure = self.fail.as_ref().map(|f| (f.kind, f.times));
        Ok(rule)
    }
}

impl MockRuleSet {
    pub fn compile(&self) -> Result<Vec<MockRule>, String> {
        self.rules
            .iter()
            .enumerate()
            .map(|(i, r)| r.compile().map_err(|e| format!("mock rule {i}: {e}")))
            .collect()
    }
}

#[derive(Debug)]
pub struct MockBackend {
    model: String,
    rules: Vec<MockRule>,
    prompts: Mutex<Vec<String>>,
}

impl MockBackend {
    pub fn new(rules: Vec<MockRule>) -> Self {
        Self { model: "mock".into(), rules, prompts: Mutex::new(Vec::new()) }
    }

    pub fn from_rule_set(set: &MockRuleSet) -> Result<Self, String> {
        Ok(Self::new(set.compile()?))
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    /// Every prompt received so far, in arrival order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl CompletionBackend for MockBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &CompletionRequest) -> Result<BackendReply, BackendFailure> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        let lower = request.prompt.to_lowercase();
        match self.rules.iter().find(|r| r.matcher.matches(&request.prompt, &lower)) {
            Some(rule) => rule.fire(),
            None => {
                let head: String = request.prompt.chars().take(80).collect();
                Err(BackendFailure::new(
                    ErrorKind::MockUnmatched,
                    format!("no mock rule matches prompt for {}: {head:?}", request.tag),
                ))
            }
        }
    }
}
