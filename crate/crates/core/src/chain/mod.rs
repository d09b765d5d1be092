//! Prompt-chain execution.
//!
//! A chain is a list of [`StepSpec`]s run strictly in order. Each step sees
//! the outputs of the steps before it; answers flow forward as `input`
//! references and retrieved passages are recorded as evidence.

pub mod prompts;
mod spec;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use self::prompts::{PromptCatalog, PromptError, PromptVars};
pub use self::spec::*;
use crate::gateway::{BackendError, CompletionRequest, ErrorKind, Gateway};
use crate::ingest::{tune_query, Document, IngestError, Passage};
use crate::retrieval::{embed, top_k, RetrievalError, VectorIndex};

pub const UNKNOWN_CATEGORY: &str = "unknown";

/// Joins passages as `[i] text` blocks separated by blank lines.
pub fn format_context(passages: &[Passage], ids: impl IntoIterator<Item = usize>) -> String {
    ids.into_iter()
        .filter_map(|i| passages.get(i))
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join("\n\n")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum StepStatus {
    Found,
    NotFound,
    Category(String),
    Entities(Vec<String>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Document,
    OpenDomain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub step: String,
    /// The entity a `for_each` iteration was bound to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<String>,
    pub text: String,
    pub status: StepStatus,
    /// Passage indices that were in the prompt context.
    pub evidence: Vec<usize>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<u32>,
    /// The tuned query, for steps that ask one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
}

impl StepOutput {
    fn new(step: &str, item: Option<&str>, text: String, status: StepStatus) -> Self {
        Self {
            step: step.to_string(),
            item: item.map(str::to_string),
            text,
            status,
            evidence: Vec::new(),
            provenance: Provenance::Document,
            rounds: None,
            query: None,
        }
    }

    pub fn is_found(&self) -> bool {
        match &self.status {
            StepStatus::Found => true,
            StepStatus::NotFound => false,
            StepStatus::Category(c) => c != UNKNOWN_CATEGORY,
            StepStatus::Entities(e) => !e.is_empty(),
        }
    }

    pub fn category(&self) -> Option<&str> {
        match &self.status {
            StepStatus::Category(c) => Some(c),
            _ => None,
        }
    }

    pub fn entities(&self) -> &[String] {
        match &self.status {
            StepStatus::Entities(e) => e,
            _ => &[],
        }
    }

    /// Stand-in for an input that never ran (e.g. inside an untaken branch).
    fn missing(step: &str) -> Self {
        Self::new(step, None, NOT_FOUND.to_string(), StepStatus::NotFound)
    }
}

#[derive(Debug, Error)]
pub enum StepError {
    #[error("step {step}: {source}")]
    Backend { step: String, source: BackendError },
    #[error("step {step}: {source}")]
    Retrieval { step: String, source: RetrievalError },
    #[error("step {step}: {source}")]
    Prompt { step: String, source: PromptError },
    #[error("step {step}: {source}")]
    Query { step: String, source: IngestError },
}

impl StepError {
    pub fn step(&self) -> &str {
        match self {
            StepError::Backend { step, .. }
            | StepError::Retrieval { step, .. }
            | StepError::Prompt { step, .. }
            | StepError::Query { step, .. } => step,
        }
    }

    pub fn backend_kind(&self) -> Option<ErrorKind> {
        match self {
            StepError::Backend { source, .. } => Some(source.kind),
            StepError::Retrieval { source: RetrievalError::Backend(e), .. } => Some(e.kind),
            StepError::Retrieval { source: RetrievalError::Passage { source, .. }, .. } => Some(source.kind),
            _ => None,
        }
    }
}

/// Serializable summary of the error that aborted a chain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepFailure {
    pub step: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<ErrorKind>,
    pub message: String,
}

impl From<&StepError> for StepFailure {
    fn from(e: &StepError) -> Self {
        Self { step: e.step().to_string(), backend: e.backend_kind(), message: e.to_string() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub dimension: String,
    /// One entry per executed step, in execution order.
    pub outputs: Vec<StepOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<StepFailure>,
    pub completion_calls: usize,
    pub embedding_calls: usize,
    pub latency_ms: u64,
}

impl ChainResult {
    /// Output of a top-level (non-iterated) step.
    pub fn output(&self, step: &str) -> Option<&StepOutput> {
        self.outputs.iter().find(|o| o.step == step && o.item.is_none())
    }

    /// Output of `step` in the iteration bound to `item`.
    pub fn item_output(&self, step: &str, item: &str) -> Option<&StepOutput> {
        self.outputs.iter().find(|o| o.step == step && o.item.as_deref() == Some(item))
    }

    pub fn executed(&self, step: &str) -> bool {
        self.outputs.iter().any(|o| o.step == step)
    }
}

/// Everything a step needs besides its own spec.
pub struct ChainEnv<'a> {
    pub dimension: &'a str,
    pub document: &'a Document,
    pub index: &'a VectorIndex,
    pub gateway: &'a Gateway,
    pub catalog: &'a PromptCatalog,
    completions: AtomicUsize,
    embeddings: AtomicUsize,
}

impl<'a> ChainEnv<'a> {
    pub fn new(
        dimension: &'a str,
        document: &'a Document,
        index: &'a VectorIndex,
        gateway: &'a Gateway,
        catalog: &'a PromptCatalog,
    ) -> Self {
        Self {
            dimension,
            document,
            index,
            gateway,
            catalog,
            completions: AtomicUsize::new(0),
            embeddings: AtomicUsize::new(0),
        }
    }

    fn tag(&self, step: &str, item: Option<&str>) -> String {
        match item {
            Some(item) => format!("{}/{step}[{item}]", self.dimension),
            None => format!("{}/{step}", self.dimension),
        }
    }

    fn prompt(&self, step: &str, step_type: &str, vars: &PromptVars<'_>) -> Result<String, StepError> {
        self.catalog
            .render_step(self.dimension, step, step_type, vars)
            .map_err(|source| StepError::Prompt { step: step.to_string(), source })
    }

    fn complete(&self, step: &str, item: Option<&str>, prompt: String) -> Result<String, StepError> {
        self.completions.fetch_add(1, Ordering::Relaxed);
        self.gateway
            .complete(&CompletionRequest::new(prompt, self.tag(step, item)))
            .map(|r| r.text)
            .map_err(|source| StepError::Backend { step: step.to_string(), source })
    }

    fn retrieve(&self, step: &str, item: Option<&str>, text: &str, k: usize) -> Result<Vec<usize>, StepError> {
        let wrap = |source| StepError::Retrieval { step: step.to_string(), source };
        self.embeddings.fetch_add(1, Ordering::Relaxed);
        let query = embed(self.gateway, text, &self.tag(step, item)).map_err(wrap)?;
        Ok(top_k(self.index, &query, k).map_err(wrap)?.into_iter().map(|h| h.passage).collect())
    }

    fn tune(&self, step: &str, template: &str, item: Option<&str>) -> Result<String, StepError> {
        let bound = match item {
            // Braces in an entity name must not look like placeholders.
            Some(item) => template.replace("{item}", &item.replace(['{', '}'], "")),
            None => template.to_string(),
        };
        tune_query(&bound, &self.document.term_profile)
            .map_err(|source| StepError::Query { step: step.to_string(), source })
    }
}

/// Retrieval-augmented question. `extra` answers are appended to the
/// retrieved context.
pub fn run_in_context(
    env: &ChainEnv<'_>,
    id: &str,
    step: &InContextStep,
    item: Option<&str>,
    extra: &[&StepOutput],
) -> Result<StepOutput, StepError> {
    let query = env.tune(id, &step.query, item)?;
    let evidence = env.retrieve(id, item, &query, step.k)?;
    let mut context = format_context(&env.document.passages, evidence.iter().copied());
    for prior in extra.iter().filter(|o| o.is_found()) {
        context.push_str(&format!("\n\n[{}] {}", prior.step, prior.text));
    }
    let prompt = env.prompt(
        id,
        "in_context",
        &PromptVars {
            query: Some(&query),
            context: Some(&context),
            sentinel: Some(&step.sentinel),
            ..Default::default()
        },
    )?;
    let answer = env.complete(id, item, prompt)?;
    let mut out = if answer.trim() == step.sentinel {
        StepOutput::new(id, item, step.sentinel.clone(), StepStatus::NotFound)
    } else {
        StepOutput::new(id, item, answer, StepStatus::Found)
    };
    out.evidence = evidence;
    out.query = Some(query);
    Ok(out)
}

/// Generate-then-read: the current answer becomes the retrieval query. Stops
/// as soon as a round retrieves nothing outside `seen`, after `max_rounds`
/// refinements, or if the backend answers with the sentinel (the previous
/// answer is kept).
pub fn run_refine(
    env: &ChainEnv<'_>,
    id: &str,
    step: &RefineStep,
    prev: &StepOutput,
    sentinel: &str,
    seen: &mut BTreeSet<usize>,
) -> Result<StepOutput, StepError> {
    let item = prev.item.as_deref();
    let mut out = StepOutput { step: id.to_string(), rounds: Some(0), ..prev.clone() };
    if prev.status != StepStatus::Found {
        return Ok(out);
    }
    let query = prev.query.clone().unwrap_or_default();
    seen.extend(prev.evidence.iter().copied());
    for _ in 0..step.max_rounds {
        let hits = env.retrieve(id, item, &out.text, step.k)?;
        if hits.iter().all(|p| seen.contains(p)) {
            break;
        }
        let context = format_context(&env.document.passages, hits.iter().copied());
        let prompt = env.prompt(
            id,
            "refine",
            &PromptVars { query: Some(&query), answer: Some(&out.text), context: Some(&context), ..Default::default() },
        )?;
        let refined = env.complete(id, item, prompt)?;
        seen.extend(hits.iter().copied());
        for p in hits {
            if !out.evidence.contains(&p) {
                out.evidence.push(p);
            }
        }
        if refined.trim() == sentinel || refined.trim().is_empty() {
            break;
        }
        out.text = refined;
        out.rounds = out.rounds.map(|r| r + 1);
    }
    Ok(out)
}

/// Lowercase, drop punctuation except hyphens, collapse whitespace.
pub fn normalize_label(text: &str) -> String {
    let kept: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace() || *c == '-')
        .collect();
    kept.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn match_category<'c>(reply: &str, categories: &'c [String]) -> Option<&'c String> {
    let reply = normalize_label(reply);
    categories.iter().find(|c| normalize_label(c) == reply)
}

pub fn run_classify(
    env: &ChainEnv<'_>,
    id: &str,
    step: &ClassifyStep,
    input: &StepOutput,
) -> Result<StepOutput, StepError> {
    let item = input.item.as_deref();
    let inherit = |category: &str| StepOutput {
        step: id.to_string(),
        text: category.to_string(),
        status: StepStatus::Category(category.to_string()),
        rounds: None,
        query: None,
        ..input.clone()
    };
    if !input.is_found() {
        return Ok(inherit(UNKNOWN_CATEGORY));
    }
    let categories = step.categories.join(", ");
    for template in ["classify", "classify_strict"] {
        let prompt = env.prompt(
            id,
            template,
            &PromptVars { categories: Some(&categories), answer: Some(&input.text), ..Default::default() },
        )?;
        let reply = env.complete(id, item, prompt)?;
        if let Some(category) = match_category(&reply, &step.categories) {
            return Ok(inherit(category));
        }
    }
    Ok(inherit(UNKNOWN_CATEGORY))
}

pub fn split_entities(reply: &str, separator: &str) -> Vec<String> {
    reply.split(separator).map(str::trim).filter(|s| !s.is_empty()).map(str::to_string).collect()
}

pub fn run_parse(env: &ChainEnv<'_>, id: &str, step: &ParseStep, input: &StepOutput) -> Result<StepOutput, StepError> {
    let item = input.item.as_deref();
    let mut out = StepOutput {
        step: id.to_string(),
        text: String::new(),
        status: StepStatus::Entities(Vec::new()),
        rounds: None,
        query: None,
        ..input.clone()
    };
    if !input.is_found() {
        return Ok(out);
    }
    let prompt = env.prompt(
        id,
        "parse",
        &PromptVars {
            entity: Some(&step.entity),
            separator: Some(&step.separator),
            answer: Some(&input.text),
            ..Default::default()
        },
    )?;
    let reply = env.complete(id, item, prompt)?;
    out.status = StepStatus::Entities(split_entities(&reply, &step.separator));
    out.text = reply;
    Ok(out)
}

/// Context-free question; the output carries no evidence.
pub fn run_open_domain(
    env: &ChainEnv<'_>,
    id: &str,
    step: &OpenDomainStep,
    item: Option<&str>,
) -> Result<StepOutput, StepError> {
    let query = env.tune(id, &step.query, item)?;
    let prompt = env.prompt(id, "open_domain", &PromptVars { query: Some(&query), ..Default::default() })?;
    let answer = env.complete(id, item, prompt)?;
    let mut out = if answer.trim() == NOT_FOUND {
        StepOutput::new(id, item, NOT_FOUND.to_string(), StepStatus::NotFound)
    } else {
        StepOutput::new(id, item, answer, StepStatus::Found)
    };
    out.provenance = Provenance::OpenDomain;
    out.query = Some(query);
    Ok(out)
}

/// First `n` sentences of `text`.
pub fn first_sentences(text: &str, n: usize) -> String {
    let mut count = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|(_, next)| next.is_whitespace()) {
            count += 1;
            if count == n {
                return text[..i + c.len_utf8()].trim().to_string();
            }
        }
    }
    text.trim().to_string()
}

pub fn run_summarize(
    env: &ChainEnv<'_>,
    id: &str,
    step: &SummarizeStep,
    input: &StepOutput,
) -> Result<StepOutput, StepError> {
    let item = input.item.as_deref();
    let mut out = StepOutput { step: id.to_string(), rounds: None, query: None, ..input.clone() };
    if input.status != StepStatus::Found {
        out.text = NOT_FOUND.to_string();
        out.status = StepStatus::NotFound;
        return Ok(out);
    }
    let max = step.max_sentences.to_string();
    let prompt = env.prompt(
        id,
        "summarize",
        &PromptVars { answer: Some(&input.text), max_sentences: Some(&max), ..Default::default() },
    )?;
    let reply = env.complete(id, item, prompt)?;
    if reply.trim() == NOT_FOUND || reply.trim().is_empty() {
        out.text = NOT_FOUND.to_string();
        out.status = StepStatus::NotFound;
    } else {
        out.text = first_sentences(&reply, step.max_sentences);
    }
    Ok(out)
}

struct Runner<'e, 'a> {
    env: &'e ChainEnv<'a>,
    chain: &'e ChainSpec,
    outputs: Vec<StepOutput>,
    /// Passages already shown to the backend anywhere in this chain.
    seen: BTreeSet<usize>,
}

impl Runner<'_, '_> {
    fn run(&mut self, steps: &[StepSpec], scope: &mut HashMap<String, usize>, item: Option<&str>) -> Result<(), StepError> {
        for spec in steps {
            let input = spec.kind.input().map(|id| match scope.get(id) {
                Some(&i) => self.outputs[i].clone(),
                None => StepOutput::missing(id),
            });
            let id = spec.id.as_str();
            let output = match &spec.kind {
                StepKind::InContext(s) => {
                    let extra: Vec<&StepOutput> =
                        s.context_from.iter().filter_map(|id| scope.get(id).map(|&i| &self.outputs[i])).collect();
                    Some(run_in_context(self.env, id, s, item, &extra)?)
                }
                StepKind::Refine(s) => {
                    let sentinel = match self.chain.find(&s.input).map(|p| &p.kind) {
                        Some(StepKind::InContext(ic)) => ic.sentinel.clone(),
                        _ => NOT_FOUND.to_string(),
                    };
                    Some(run_refine(self.env, id, s, &input.unwrap(), &sentinel, &mut self.seen)?)
                }
                StepKind::Classify(s) => Some(run_classify(self.env, id, s, &input.unwrap())?),
                StepKind::Parse(s) => Some(run_parse(self.env, id, s, &input.unwrap())?),
                StepKind::OpenDomain(s) => Some(run_open_domain(self.env, id, s, item)?),
                StepKind::Summarize(s) => Some(run_summarize(self.env, id, s, &input.unwrap())?),
                StepKind::Branch(b) => {
                    if input.unwrap().category() == Some(b.match_category.as_str()) {
                        self.run(&b.steps, scope, item)?;
                    }
                    None
                }
                StepKind::ForEach(f) => {
                    let entities = input.unwrap().entities().to_vec();
                    for entity in entities.iter().take(f.max_items) {
                        let mut inner = scope.clone();
                        self.run(&f.steps, &mut inner, Some(entity))?;
                    }
                    None
                }
            };
            if let Some(mut output) = output {
                self.seen.extend(output.evidence.iter().copied());
                output.item = item.map(str::to_string);
                scope.insert(spec.id.clone(), self.outputs.len());
                self.outputs.push(output);
            }
        }
        Ok(())
    }
}

/// Runs every step in order. The first failing step stops the chain; the
/// outputs produced so far are kept and the failure is recorded.
pub fn run_chain(env: &ChainEnv<'_>, chain: &ChainSpec) -> ChainResult {
    let start = Instant::now();
    let before = (env.completions.load(Ordering::Relaxed), env.embeddings.load(Ordering::Relaxed));
    let mut runner = Runner { env, chain, outputs: Vec::new(), seen: BTreeSet::new() };
    let error = runner.run(&chain.steps, &mut HashMap::new(), None).err();
    if let Some(e) = &error {
        tracing::warn!(dimension = env.dimension, error = %e, "chain aborted");
    }
    ChainResult {
        dimension: chain.dimension.clone(),
        outputs: runner.outputs,
        error: error.as_ref().map(StepFailure::from),
        completion_calls: env.completions.load(Ordering::Relaxed) - before.0,
        embedding_calls: env.embeddings.load(Ordering::Relaxed) - before.1,
        latency_ms: start.elapsed().as_millis() as u64,
    }
}
