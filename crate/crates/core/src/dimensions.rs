//! The seven documentation dimensions: their chains and the records built
//! from chain outputs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    run_chain, ChainEnv, ChainResult, ChainSpec, FieldBinding, PromptCatalog, Provenance, StepFailure, StepKind,
    StepOutput, StepSpec,
};
use crate::config::PipelineConfig;
use crate::gateway::Gateway;
use crate::ingest::PreparedDocument;

const DEFAULT_CATEGORIES: &str = include_str!("../assets/categories.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Uses,
    Contributors,
    Distribution,
    Composition,
    Gathering,
    Annotation,
    SocialConcerns,
}

impl Dimension {
    pub const ALL: [Dimension; 7] = [
        Dimension::Uses,
        Dimension::Contributors,
        Dimension::Distribution,
        Dimension::Composition,
        Dimension::Gathering,
        Dimension::Annotation,
        Dimension::SocialConcerns,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Uses => "uses",
            Dimension::Contributors => "contributors",
            Dimension::Distribution => "distribution",
            Dimension::Composition => "composition",
            Dimension::Gathering => "gathering",
            Dimension::Annotation => "annotation",
            Dimension::SocialConcerns => "social_concerns",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown dimension {0:?}; expected one of uses, contributors, distribution, composition, gathering, annotation, social_concerns")]
pub struct UnknownDimension(pub String);

impl FromStr for Dimension {
    type Err = UnknownDimension;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| UnknownDimension(s.to_string()))
    }
}

/// Closed label sets used by classification steps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryLists {
    pub ml_tasks: Vec<String>,
    pub funder_types: Vec<String>,
    pub gathering_team_types: Vec<String>,
    pub annotation_team_types: Vec<String>,
    pub gathering_process_types: Vec<String>,
    pub annotation_process_types: Vec<String>,
}

impl Default for CategoryLists {
    fn default() -> Self {
        Self::from_json(DEFAULT_CATEGORIES).expect("bundled category lists are valid")
    }
}

impl CategoryLists {
    pub fn from_json(json: &str) -> Result<Self, String> {
        let lists: Self = serde_json::from_str(json).map_err(|e| e.to_string())?;
        lists.validate()?;
        Ok(lists)
    }

    pub fn validate(&self) -> Result<(), String> {
        let named = [
            ("ml_tasks", &self.ml_tasks),
            ("funder_types", &self.funder_types),
            ("gathering_team_types", &self.gathering_team_types),
            ("annotation_team_types", &self.annotation_team_types),
            ("gathering_process_types", &self.gathering_process_types),
            ("annotation_process_types", &self.annotation_process_types),
        ];
        for (name, list) in named {
            if list.is_empty() {
                return Err(format!("{name} is empty"));
            }
            for (i, item) in list.iter().enumerate() {
                if item.trim().is_empty() || *item != item.to_lowercase() {
                    return Err(format!("{name}: {item:?} must be non-empty and lowercase"));
                }
                if item == crate::chain::UNKNOWN_CATEGORY {
                    return Err(format!("{name}: \"unknown\" is reserved"));
                }
                if list[..i].contains(item) {
                    return Err(format!("{name}: duplicate {item:?}"));
                }
            }
        }
        Ok(())
    }
}

fn text(id: &str, field: &str, query: &str, steps: &mut Vec<StepSpec>, map: &mut Vec<FieldBinding>) {
    steps.push(StepSpec::in_context(id, query));
    bind(map, field, id);
}

fn bind(map: &mut Vec<FieldBinding>, field: &str, step: &str) {
    map.push(FieldBinding { field: field.into(), step: step.into() });
}

/// In-context question followed by a parse into entities.
fn listed(prefix: &str, entity: &str, query: &str, steps: &mut Vec<StepSpec>, map: &mut Vec<FieldBinding>) {
    let answer = format!("{prefix}_answer");
    steps.push(StepSpec::in_context(&answer, query));
    steps.push(StepSpec::parse(prefix, &answer, entity));
    bind(map, prefix, prefix);
}

/// In-context → refine → classify → summarize, the process-description
/// pattern shared by gathering and annotation.
fn described_process(
    concept: &str,
    process_types: &[String],
    steps: &mut Vec<StepSpec>,
    map: &mut Vec<FieldBinding>,
) {
    steps.push(StepSpec::in_context(
        "process_answer",
        &format!("How was the data {{{concept}}} process performed? Describe it in detail."),
    ));
    steps.push(StepSpec::refine("process_refined", "process_answer"));
    steps.push(StepSpec::classify("process_type", "process_refined", process_types));
    steps.push(StepSpec::summarize("description", "process_refined", 3));
    bind(map, "description", "description");
    bind(map, "process_type", "process_type");
}

/// Team question refined, classified, then the crowd-worker follow-up.
fn team(
    query: &str,
    team_types: &[String],
    crowd: &str,
    labor_query: &str,
    steps: &mut Vec<StepSpec>,
    map: &mut Vec<FieldBinding>,
) {
    steps.push(StepSpec::in_context("team_answer", query));
    steps.push(StepSpec::refine("team_description", "team_answer"));
    steps.push(StepSpec::classify("team_type", "team_description", team_types));
    bind(map, "team_description", "team_description");
    bind(map, "team_type", "team_type");
    steps.push(StepSpec::branch(
        "crowd_follow_up",
        "team_type",
        crowd,
        vec![StepSpec::in_context("crowd_labor_conditions", labor_query)],
    ));
}

/// The static chain of `dimension`.
pub fn chain_for(dimension: Dimension, categories: &CategoryLists) -> ChainSpec {
    let mut steps = Vec::new();
    let mut map = Vec::new();
    let (s, m) = (&mut steps, &mut map);
    match dimension {
        Dimension::Uses => {
            listed("purposes", "purpose", "What are the purposes the dataset has been created for?", s, m);
            listed("gaps", "gap", "What gaps or limitations of existing data does the dataset intend to fill?", s, m);
            s.push(StepSpec::in_context("tasks_answer", "What machine learning tasks is the dataset intended for?"));
            s.push(StepSpec::classify("ml_tasks", "tasks_answer", &categories.ml_tasks));
            bind(m, "ml_tasks", "ml_tasks");
            listed("recommended_uses", "recommended use", "What are the recommended uses of the dataset?", s, m);
            listed(
                "non_recommended_uses",
                "non-recommended use",
                "For which uses is the dataset not recommended or not suitable?",
                s,
                m,
            );
            s.push(StepSpec::in_context(
                "benchmarks_answer",
                "Which machine learning approaches or models have been tested on the dataset?",
            ));
            s.push(StepSpec::parse("benchmarks", "benchmarks_answer", "machine learning approach"));
            s.push(StepSpec::for_each(
                "benchmark_details",
                "benchmarks",
                vec![StepSpec::in_context(
                    "metrics",
                    "Which results (for example accuracy, F1, precision or recall) did {item} obtain on the dataset?",
                )],
                &["metrics"],
            ));
            bind(m, "benchmarks", "benchmarks");
        }
        Dimension::Contributors => {
            listed("authors", "author", "Who are the authors of the dataset?", s, m);
            s.push(StepSpec::in_context("funding_answer", "Who funded the creation of the dataset?"));
            s.push(StepSpec::in_context(
                "grants",
                "Which grant numbers or identifiers are mentioned for the funding of the dataset?",
            ));
            s.push(StepSpec::parse("funders", "funding_answer", "funder"));
            let funder_types = categories.funder_types.join(", ");
            s.push(StepSpec::for_each(
                "funder_details",
                "funders",
                vec![
                    StepSpec::open_domain(
                        "funder_kind",
                        &format!("Is '{{item}}' a public or private funder? Answer with one of: {funder_types}."),
                    ),
                    StepSpec::classify("funder_type", "funder_kind", &categories.funder_types),
                    StepSpec::in_context(
                        "grant_id",
                        "Which grant identifier, if any, is associated with the funding from {item}?",
                    )
                    .with_context_from(&["grants"]),
                ],
                &["funder_type", "grant_id"],
            ));
            bind(m, "funders", "funders");
            listed("maintainers", "maintainer", "Who maintains the dataset?", s, m);
            text(
                "maintenance_policies",
                "maintenance_policies",
                "What are the maintenance policies of the dataset, such as updates, versioning or errata?",
                s,
                m,
            );
        }
        Dimension::Distribution => {
            let questions = [
                ("access_links", "Where can the dataset be accessed or downloaded? Give the links."),
                ("license", "Under which license is the dataset released?"),
                ("third_party_licensor", "Is there any third party in charge of the license of the dataset?"),
                ("attribution_notice", "Which attribution notice must be given when using the dataset?"),
                ("data_rights", "Which rights are granted over the data itself?"),
                ("model_rights", "Which rights apply to the models trained with the dataset?"),
                ("deprecation_policy", "Is there any deprecation policy for the dataset?"),
            ];
            for (id, q) in questions {
                text(id, id, q, s, m);
            }
        }
        Dimension::Composition => {
            let questions = [
                ("file_structure", "What is the file structure of the dataset?"),
                ("file_formats", "In which file formats is the dataset released?"),
                ("file_descriptions", "What does each file of the dataset contain?"),
                ("attribute_descriptions", "Which attributes or fields does the data have, and what do they mean?"),
                ("data_splits", "Is there a recommended data split (train, validation, test) for the dataset?"),
                ("consistency_rules", "Are there consistency rules or constraints the data follows?"),
                ("statistics", "Which relevant statistics of the dataset are reported?"),
            ];
            for (id, q) in questions {
                text(id, id, q, s, m);
            }
        }
        Dimension::Gathering => {
            described_process("gathering", &categories.gathering_process_types, s, m);
            team(
                "Who performed the data {gathering}?",
                &categories.gathering_team_types,
                "crowdsourcing",
                "Which company or platform provided the crowdsourcing service, and what were the labor conditions of the workers?",
                s,
                m,
            );
            text(
                "team_demographics",
                "team_demographics",
                "What demographic information is given about the people who performed the data {gathering}?",
                s,
                m,
            );
            s.push(
                StepSpec::in_context("sources", "What are the sources of the data?")
                    .with_context_from(&["process_refined"]),
            );
            bind(m, "sources", "sources");
            s.push(
                StepSpec::in_context("source_issues", "Which issues or limitations of the data sources are reported?")
                    .with_context_from(&["process_refined"]),
            );
            bind(m, "source_issues", "source_issues");
            s.push(
                StepSpec::in_context(
                    "infrastructure",
                    "Which infrastructure, devices or software were used for the data {gathering}?",
                )
                .with_context_from(&["process_refined"]),
            );
            bind(m, "infrastructure", "infrastructure");
            text("geolocation", "geolocation", "Where geographically was the data gathered?", s, m);
            text("timeframe", "timeframe", "In which time period was the data gathered?", s, m);
            bind(m, "crowd_labor_conditions", "crowd_labor_conditions");
        }
        Dimension::Annotation => {
            described_process("annotation", &categories.annotation_process_types, s, m);
            team(
                "Who performed the {annotation} of the data?",
                &categories.annotation_team_types,
                "crowd-workers",
                "Which company or platform provided the crowd workers, and what were their labor conditions?",
                s,
                m,
            );
            text(
                "team_demographics",
                "team_demographics",
                "What demographic information is given about the people who performed the {annotation}?",
                s,
                m,
            );
            s.push(StepSpec::in_context(
                "tools_answer",
                "Which tools or platforms were used for the {annotation} of the data?",
            ));
            s.push(StepSpec::parse("infrastructure_tools", "tools_answer", "tool or platform"));
            s.push(StepSpec::for_each(
                "tool_details",
                "infrastructure_tools",
                vec![StepSpec::in_context(
                    "tool_detail",
                    "What details are given about {item}, such as its version or how it was used?",
                )],
                &["tool_detail"],
            ));
            bind(m, "infrastructure_tools", "infrastructure_tools");
            text("labels", "labels", "Which labels were produced by the {annotation} process?", s, m);
            text(
                "validation_methods",
                "validation_methods",
                "Which validation methods were applied to the labels?",
                s,
                m,
            );
            text("guidelines", "guidelines", "Which {annotation} guidelines were given to the team?", s, m);
            bind(m, "crowd_labor_conditions", "crowd_labor_conditions");
        }
        Dimension::SocialConcerns => {
            let questions = [
                ("biases", "Are biases in the data mentioned, for example geographical or representativeness biases?"),
                (
                    "sensitivity_issues",
                    "Are there sensitivity issues, such as content that may be offensive to a group of people?",
                ),
                ("privacy_issues", "Are there privacy issues, such as exposure of private data, or anonymization measures?"),
            ];
            for (id, q) in questions {
                text(id, id, q, s, m);
            }
        }
    }
    let chain = ChainSpec { dimension: dimension.as_str().to_string(), steps, output_map: map };
    debug_assert_eq!(chain.validate(), Ok(()));
    chain
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Text,
    Category,
    Entities,
}

fn field_kind(step: &StepKind) -> FieldKind {
    match step {
        StepKind::Classify(_) => FieldKind::Category,
        StepKind::Parse(_) => FieldKind::Entities,
        _ => FieldKind::Text,
    }
}

/// Field names and kinds of `dimension`, in record order.
pub fn schema(dimension: Dimension) -> Vec<(String, FieldKind)> {
    let chain = chain_for(dimension, &CategoryLists::default());
    chain
        .output_map
        .iter()
        .map(|b| (b.field.clone(), field_kind(&chain.find(&b.step).expect("validated").kind)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldStatus {
    Found,
    NotFound,
}

/// A per-entity follow-up answer (e.g. a funder's type or grant).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityDetail {
    pub name: String,
    pub status: FieldStatus,
    pub value: Option<String>,
    pub evidence: Vec<usize>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<EntityDetail>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldValue {
    Text { text: String },
    Category { category: String },
    Entities { items: Vec<Entity> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedField {
    pub name: String,
    pub status: FieldStatus,
    /// `None` exactly when not found.
    pub value: Option<FieldValue>,
    pub evidence: Vec<usize>,
    pub provenance: Provenance,
}

impl ExtractedField {
    fn not_found(name: &str) -> Self {
        Self {
            name: name.to_string(),
            status: FieldStatus::NotFound,
            value: None,
            evidence: Vec::new(),
            provenance: Provenance::Document,
        }
    }

    /// The value as plain text (entity names joined by "; ").
    pub fn value_text(&self) -> Option<String> {
        Some(match self.value.as_ref()? {
            FieldValue::Text { text } => text.clone(),
            FieldValue::Category { category } => category.clone(),
            FieldValue::Entities { items } => items.iter().map(|e| e.name.as_str()).collect::<Vec<_>>().join("; "),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMetadata {
    pub backend_model: String,
    pub prompt_catalog_digest: String,
    pub extracted_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionRecord {
    pub dimension: Dimension,
    pub document_id: String,
    pub fields: Vec<ExtractedField>,
    pub metadata: RecordMetadata,
    /// Set when the chain stopped early; fields after the failure are
    /// reported as not found.
    pub error: Option<StepFailure>,
}

impl DimensionRecord {
    pub fn field(&self, name: &str) -> Option<&ExtractedField> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn is_partial(&self) -> bool {
        self.error.is_some()
    }
}

fn detail(result: &ChainResult, step: &str, entity: &str) -> EntityDetail {
    match result.item_output(step, entity) {
        Some(out) if out.is_found() => EntityDetail {
            name: step.to_string(),
            status: FieldStatus::Found,
            value: Some(out.category().map(str::to_string).unwrap_or_else(|| out.text.clone())),
            evidence: out.evidence.clone(),
            provenance: out.provenance,
        },
        _ => EntityDetail {
            name: step.to_string(),
            status: FieldStatus::NotFound,
            value: None,
            evidence: Vec::new(),
            provenance: Provenance::Document,
        },
    }
}

fn field_from(chain: &ChainSpec, result: &ChainResult, name: &str, step: &str, out: &StepOutput) -> ExtractedField {
    if !out.is_found() {
        return ExtractedField::not_found(name);
    }
    let value = match field_kind(&chain.find(step).expect("validated").kind) {
        FieldKind::Text => FieldValue::Text { text: out.text.clone() },
        FieldKind::Category => FieldValue::Category { category: out.category().unwrap_or_default().to_string() },
        FieldKind::Entities => {
            let exports: Vec<&str> =
                chain.for_each_over(step).into_iter().flat_map(|f| f.export.iter().map(String::as_str)).collect();
            FieldValue::Entities {
                items: out
                    .entities()
                    .iter()
                    .map(|e| Entity { name: e.clone(), details: exports.iter().map(|x| detail(result, x, e)).collect() })
                    .collect(),
            }
        }
    };
    ExtractedField {
        name: name.to_string(),
        status: FieldStatus::Found,
        value: Some(value),
        evidence: out.evidence.clone(),
        provenance: out.provenance,
    }
}

/// Maps chain outputs onto the dimension's fields; steps that did not run
/// yield not-found fields.
pub fn record_from_chain(
    dimension: Dimension,
    chain: &ChainSpec,
    result: &ChainResult,
    document_id: &str,
    metadata: RecordMetadata,
) -> DimensionRecord {
    let fields = chain
        .output_map
        .iter()
        .map(|b| match result.output(&b.step) {
            Some(out) => field_from(chain, result, &b.field, &b.step, out),
            None => ExtractedField::not_found(&b.field),
        })
        .collect();
    DimensionRecord { dimension, document_id: document_id.to_string(), fields, metadata, error: result.error.clone() }
}

fn metadata(gateway: &Gateway, catalog: &PromptCatalog, config: &PipelineConfig) -> RecordMetadata {
    RecordMetadata {
        backend_model: gateway.model().to_string(),
        prompt_catalog_digest: catalog.digest(),
        extracted_at: config.timestamp(),
    }
}

/// Runs the chain of `dimension` and returns its record with the raw chain
/// result.
pub fn extract_dimension_traced(
    prepared: &PreparedDocument,
    dimension: Dimension,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> (DimensionRecord, ChainResult) {
    let chain = config.chain(dimension);
    let env = ChainEnv::new(dimension.as_str(), &prepared.document, &prepared.index, gateway, &config.catalog);
    let result = run_chain(&env, &chain);
    let record =
        record_from_chain(dimension, &chain, &result, &prepared.document.id, metadata(gateway, &config.catalog, config));
    (record, result)
}

pub fn extract_dimension(
    prepared: &PreparedDocument,
    dimension: Dimension,
    gateway: &Gateway,
    config: &PipelineConfig,
) -> DimensionRecord {
    extract_dimension_traced(prepared, dimension, gateway, config).0
}

/// All seven records, in [`Dimension::ALL`] order. Chains run concurrently;
/// a failing chain only affects its own record.
pub fn extract_all(prepared: &PreparedDocument, gateway: &Gateway, config: &PipelineConfig) -> Vec<DimensionRecord> {
    std::thread::scope(|scope| {
        let handles: Vec<_> = Dimension::ALL
            .into_iter()
            .map(|d| scope.spawn(move || extract_dimension(prepared, d, gateway, config)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction thread panicked")).collect()
    })
}
