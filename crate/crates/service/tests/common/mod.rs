#![allow(dead_code)]

use std::path::{Path, PathBuf};

use datadoc_core::gateway::{ErrorKind, FailSpec, MockRuleSpec};
use datadoc_core::ingest::ParsedTable;
use datadoc_core::RawInput;
use datadoc_service::config::BackendConfig;
use datadoc_service::{Service, ServiceConfig};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn reefscan_input() -> RawInput {
    let text = std::fs::read_to_string(fixture("reefscan_paper.txt")).unwrap();
    let tables: Vec<ParsedTable> =
        serde_json::from_str(&std::fs::read_to_string(fixture("reefscan_tables.json")).unwrap()).unwrap();
    RawInput { text, tables }
}

/// The scripted configuration with its cache in `cache_dir`.
pub fn reefscan_config(cache_dir: &Path) -> ServiceConfig {
    let mut config = ServiceConfig::load(&fixture("reefscan_config.json")).unwrap();
    config.cache.dir = cache_dir.to_path_buf();
    config
}

pub fn reefscan_service(cache_dir: &Path) -> Service {
    Service::from_config(&reefscan_config(cache_dir)).unwrap()
}

/// The scripted configuration where every prompt containing `needle` is
/// refused by the backend.
pub fn failing_config(cache_dir: &Path, needle: &str) -> ServiceConfig {
    let mut config = reefscan_config(cache_dir);
    let BackendConfig::Mock { rules, .. } = &mut config.backend else { unreachable!("fixture uses the mock") };
    rules.rules.insert(
        0,
        MockRuleSpec {
            contains: Some(needle.to_string()),
            pattern: None,
            respond: None,
            respond_seq: None,
            fail: Some(FailSpec { kind: ErrorKind::Refused, times: None }),
        },
    );
    config
}

pub fn schema_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schemas").join(format!("{name}.schema.json"))
}

const SCHEMAS: [&str; 8] = [
    "dimension_record",
    "completeness_report",
    "analyze_response",
    "document_response",
    "error_response",
    "analyze_output",
    "eval_summary",
    "agreement_report",
];

fn load_schema(name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(schema_path(name)).unwrap()).unwrap()
}

/// A validator for one committed schema, with the others resolvable by id.
pub fn validator(name: &str) -> jsonschema::Validator {
    let mut options = jsonschema::options();
    for other in SCHEMAS {
        let schema = load_schema(other);
        let id = schema["$id"].as_str().unwrap().to_string();
        options = options.with_resource(id, jsonschema::Resource::from_contents(schema).unwrap());
    }
    options.build(&load_schema(name)).unwrap_or_else(|e| panic!("schema {name}: {e}"))
}

/// Validation errors of `value` against a committed schema, as text.
pub fn schema_errors(name: &str, value: &serde_json::Value) -> Vec<String> {
    validator(name).iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect()
}
