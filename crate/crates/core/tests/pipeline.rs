use std::sync::Arc;

use datadoc_core::dimensions::FieldStatus;
use datadoc_core::gateway::{CallKind, MockBackend, MockRule};
use datadoc_core::retrieval::HashingEmbedder;
use datadoc_core::{
    assess, build_document, extract_all, CoverageClassifier, Dimension, Gateway, PipelineConfig, RawInput,
};

const PAPER: &str = "Lichen Atlas: a photographic dataset of Alpine lichens.\n\n\
The dataset was created to support automatic species identification in the field.\n\n\
Images were taken by two botanists during the 2021 survey season across twelve valleys.\n\n\
The dataset is released under the Creative Commons Attribution 4.0 license.";

fn gateway() -> Gateway {
    let mock = MockBackend::new(vec![
        MockRule::contains("Under which license is the dataset released?", "CC BY 4.0"),
        MockRule::contains("", "NOT_FOUND"),
    ]);
    Gateway::new(Arc::new(mock)).with_embedder(Arc::new(HashingEmbedder::new(64)))
}

#[test]
fn full_pipeline_with_scripted_backend() {
    let gateway = gateway();
    let config = PipelineConfig { fixed_timestamp: Some("1970-01-01T00:00:00Z".into()), ..PipelineConfig::default() };
    let prepared = build_document(&RawInput::new(PAPER), &config.preprocess, &config.catalog, &gateway).unwrap();
    assert!(!prepared.document.passages.is_empty());

    let records = extract_all(&prepared, &gateway, &config);
    assert_eq!(records.iter().map(|r| r.dimension).collect::<Vec<_>>(), Dimension::ALL.to_vec());
    assert!(records.iter().all(|r| r.document_id == prepared.document.id && r.error.is_none()));

    let license = records[2].field("license").unwrap();
    assert_eq!(license.status, FieldStatus::Found);
    assert_eq!(license.value_text().as_deref(), Some("CC BY 4.0"));

    let report = assess(&records, &CoverageClassifier::Sentinel).unwrap();
    assert!(report.overall > 0.0 && report.overall < 1.0, "overall {}", report.overall);
    assert!(gateway.call_count(CallKind::Complete) > 0);

    // Same inputs, same output.
    let again = extract_all(&prepared, &gateway, &config);
    assert_eq!(serde_json::to_string(&records).unwrap(), serde_json::to_string(&again).unwrap());
}

#[test]
fn document_id_ignores_embedder() {
    let config = PipelineConfig::default();
    let a = build_document(&RawInput::new(PAPER), &config.preprocess, &config.catalog, &gateway()).unwrap();
    let other = Gateway::new(Arc::new(MockBackend::new(vec![]))).with_embedder(Arc::new(HashingEmbedder::new(32)));
    let b = build_document(&RawInput::new(PAPER), &config.preprocess, &config.catalog, &other).unwrap();
    assert_eq!(a.document.id, b.document.id);
}
