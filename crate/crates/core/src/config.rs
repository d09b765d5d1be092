//! Everything the pipeline needs besides the backends.

use crate::chain::{PromptCatalog, StepKind, StepSpec, DEFAULT_K, DEFAULT_MAX_ROUNDS};
use crate::completeness::HypothesisSet;
use crate::dimensions::{chain_for, CategoryLists, Dimension};
use crate::ingest::PreprocessConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub preprocess: PreprocessConfig,
    /// Passages retrieved per in-context and refinement step.
    pub k: usize,
    pub max_rounds: u32,
    pub categories: CategoryLists,
    pub catalog: PromptCatalog,
    pub hypotheses: HypothesisSet,
    /// Used as `extracted_at` instead of the clock, for reproducible output.
    pub fixed_timestamp: Option<String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            k: DEFAULT_K,
            max_rounds: DEFAULT_MAX_ROUNDS,
            categories: CategoryLists::default(),
            catalog: PromptCatalog::default(),
            hypotheses: HypothesisSet::default(),
            fixed_timestamp: None,
        }
    }
}

fn apply(steps: &mut [StepSpec], k: usize, max_rounds: u32) {
    for step in steps {
        match &mut step.kind {
            StepKind::InContext(s) => s.k = k,
            StepKind::Refine(s) => {
                s.k = k;
                s.max_rounds = max_rounds;
            }
            StepKind::Branch(b) => apply(&mut b.steps, k, max_rounds),
            StepKind::ForEach(f) => apply(&mut f.steps, k, max_rounds),
            _ => {}
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.preprocess.validate().map_err(|e| e.to_string())?;
        if self.k == 0 || self.max_rounds == 0 {
            return Err("k and max_rounds must be at least 1".into());
        }
        self.categories.validate()?;
        self.catalog.validate().map_err(|e| e.to_string())
    }

    /// The dimension's chain with this config's `k` and `max_rounds`.
    pub fn chain(&self, dimension: Dimension) -> crate::chain::ChainSpec {
        let mut chain = chain_for(dimension, &self.categories);
        apply(&mut chain.steps, self.k, self.max_rounds);
        chain
    }

    /// RFC 3339 UTC time, or the fixed timestamp.
    pub fn timestamp(&self) -> String {
        if let Some(fixed) = &self.fixed_timestamp {
            return fixed.clone();
        }
        time::OffsetDateTime::now_utc()
            .format(&time::format_description::well_known::Rfc3339)
            .expect("UTC time formats as RFC 3339")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_steps() {
        let config = PipelineConfig { k: 6, max_rounds: 2, ..Default::default() };
        let chain = config.chain(Dimension::Annotation);
        for step in chain.flatten() {
            match &step.kind {
                StepKind::InContext(s) => assert_eq!(s.k, 6, "{}", step.id),
                StepKind::Refine(s) => assert_eq!((s.k, s.max_rounds), (6, 2)),
                _ => {}
            }
        }
        chain.validate().unwrap();
    }

    #[test]
    fn fixed_timestamp_wins() {
        let config = PipelineConfig { fixed_timestamp: Some("2024-01-01T00:00:00Z".into()), ..Default::default() };
        assert_eq!(config.timestamp(), "2024-01-01T00:00:00Z");
        assert!(PipelineConfig::default().timestamp().ends_with('Z'));
        assert!(PipelineConfig { k: 0, ..Default::default() }.validate().is_err());
    }
}
