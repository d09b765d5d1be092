//! Vocabulary selection: which surface term a document uses for a concept
//! (e.g. "collection" vs "acquisition" for gathering), and query tuning.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::IngestError;

const DEFAULT_DICTIONARY: &str = include_str!("../../assets/terms.json");

/// Concept → ordered surface terms. The first term is the default.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, Vec<String>>", into = "BTreeMap<String, Vec<String>>")]
pub struct TermDictionary(BTreeMap<String, Vec<String>>);

impl TryFrom<BTreeMap<String, Vec<String>>> for TermDictionary {
    type Error = IngestError;

    fn try_from(entries: BTreeMap<String, Vec<String>>) -> Result<Self, Self::Error> {
        Self::new(entries)
    }
}

impl From<TermDictionary> for BTreeMap<String, Vec<String>> {
    fn from(dict: TermDictionary) -> Self {
        dict.0
    }
}

impl Default for TermDictionary {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_DICTIONARY).expect("bundled term dictionary is valid")
    }
}

fn is_concept_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase() || c == '_')
        && chars.all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl TermDictionary {
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Result<Self, IngestError> {
        if entries.is_empty() {
            return Err(IngestError::Dictionary("dictionary has no concepts".into()));
        }
        for (concept, terms) in &entries {
            if !is_concept_name(concept) {
                return Err(IngestError::Dictionary(format!(
                    "concept {concept:?} must be lowercase letters, digits or '_'"
                )));
            }
            if terms.is_empty() {
                return Err(IngestError::Dictionary(format!("concept {concept:?} has no terms")));
            }
            for (i, term) in terms.iter().enumerate() {
                if term.trim().is_empty() || *term != term.to_lowercase() {
                    return Err(IngestError::Dictionary(format!(
                        "term {term:?} of {concept:?} must be non-empty and lowercase"
                    )));
                }
                if terms[..i].contains(term) {
                    return Err(IngestError::Dictionary(format!("duplicate term {term:?} in {concept:?}")));
                }
            }
        }
        Ok(Self(entries))
    }

    pub fn from_json(json: &str) -> Result<Self, IngestError> {
        serde_json::from_str(json).map_err(|e| IngestError::Dictionary(e.to_string()))
    }

    pub fn entries(&self) -> &BTreeMap<String, Vec<String>> {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermCount {
    pub term: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConceptTerms {
    pub chosen: String,
    /// In dictionary order.
    pub counts: Vec<TermCount>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermProfile {
    pub concepts: BTreeMap<String, ConceptTerms>,
}

impl TermProfile {
    pub fn chosen(&self, concept: &str) -> Option<&str> {
        self.concepts.get(concept).map(|c| c.chosen.as_str())
    }
}

fn tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn count_phrase(haystack: &[String], phrase: &[String]) -> usize {
    if phrase.is_empty() || phrase.len() > haystack.len() {
        return 0;
    }
    haystack.windows(phrase.len()).filter(|w| *w == phrase).count()
}

/// Whole-word, case-insensitive counts; the most frequent term wins, ties go
/// to the earlier dictionary entry, and zero counts fall back to the default.
pub fn build_term_profile(text: &str, dict: &TermDictionary) -> TermProfile {
    let words = tokens(text);
    let concepts = dict
        .0
        .iter()
        .map(|(concept, terms)| {
            let counts: Vec<TermCount> = terms
                .iter()
                .map(|term| TermCount { term: term.clone(), count: count_phrase(&words, &tokens(term)) })
                .collect();
            let mut best = &counts[0];
            for candidate in &counts[1..] {
                if candidate.count > best.count {
                    best = candidate;
                }
            }
            (concept.clone(), ConceptTerms { chosen: best.term.clone(), counts: counts.clone() })
        })
        .collect();
    TermProfile { concepts }
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").unwrap())
}

/// Substitutes every `{concept}` placeholder with the document's term.
pub fn tune_query(template: &str, profile: &TermProfile) -> Result<String, IngestError> {
    let re = placeholder_re();
    if let Some(unknown) = re
        .captures_iter(template)
        .map(|c| c[1].to_string())
        .find(|name| profile.chosen(name).is_none())
    {
        return Err(IngestError::UnknownPlaceholder(unknown));
    }
    Ok(re
        .replace_all(template, |c: &regex::Captures<'_>| profile.chosen(&c[1]).unwrap_or_default().to_string())
        .into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gathering_dict() -> TermDictionary {
        TermDictionary::from_json(r#"{"gathering": ["gathering", "collection", "acquisition"]}"#).unwrap()
    }

    /// Word counting done by hand for the oracle: every word separated by
    /// spaces, punctuation stripped.
    fn oracle_count(text: &str, term: &str) -> usize {
        text.split_whitespace()
            .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
            .filter(|w| w == term)
            .count()
    }

    #[test]
    fn skewed_counts_pick_the_majority_term() {
        let text = "Acquisition was done in 2020. The acquisition protocol, acquisition devices, \
                    ACQUISITION sites and acquisition staff. A small collection of notes.";
        assert_eq!(oracle_count(text, "acquisition"), 5);
        assert_eq!(oracle_count(text, "collection"), 1);
        let profile = build_term_profile(text, &gathering_dict());
        assert_eq!(profile.chosen("gathering"), Some("acquisition"));
        let counts = &profile.concepts["gathering"].counts;
        assert_eq!(counts.iter().map(|c| c.count).collect::<Vec<_>>(), [0, 1, 5]);
    }

    #[test]
    fn absent_terms_fall_back_to_default() {
        let profile = build_term_profile("Nothing relevant here.", &gathering_dict());
        assert_eq!(profile.chosen("gathering"), Some("gathering"));
    }

    #[test]
    fn ties_follow_dictionary_order() {
        let text = "collection acquisition collection acquisition collection acquisition";
        let profile = build_term_profile(text, &gathering_dict());
        assert_eq!(profile.chosen("gathering"), Some("collection"));
    }

    #[test]
    fn counting_is_whole_word() {
        let profile = build_term_profile("recollection collections collection", &gathering_dict());
        assert_eq!(profile.concepts["gathering"].counts[1].count, 1);
    }

    #[test]
    fn multi_word_terms_are_counted_as_phrases() {
        let dict = TermDictionary::from_json(r#"{"team": ["team", "crowd workers"]}"#).unwrap();
        let profile = build_term_profile("Crowd-workers and crowd workers, not crowd.", &dict);
        assert_eq!(profile.concepts["team"].counts[1].count, 2);
    }

    #[test]
    fn tune_query_substitutes() {
        let text = "acquisition acquisition";
        let profile = build_term_profile(text, &gathering_dict());
        assert_eq!(
            tune_query("How was the data {gathering} process performed?", &profile).unwrap(),
            "How was the data acquisition process performed?"
        );
        assert_eq!(tune_query("No placeholders.", &profile).unwrap(), "No placeholders.");
    }

    #[test]
    fn tune_query_annotation_default_dictionary() {
        let profile = build_term_profile("labeling was done; labeling again", &TermDictionary::default());
        assert_eq!(tune_query("{annotation} guidelines", &profile).unwrap(), "labeling guidelines");
    }

    #[test]
    fn unknown_placeholder_is_named() {
        let profile = build_term_profile("", &gathering_dict());
        match tune_query("What {provenance}?", &profile) {
            Err(IngestError::UnknownPlaceholder(name)) => assert_eq!(name, "provenance"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn default_dictionary_ships_gathering_and_annotation() {
        let dict = TermDictionary::default();
        assert_eq!(dict.entries()["gathering"], ["gathering", "collection", "acquisition"]);
        assert_eq!(dict.entries()["annotation"], ["annotation", "labeling", "labelling", "tagging"]);
    }

    #[test]
    fn invalid_dictionaries_are_rejected() {
        assert!(TermDictionary::from_json("{}").is_err());
        assert!(TermDictionary::from_json(r#"{"g": []}"#).is_err());
        assert!(TermDictionary::from_json(r#"{"g": ["Upper"]}"#).is_err());
        assert!(TermDictionary::from_json(r#"{"g": ["a", "a"]}"#).is_err());
        assert!(TermDictionary::from_json(r#"{"Bad Name": ["a"]}"#).is_err());
    }

    proptest::proptest! {
        #[test]
        fn chosen_term_attains_the_maximum(
            words in proptest::collection::vec(
                proptest::sample::select(vec!["gathering", "collection", "acquisition", "data", "the"]),
                0..60,
            )
        ) {
            let text = words.join(" ");
            let profile = build_term_profile(&text, &gathering_dict());
            let entry = &profile.concepts["gathering"];
            let max = entry.counts.iter().map(|c| c.count).max().unwrap();
            let chosen = entry.counts.iter().find(|c| c.term == entry.chosen).unwrap();
            proptest::prop_assert_eq!(chosen.count, max);
            let first_max = entry.counts.iter().find(|c| c.count == max).unwrap();
            proptest::prop_assert_eq!(&first_max.term, &entry.chosen);
            let tuned = tune_query("a {gathering} b", &profile).unwrap();
            proptest::prop_assert!(!tuned.contains("{gathering}"), "placeholder left in {}", tuned);
        }
    }
}
