//! Concept prompts, response parsing, and meta-question construction.
//!
//! A category is described by `m` short phrases obtained from an LLM. Each
//! phrase is turned into a yes/no question that a VQA model can answer about
//! an image. When no phrases are used (`m = 0`) a single baseline question
//! about the category itself is asked instead.

use std::collections::BTreeMap;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint;

/// Subject noun used when a dataset does not configure one.
pub const DEFAULT_SUBJECT_NOUN: &str = "object";

pub const META_QUESTION_TEMPLATE: &str = "Does the {subject} in the image have {concept}?";
pub const BASELINE_QUESTION_TEMPLATE: &str = "Is there a {category}?";
/// Alternative no-concept question form.
pub const BASELINE_QUESTION_TEMPLATE_THIS: &str = "Is this a {category}?";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCategorySpec")]
pub struct CategorySpec {
    name: String,
    dataset_id: String,
    subject_noun: String,
}

#[derive(Deserialize)]
struct RawCategorySpec {
    name: String,
    #[serde(default)]
    dataset_id: String,
    #[serde(default = "default_subject_noun")]
    subject_noun: String,
}

fn default_subject_noun() -> String {
    DEFAULT_SUBJECT_NOUN.to_string()
}

impl TryFrom<RawCategorySpec> for CategorySpec {
    type Error = Error;

    fn try_from(raw: RawCategorySpec) -> Result<Self> {
        CategorySpec::new(raw.name, raw.dataset_id, raw.subject_noun)
    }
}

impl CategorySpec {
    /// The name is trimmed; both it and the subject noun must be non-empty.
    pub fn new(
        name: impl Into<String>,
        dataset_id: impl Into<String>,
        subject_noun: impl Into<String>,
    ) -> Result<Self> {
        let name = name.into().trim().to_string();
        let subject_noun = subject_noun.into().trim().to_string();
        if name.is_empty() {
            return Err(Error::InvalidParameter("category name is empty".into()));
        }
        if subject_noun.is_empty() {
            return Err(Error::InvalidParameter("subject noun is empty".into()));
        }
        Ok(Self {
            name,
            dataset_id: dataset_id.into(),
            subject_noun,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }

    pub fn subject_noun(&self) -> &str {
        &self.subject_noun
    }

    pub fn with_subject_noun(&self, subject_noun: &str) -> Result<Self> {
        CategorySpec::new(self.name.clone(), self.dataset_id.clone(), subject_noun)
    }
}

impl fmt::Display for CategorySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Number of concept descriptors per category. Always odd so that a strict
/// majority exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct ConceptCount(u32);

impl ConceptCount {
    pub fn new(m: u32) -> Result<Self> {
        if m == 0 || m.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "m must be a positive odd integer, got {m}"
            )));
        }
        Ok(Self(m))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn as_usize(self) -> usize {
        self.0 as usize
    }

    /// Minimum number of affirmative answers that declares the category present.
    pub fn majority_threshold(self) -> u32 {
        self.0.div_ceil(2)
    }
}

impl TryFrom<u32> for ConceptCount {
    type Error = Error;

    fn try_from(m: u32) -> Result<Self> {
        ConceptCount::new(m)
    }
}

impl From<ConceptCount> for u32 {
    fn from(m: ConceptCount) -> u32 {
        m.0
    }
}

impl fmt::Display for ConceptCount {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Where a concept set came from. Decoding parameters are not standardised
/// across LLM providers, so they are recorded verbatim.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub llm_fingerprint: String,
    #[serde(default)]
    pub llm_params: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptSet {
    pub category: CategorySpec,
    pub m: ConceptCount,
    pub phrases: Vec<String>,
    pub raw_response: String,
    pub prompt_fingerprint: String,
    /// Fragments beyond the first `m` that were dropped while parsing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub discarded_fragments: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl ConceptSet {
    /// Builds a set directly from known phrases, as if an LLM had answered
    /// with them joined by `#`.
    pub fn from_phrases(category: CategorySpec, phrases: Vec<String>) -> Result<Self> {
        let m = u32::try_from(phrases.len())
            .map_err(|_| Error::InvalidParameter("too many phrases".into()))
            .and_then(ConceptCount::new)?;
        let prompt = build_concept_prompt(&category, m.get())?;
        let set = ConceptSet {
            raw_response: phrases.join("#"),
            prompt_fingerprint: fingerprint(&[&prompt]),
            category,
            m,
            phrases,
            discarded_fragments: Vec::new(),
            provenance: None,
        };
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phrases.len() != self.m.as_usize() {
            return Err(Error::InvalidParameter(format!(
                "concept set for {:?} has {} phrases but m = {}",
                self.category.name(),
                self.phrases.len(),
                self.m
            )));
        }
        if let Some(i) = self.phrases.iter().position(|p| p.trim().is_empty()) {
            return Err(Error::InvalidParameter(format!(
                "concept set for {:?} has an empty phrase at index {i}",
                self.category.name()
            )));
        }
        Ok(())
    }

    /// Stable identifier of the category and its phrases.
    pub fn fingerprint(&self) -> String {
        let mut parts: Vec<&str> = vec![self.category.name()];
        parts.extend(self.phrases.iter().map(String::as_str));
        fingerprint(&parts)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaQuestion {
    pub text: String,
    pub concept_index: usize,
    pub category: CategorySpec,
}

/// Question templates with `{subject}`, `{concept}` and `{category}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuestionTemplates {
    pub meta_question: String,
    pub baseline_question: String,
}

impl Default for QuestionTemplates {
    fn default() -> Self {
        Self {
            meta_question: META_QUESTION_TEMPLATE.to_string(),
            baseline_question: BASELINE_QUESTION_TEMPLATE.to_string(),
        }
    }
}

impl QuestionTemplates {
    pub fn validate(&self) -> Result<()> {
        if !self.meta_question.contains("{concept}") {
            return Err(Error::InvalidParameter(
                "meta-question template lacks a {concept} placeholder".into(),
            ));
        }
        if !self.baseline_question.contains("{category}") {
            return Err(Error::InvalidParameter(
                "baseline question template lacks a {category} placeholder".into(),
            ));
        }
        Ok(())
    }

    pub fn meta_question(&self, subject_noun: &str, concept: &str) -> String {
        self.meta_question
            .replace("{subject}", subject_noun)
            .replace("{concept}", concept)
    }

    pub fn baseline_question(&self, category: &CategorySpec) -> String {
        self.baseline_question
            .replace("{category}", category.name())
    }

    pub fn make_meta_questions(&self, concepts: &ConceptSet) -> Vec<MetaQuestion> {
        concepts
            .phrases
            .iter()
            .enumerate()
            .map(|(i, phrase)| MetaQuestion {
                text: self.meta_question(concepts.category.subject_noun(), phrase),
                concept_index: i,
                category: concepts.category.clone(),
            })
            .collect()
    }

    /// Compiles a matcher that recovers template slots from rendered questions.
    pub fn matcher(&self) -> QuestionMatcher {
        QuestionMatcher {
            meta: template_regex(&self.meta_question),
            baseline: template_regex(&self.baseline_question),
        }
    }
}

/// What a rendered question asks about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedQuestion {
    Concept {
        subject: Option<String>,
        concept: String,
    },
    Category(String),
}

#[derive(Debug, Clone)]
pub struct QuestionMatcher {
    meta: Regex,
    baseline: Regex,
}

impl QuestionMatcher {
    pub fn parse(&self, question: &str) -> Option<ParsedQuestion> {
        if let Some(caps) = self.meta.captures(question) {
            if let Some(concept) = caps.name("concept") {
                return Some(ParsedQuestion::Concept {
                    subject: caps.name("subject").map(|s| s.as_str().to_string()),
                    concept: concept.as_str().to_string(),
                });
            }
        }
        self.baseline
            .captures(question)
            .and_then(|caps| caps.name("category"))
            .map(|c| ParsedQuestion::Category(c.as_str().to_string()))
    }
}

fn template_regex(template: &str) -> Regex {
    let placeholder = Regex::new(r"\{(subject|concept|category)\}").expect("static regex");
    let mut pattern = String::from("^");
    let mut seen = Vec::new();
    let mut last = 0;
    for caps in placeholder.captures_iter(template) {
        let whole = caps.get(0).expect("match");
        let name = caps.get(1).expect("group").as_str();
        pattern.push_str(&regex::escape(&template[last..whole.start()]));
        if seen.contains(&name) {
            // Repeated placeholders just need to match something.
            pattern.push_str("(?:.+?)");
        } else {
            pattern.push_str(&format!("(?P<{name}>.+?)"));
            seen.push(name);
        }
        last = whole.end();
    }
    pattern.push_str(&regex::escape(&template[last..]));
    pattern.push('$');
    Regex::new(&pattern).expect("escaped template is a valid regex")
}

pub fn build_concept_prompt(category: &CategorySpec, m: u32) -> Result<String> {
    let m = ConceptCount::new(m)?;
    Ok(format!(
        "Describe in {m} phrases separated by # -- how the {} looks like",
        category.name()
    ))
}

fn normalize_phrase(fragment: &str) -> &str {
    fragment.trim().trim_end_matches(['.', ';']).trim_end()
}

/// Splits an LLM response on `#` into exactly `m` phrases.
///
/// Empty fragments are ignored. Extra fragments are dropped (and kept in
/// `discarded_fragments`); too few is an error.
pub fn parse_concepts(raw: &str, m: u32, category: &CategorySpec) -> Result<ConceptSet> {
    let count = ConceptCount::new(m)?;
    let prompt = build_concept_prompt(category, m)?;
    let mut fragments: Vec<String> = raw
        .split('#')
        .map(normalize_phrase)
        .filter(|f| !f.is_empty())
        .map(str::to_string)
        .collect();

    let want = count.as_usize();
    if fragments.len() < want {
        return Err(Error::MalformedResponse {
            raw: raw.to_string(),
            expected: want,
            found: fragments.len(),
        });
    }
    let discarded = fragments.split_off(want);
    if !discarded.is_empty() {
        log::warn!(
            "LLM returned {} phrases for {:?} with m = {m}; keeping the first {m}",
            want + discarded.len(),
            category.name()
        );
    }

    Ok(ConceptSet {
        category: category.clone(),
        m: count,
        phrases: fragments,
        raw_response: raw.to_string(),
        prompt_fingerprint: fingerprint(&[&prompt]),
        discarded_fragments: discarded,
        provenance: None,
    })
}

pub fn make_meta_questions(concepts: &ConceptSet) -> Vec<MetaQuestion> {
    QuestionTemplates::default().make_meta_questions(concepts)
}

pub fn make_baseline_question(category: &CategorySpec) -> String {
    QuestionTemplates::default().baseline_question(category)
}

/// Baseline question for a bare category name.
pub fn baseline_question_for(name: &str) -> Result<String> {
    let category = CategorySpec::new(name, "", DEFAULT_SUBJECT_NOUN)?;
    Ok(make_baseline_question(&category))
}

/// On-disk collection of concept sets, one per category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptStore {
    pub schema_version: String,
    pub m: ConceptCount,
    pub concept_sets: Vec<ConceptSet>,
}

impl ConceptStore {
    pub fn new(m: ConceptCount, concept_sets: Vec<ConceptSet>) -> Result<Self> {
        let store = Self {
            schema_version: crate::schema::schema_version(),
            m,
            concept_sets,
        };
        store.validate()?;
        Ok(store)
    }

    pub fn validate(&self) -> Result<()> {
        crate::schema::check(&self.schema_version, "concept store")?;
        let mut seen = std::collections::HashSet::new();
        for set in &self.concept_sets {
            set.validate()?;
            if set.m != self.m {
                return Err(Error::InvalidParameter(format!(
                    "concept set for {:?} has m = {} in a store with m = {}",
                    set.category.name(),
                    set.m,
                    self.m
                )));
            }
            if !seen.insert(set.category.name()) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate concept set for {:?}",
                    set.category.name()
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let version: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        let version = version
            .get("schema_version")
            .and_then(serde_json::Value::as_str)
            .unwrap_or("");
        crate::schema::check(version, &path.display().to_string())?;
        let store: ConceptStore =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        store.validate()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Concept sets keyed by category name.
    pub fn to_map(&self) -> BTreeMap<String, ConceptSet> {
        self.concept_sets
            .iter()
            .map(|s| (s.category.name().to_string(), s.clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bird(name: &str) -> CategorySpec {
        CategorySpec::new(name, "cub", "bird").unwrap()
    }

    #[test]
    fn concept_prompt_matches_template() {
        assert_eq!(
            build_concept_prompt(&bird("cardinal"), 3).unwrap(),
            "Describe in 3 phrases separated by # -- how the cardinal looks like"
        );
        assert_eq!(
            build_concept_prompt(&bird("cardinal"), 1).unwrap(),
            "Describe in 1 phrases separated by # -- how the cardinal looks like"
        );
        let p = build_concept_prompt(&bird("pied kingfisher"), 5).unwrap();
        assert!(p.contains("5 phrases") && p.contains("pied kingfisher"));
    }

    #[test]
    fn concept_prompt_rejects_even_or_zero_m() {
        for m in [0, 2, 4] {
            assert!(matches!(
                build_concept_prompt(&bird("cardinal"), m),
                Err(Error::InvalidParameter(_))
            ));
        }
    }

    #[test]
    fn parses_cardinal_response() {
        let set = parse_concepts(
            "Bright red#Long Pointed Beak#Black Eyes",
            3,
            &bird("cardinal"),
        )
        .unwrap();
        assert_eq!(
            set.phrases,
            ["Bright red", "Long Pointed Beak", "Black Eyes"]
        );
        assert_eq!(set.raw_response, "Bright red#Long Pointed Beak#Black Eyes");
        assert!(set.discarded_fragments.is_empty());
    }

    #[test]
    fn too_few_fragments_is_malformed() {
        let err = parse_concepts("small##white belly", 3, &bird("x")).unwrap_err();
        match err {
            Error::MalformedResponse {
                raw,
                expected,
                found,
            } => {
                assert_eq!(raw, "small##white belly");
                assert_eq!((expected, found), (3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn extra_fragments_are_truncated() {
        let set = parse_concepts(" A # B # C # D ", 3, &bird("x")).unwrap();
        assert_eq!(set.phrases, ["A", "B", "C"]);
        assert_eq!(set.discarded_fragments, ["D"]);
        assert_eq!(set.raw_response, " A # B # C # D ");
    }

    #[test]
    fn trailing_punctuation_is_stripped_but_case_kept() {
        let set = parse_concepts("Red crest.#black mask;# Short Beak. ", 3, &bird("x")).unwrap();
        assert_eq!(set.phrases, ["Red crest", "black mask", "Short Beak"]);
    }

    #[test]
    fn meta_questions_follow_phrase_order() {
        let set = parse_concepts(
            "Bright red#Long Pointed Beak#Black Eyes",
            3,
            &bird("cardinal"),
        )
        .unwrap();
        let qs: Vec<_> = make_meta_questions(&set)
            .into_iter()
            .map(|q| q.text)
            .collect();
        assert_eq!(
            qs,
            [
                "Does the bird in the image have Bright red?",
                "Does the bird in the image have Long Pointed Beak?",
                "Does the bird in the image have Black Eyes?",
            ]
        );
    }

    #[test]
    fn meta_questions_single_and_non_bird() {
        let set = ConceptSet::from_phrases(bird("grebe"), vec!["long neck".into()]).unwrap();
        let qs = make_meta_questions(&set);
        assert_eq!(qs.len(), 1);
        assert!(qs[0].text.contains("long neck"));

        let texture = CategorySpec::new("banded", "dtd", "texture").unwrap();
        let set = ConceptSet::from_phrases(texture, vec!["streaked".into()]).unwrap();
        assert_eq!(
            make_meta_questions(&set)[0].text,
            "Does the texture in the image have streaked?"
        );
    }

    #[test]
    fn baseline_questions() {
        assert_eq!(
            make_baseline_question(&bird("cardinal")),
            "Is there a cardinal?"
        );
        assert_eq!(
            make_baseline_question(&bird("western grebe")),
            "Is there a western grebe?"
        );
        assert!(matches!(
            baseline_question_for(""),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            baseline_question_for("  "),
            Err(Error::InvalidParameter(_))
        ));
        let alt = QuestionTemplates {
            baseline_question: BASELINE_QUESTION_TEMPLATE_THIS.into(),
            ..Default::default()
        };
        assert_eq!(
            alt.baseline_question(&bird("cardinal")),
            "Is this a cardinal?"
        );
    }

    #[test]
    fn category_spec_rejects_empty_fields() {
        assert!(CategorySpec::new("", "d", "bird").is_err());
        assert!(CategorySpec::new("x", "d", " ").is_err());
        let json = r#"{"name":"  ","dataset_id":"cub","subject_noun":"bird"}"#;
        assert!(serde_json::from_str::<CategorySpec>(json).is_err());
        let json = r#"{"name":"cardinal"}"#;
        let c: CategorySpec = serde_json::from_str(json).unwrap();
        assert_eq!(c.subject_noun(), DEFAULT_SUBJECT_NOUN);
    }

    #[test]
    fn store_rejects_mixed_m_and_duplicates() {
        let a = ConceptSet::from_phrases(bird("a"), vec!["x".into()]).unwrap();
        let b =
            ConceptSet::from_phrases(bird("b"), vec!["x".into(), "y".into(), "z".into()]).unwrap();
        let m1 = ConceptCount::new(1).unwrap();
        assert!(ConceptStore::new(m1, vec![a.clone(), b]).is_err());
        assert!(ConceptStore::new(m1, vec![a.clone(), a.clone()]).is_err());

        let store = ConceptStore::new(m1, vec![a]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("store.json");
        store.save(&path).unwrap();
        assert_eq!(ConceptStore::load(&path).unwrap(), store);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"1.0\"", "\"9.0\"");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            ConceptStore::load(&path),
            Err(Error::SchemaVersion { .. })
        ));
    }

    #[test]
    fn matcher_recovers_slots() {
        let matcher = QuestionTemplates::default().matcher();
        assert_eq!(
            matcher.parse("Does the bird in the image have long neck?"),
            Some(ParsedQuestion::Concept {
                subject: Some("bird".into()),
                concept: "long neck".into()
            })
        );
        assert_eq!(
            matcher.parse("Is there a western grebe?"),
            Some(ParsedQuestion::Category("western grebe".into()))
        );
        assert_eq!(matcher.parse("What colour is it?"), None);
    }

    fn phrase() -> impl Strategy<Value = String> {
        "[A-Za-z][A-Za-z ,'-]{0,20}[A-Za-z]"
    }

    proptest! {
        #[test]
        fn join_then_parse_round_trips(
            phrases in prop::collection::vec(phrase(), 1..=7usize)
                .prop_filter("odd length", |v| v.len() % 2 == 1)
        ) {
            let raw = phrases.join("#");
            let set = parse_concepts(&raw, phrases.len() as u32, &bird("x")).unwrap();
            prop_assert_eq!(&set.phrases, &phrases);
            prop_assert_eq!(set.raw_response, raw);
        }

        #[test]
        fn question_i_embeds_phrase_i(
            phrases in prop::collection::vec(phrase(), 1..=7usize)
                .prop_filter("odd length", |v| v.len() % 2 == 1)
        ) {
            let set = ConceptSet::from_phrases(bird("x"), phrases.clone()).unwrap();
            let qs = make_meta_questions(&set);
            prop_assert_eq!(qs.len(), phrases.len());
            for (i, q) in qs.iter().enumerate() {
                prop_assert_eq!(q.concept_index, i);
                prop_assert!(q.text.contains(&phrases[i]));
            }
        }

        #[test]
        fn concept_prompt_is_injective(
            a in "[a-z ]{1,12}", b in "[a-z ]{1,12}",
            ma in (0u32..5).prop_map(|k| 2 * k + 1), mb in (0u32..5).prop_map(|k| 2 * k + 1)
        ) {
            let (ca, cb) = match (CategorySpec::new(a, "", "bird"), CategorySpec::new(b, "", "bird")) {
                (Ok(ca), Ok(cb)) => (ca, cb),
                _ => return Ok(()),
            };
            let same = ca.name() == cb.name() && ma == mb;
            let pa = build_concept_prompt(&ca, ma).unwrap();
            let pb = build_concept_prompt(&cb, mb).unwrap();
            prop_assert_eq!(pa == pb, same);
        }
    }
}
