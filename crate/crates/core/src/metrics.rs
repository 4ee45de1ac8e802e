//! Accuracy, FP/FN, attribute accuracy, m-sweep deltas, and concept diversity.
//!
//! Percentages are kept exact internally and reported with two decimals.
//! Skipped instances never enter a denominator.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backends::Answer;
use crate::concepts::ConceptSet;
use crate::dataset::Polarity;
use crate::error::{Error, Result};
use crate::pipeline::InstanceOutcome;

/// Rounds a percentage to the two decimals used in reports.
pub fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

pub fn format_percent(x: f64) -> String {
    format!("{:.2}", round2(x))
}

fn percent(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        100.0 * num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub category: String,
    /// Classified instances; skipped ones are counted in `n_skipped` only.
    pub n_instances: usize,
    pub n_correct: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub n_skipped: usize,
    /// Exact percentage; zero when nothing was classified.
    pub accuracy: f64,
}

impl CategoryStats {
    fn new(category: &str) -> Self {
        Self {
            category: category.to_string(),
            ..Default::default()
        }
    }

    fn add(&mut self, outcome: &InstanceOutcome) {
        match outcome.verdict() {
            None => self.n_skipped += 1,
            Some(v) => {
                self.n_instances += 1;
                match (v.correct, v.instance.polarity) {
                    (true, _) => self.n_correct += 1,
                    (false, Polarity::Negative) => self.false_positives += 1,
                    (false, Polarity::Positive) => self.false_negatives += 1,
                }
            }
        }
        self.accuracy = percent(self.n_correct, self.n_instances);
    }

    /// Accuracy rounded to two decimals.
    pub fn reported_accuracy(&self) -> f64 {
        round2(self.accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub per_category: BTreeMap<String, CategoryStats>,
    pub overall: CategoryStats,
}

pub const OVERALL: &str = "(overall)";

pub fn compute_category_stats(outcomes: &[InstanceOutcome]) -> Result<CategoryReport> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("no verdicts"));
    }
    let mut per_category: BTreeMap<String, CategoryStats> = BTreeMap::new();
    let mut overall = CategoryStats::new(OVERALL);
    for outcome in outcomes {
        let name = outcome.instance().target.name();
        per_category
            .entry(name.to_string())
            .or_insert_with(|| CategoryStats::new(name))
            .add(outcome);
        overall.add(outcome);
    }
    Ok(CategoryReport {
        per_category,
        overall,
    })
}

/// Which instances an attribute question is scored on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeScope {
    /// A "yes" on a positive instance counts as correct.
    #[default]
    PositivesOnly,
    /// Additionally a "no" on a negative instance counts as correct.
    AllInstances,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeStats {
    pub category: String,
    pub concept_phrase: String,
    pub concept_index: usize,
    pub n_positive_instances: usize,
    pub n_yes_on_positives: usize,
    pub n_negative_instances: usize,
    pub n_no_on_negatives: usize,
    pub scope: AttributeScope,
    pub attribute_accuracy: f64,
}

#[derive(Default)]
struct AttributeTally {
    pos: usize,
    yes_pos: usize,
    neg: usize,
    no_neg: usize,
}

pub fn compute_attribute_stats(
    outcomes: &[InstanceOutcome],
    concept_map: &BTreeMap<String, ConceptSet>,
    scope: AttributeScope,
) -> Result<Vec<AttributeStats>> {
    let verdicts: Vec<_> = outcomes
        .iter()
        .filter_map(InstanceOutcome::verdict)
        .collect();
    if verdicts.is_empty() {
        return Err(Error::EmptyInput("no classified verdicts"));
    }
    if verdicts.iter().any(|v| v.is_baseline()) {
        return Err(Error::BaselineVerdicts);
    }

    let mut tallies: BTreeMap<(String, usize), AttributeTally> = BTreeMap::new();
    for v in &verdicts {
        let name = v.instance.target.name();
        let set = concept_map
            .get(name)
            .ok_or_else(|| Error::MissingConcepts(vec![name.to_string()]))?;
        if v.concept_fingerprint.as_deref() != Some(set.fingerprint().as_str()) {
            return Err(Error::InvalidParameter(format!(
                "verdicts for {name:?} were produced with a different concept set"
            )));
        }
        for (i, answer) in v.answers.iter().enumerate() {
            let t = tallies.entry((name.to_string(), i)).or_default();
            match v.instance.polarity {
                Polarity::Positive => {
                    t.pos += 1;
                    t.yes_pos += usize::from(answer.normalized == Answer::Yes);
                }
                Polarity::Negative => {
                    t.neg += 1;
                    t.no_neg += usize::from(answer.normalized == Answer::No);
                }
            }
        }
    }

    Ok(tallies
        .into_iter()
        .filter(|(_, t)| scope == AttributeScope::AllInstances || t.pos > 0)
        .map(|((category, i), t)| {
            let attribute_accuracy = match scope {
                AttributeScope::PositivesOnly => percent(t.yes_pos, t.pos),
                AttributeScope::AllInstances => percent(t.yes_pos + t.no_neg, t.pos + t.neg),
            };
            AttributeStats {
                concept_phrase: concept_map[&category].phrases[i].clone(),
                category,
                concept_index: i,
                n_positive_instances: t.pos,
                n_yes_on_positives: t.yes_pos,
                n_negative_instances: t.neg,
                n_no_on_negatives: t.no_neg,
                scope,
                attribute_accuracy,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryDelta {
    pub category: String,
    pub accuracy_a: f64,
    pub accuracy_b: f64,
    /// Difference of the two reported (two-decimal) accuracies.
    pub accuracy_delta: f64,
    pub fp_a: usize,
    pub fp_b: usize,
    pub fp_delta: i64,
    pub fn_a: usize,
    pub fn_b: usize,
    pub fn_delta: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepDelta {
    pub per_category: Vec<CategoryDelta>,
    pub improved: usize,
    pub worsened: usize,
    pub unchanged: usize,
}

/// Per-category change from run `a` to run `b` (for example m = 1 to m = 3).
pub fn m_sweep_delta(a: &CategoryReport, b: &CategoryReport) -> Result<SweepDelta> {
    let keys_a: BTreeSet<&String> = a.per_category.keys().collect();
    let keys_b: BTreeSet<&String> = b.per_category.keys().collect();
    if keys_a != keys_b {
        return Err(Error::CategoryMismatch {
            only_first: keys_a.difference(&keys_b).map(|s| s.to_string()).collect(),
            only_second: keys_b.difference(&keys_a).map(|s| s.to_string()).collect(),
        });
    }
    let mut out = SweepDelta {
        per_category: Vec::with_capacity(keys_a.len()),
        improved: 0,
        worsened: 0,
        unchanged: 0,
    };
    for (name, sa) in &a.per_category {
        let sb = &b.per_category[name];
        let (acc_a, acc_b) = (sa.reported_accuracy(), sb.reported_accuracy());
        let delta = round2(acc_b - acc_a);
        match delta.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => out.improved += 1,
            Some(std::cmp::Ordering::Less) => out.worsened += 1,
            _ => out.unchanged += 1,
        }
        out.per_category.push(CategoryDelta {
            category: name.clone(),
            accuracy_a: acc_a,
            accuracy_b: acc_b,
            accuracy_delta: delta,
            fp_a: sa.false_positives,
            fp_b: sb.false_positives,
            fp_delta: sb.false_positives as i64 - sa.false_positives as i64,
            fn_a: sa.false_negatives,
            fn_b: sb.false_negatives,
            fn_delta: sb.false_negatives as i64 - sa.false_negatives as i64,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AttributeType {
    Color,
    Shape,
    Size,
    #[serde(rename = "Texture/Pattern")]
    TexturePattern,
    #[serde(rename = "Body Part")]
    BodyPart,
}

impl AttributeType {
    pub const ALL: [AttributeType; 5] = [
        AttributeType::Color,
        AttributeType::Shape,
        AttributeType::Size,
        AttributeType::TexturePattern,
        AttributeType::BodyPart,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AttributeType::Color => "Color",
            AttributeType::Shape => "Shape",
            AttributeType::Size => "Size",
            AttributeType::TexturePattern => "Texture/Pattern",
            AttributeType::BodyPart => "Body Part",
        }
    }
}

impl fmt::Display for AttributeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Keyword lists per attribute type. Keywords may span several words.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Lexicon(pub BTreeMap<AttributeType, Vec<String>>);

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.json");

impl Default for Lexicon {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl Lexicon {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lexicon: Lexicon =
            serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        lexicon.validate()?;
        Ok(lexicon)
    }

    pub fn validate(&self) -> Result<()> {
        let missing: Vec<&str> = AttributeType::ALL
            .iter()
            .filter(|t| !self.0.contains_key(t))
            .map(|t| t.label())
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "lexicon lacks types: {}",
                missing.join(", ")
            )))
        }
    }

    pub fn matched_types(&self, phrase: &str) -> BTreeSet<AttributeType> {
        let tokens = tokenize(phrase);
        self.0
            .iter()
            .filter(|(_, keywords)| keywords.iter().any(|k| contains_keyword(&tokens, k)))
            .map(|(t, _)| *t)
            .collect()
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn token_matches(token: &str, keyword: &str) -> bool {
    token == keyword
        || token
            .strip_prefix(keyword)
            .is_some_and(|rest| rest == "s" || rest == "es")
}

fn contains_keyword(tokens: &[String], keyword: &str) -> bool {
    let parts = tokenize(keyword);
    if parts.is_empty() || parts.len() > tokens.len() {
        return false;
    }
    tokens.windows(parts.len()).any(|w| {
        let last = parts.len() - 1;
        w.iter().zip(&parts).enumerate().all(|(i, (tok, kw))| {
            if i == last {
                token_matches(tok, kw)
            } else {
                tok == kw
            }
        })
    })
}

/// Label for a phrase's attribute-type combination: types joined with `+`
/// in canonical order, `Multiple` for more than two, `Other` for none.
pub fn tag_attribute_types(phrase: &str, lexicon: &Lexicon) -> String {
    let types = lexicon.matched_types(phrase);
    match types.len() {
        0 => "Other".to_string(),
        1 | 2 => types
            .iter()
            .map(|t| t.label())
            .collect::<Vec<_>>()
            .join("+"),
        _ => "Multiple".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhraseFrequency {
    pub phrase: String,
    /// Number of categories whose concept set contains the phrase.
    pub categories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversityReport {
    pub total_phrases: usize,
    pub unique_phrases: usize,
    pub unique_fraction: f64,
    /// Most shared first; ties broken alphabetically.
    pub frequency: Vec<PhraseFrequency>,
    pub attribute_types: BTreeMap<String, usize>,
}

impl DiversityReport {
    pub fn top(&self, k: usize) -> &[PhraseFrequency] {
        &self.frequency[..k.min(self.frequency.len())]
    }
}

fn phrase_key(phrase: &str) -> String {
    phrase.trim().to_lowercase()
}

/// Phrases are compared case-insensitively after trimming.
pub fn diversity_report(
    concept_map: &BTreeMap<String, ConceptSet>,
    lexicon: &Lexicon,
) -> Result<DiversityReport> {
    if concept_map.is_empty() {
        return Err(Error::EmptyInput("no concept sets"));
    }
    let mut display: HashMap<String, String> = HashMap::new();
    let mut shared: HashMap<String, BTreeSet<&str>> = HashMap::new();
    let mut attribute_types: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0;
    for (category, set) in concept_map {
        for phrase in &set.phrases {
            total += 1;
            let key = phrase_key(phrase);
            display
                .entry(key.clone())
                .or_insert_with(|| phrase.trim().to_string());
            shared.entry(key).or_default().insert(category);
            *attribute_types
                .entry(tag_attribute_types(phrase, lexicon))
                .or_default() += 1;
        }
    }
    let mut frequency: Vec<PhraseFrequency> = shared
        .into_iter()
        .map(|(key, cats)| PhraseFrequency {
            phrase: display.remove(&key).expect("display form recorded"),
            categories: cats.len(),
        })
        .collect();
    frequency.sort_by(|a, b| {
        b.categories
            .cmp(&a.categories)
            .then_with(|| a.phrase.cmp(&b.phrase))
    });
    let unique = frequency.len();
    Ok(DiversityReport {
        total_phrases: total,
        unique_phrases: unique,
        unique_fraction: unique as f64 / total as f64,
        frequency,
        attribute_types,
    })
}

#[derive(Serialize)]
struct CategoryRow<'a> {
    category: &'a str,
    n_instances: usize,
    n_correct: usize,
    false_positives: usize,
    false_negatives: usize,
    n_skipped: usize,
    accuracy: String,
}

impl<'a> From<&'a CategoryStats> for CategoryRow<'a> {
    fn from(s: &'a CategoryStats) -> Self {
        Self {
            category: &s.category,
            n_instances: s.n_instances,
            n_correct: s.n_correct,
            false_positives: s.false_positives,
            false_negatives: s.false_negatives,
            n_skipped: s.n_skipped,
            accuracy: format_percent(s.accuracy),
        }
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(Error::from)
}

/// One row per category followed by the overall row.
pub fn write_category_stats_csv(path: impl AsRef<Path>, report: &CategoryReport) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    for s in report.per_category.values() {
        w.serialize(CategoryRow::from(s))?;
    }
    w.serialize(CategoryRow::from(&report.overall))?;
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_attribute_stats_csv(path: impl AsRef<Path>, stats: &[AttributeStats]) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        category: &'a str,
        concept_index: usize,
        concept_phrase: &'a str,
        n_positive_instances: usize,
        n_yes_on_positives: usize,
        n_negative_instances: usize,
        n_no_on_negatives: usize,
        scope: AttributeScope,
        attribute_accuracy: String,
    }
    let mut w = csv_writer(path.as_ref())?;
    for s in stats {
        w.serialize(Row {
            category: &s.category,
            concept_index: s.concept_index,
            concept_phrase: &s.concept_phrase,
            n_positive_instances: s.n_positive_instances,
            n_yes_on_positives: s.n_yes_on_positives,
            n_negative_instances: s.n_negative_instances,
            n_no_on_negatives: s.n_no_on_negatives,
            scope: s.scope,
            attribute_accuracy: format_percent(s.attribute_accuracy),
        })?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_sweep_csv(path: impl AsRef<Path>, sweep: &SweepDelta) -> Result<()> {
    #[derive(Serialize)]
    struct Row<'a> {
        category: &'a str,
        accuracy_a: String,
        accuracy_b: String,
        accuracy_delta: String,
        fp_a: usize,
        fp_b: usize,
        fp_delta: i64,
        fn_a: usize,
        fn_b: usize,
        fn_delta: i64,
    }
    let mut w = csv_writer(path.as_ref())?;
    for d in &sweep.per_category {
        w.serialize(Row {
            category: &d.category,
            accuracy_a: format_percent(d.accuracy_a),
            accuracy_b: format_percent(d.accuracy_b),
            accuracy_delta: format_percent(d.accuracy_delta),
            fp_a: d.fp_a,
            fp_b: d.fp_b,
            fp_delta: d.fp_delta,
            fn_a: d.fn_a,
            fn_b: d.fn_b,
            fn_delta: d.fn_delta,
        })?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_frequency_csv(path: impl AsRef<Path>, rows: &[PhraseFrequency]) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn write_attribute_types_csv(path: impl AsRef<Path>, report: &DiversityReport) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    w.write_record(["label", "count", "percent"])?;
    for (label, count) in &report.attribute_types {
        w.write_record([
            label.clone(),
            count.to_string(),
            format_percent(percent(*count, report.total_phrases)),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::AnswerRecord;
    use crate::concepts::CategorySpec;
    use crate::dataset::EvalInstance;
    use crate::pipeline::{SkippedInstance, Verdict};
    use proptest::prelude::*;

    fn cat(name: &str) -> CategorySpec {
        CategorySpec::new(name, "cub", "bird").unwrap()
    }

    fn set(name: &str, phrases: &[&str]) -> ConceptSet {
        ConceptSet::from_phrases(cat(name), phrases.iter().map(|s| s.to_string()).collect())
            .unwrap()
    }

    fn verdict(set: &ConceptSet, positive: bool, answers: &[&str]) -> InstanceOutcome {
        let name = set.category.name();
        let source = if positive {
            name.to_string()
        } else {
            format!("not {name}")
        };
        let instance = EvalInstance::new("img", set.category.clone(), source);
        let answers = answers
            .iter()
            .map(|a| AnswerRecord::new("img", "q", *a, "test"))
            .collect();
        InstanceOutcome::Classified(
            Verdict::from_answers(instance, set.m.get(), Some(set.fingerprint()), answers).unwrap(),
        )
    }

    /// A single-question verdict that is correct or not as requested.
    fn outcome(name: &str, positive: bool, correct: bool) -> InstanceOutcome {
        let s = set(name, &["x"]);
        let say_yes = positive == correct;
        verdict(&s, positive, &[if say_yes { "yes" } else { "no" }])
    }

    #[test]
    fn reconstructs_two_decimal_accuracy() {
        // 91 of 150 correct: 100 * 91 / 150 = 60.666...
        let mut outcomes = Vec::new();
        for i in 0..150 {
            outcomes.push(outcome("eastern towhee", i % 2 == 0, i < 91));
        }
        let report = compute_category_stats(&outcomes).unwrap();
        let s = &report.per_category["eastern towhee"];
        assert_eq!(s.n_correct, 91);
        assert_eq!(format_percent(s.accuracy), "60.67");
        assert_eq!(s.reported_accuracy(), 60.67);
    }

    #[test]
    fn all_correct_and_single_false_positive() {
        let outcomes: Vec<_> = (0..10).map(|i| outcome("a", i % 2 == 0, true)).collect();
        let r = compute_category_stats(&outcomes).unwrap();
        assert_eq!(r.overall.accuracy, 100.0);
        assert_eq!(
            (r.overall.false_positives, r.overall.false_negatives),
            (0, 0)
        );

        let r = compute_category_stats(&[outcome("a", false, false)]).unwrap();
        assert_eq!(
            (r.overall.false_positives, r.overall.false_negatives),
            (1, 0)
        );
        assert_eq!(r.overall.accuracy, 0.0);

        assert!(matches!(
            compute_category_stats(&[]),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn skipped_instances_leave_denominators() {
        let skipped = InstanceOutcome::Skipped(SkippedInstance {
            instance: EvalInstance::new("img", cat("a"), "a"),
            m: 1,
            error: "timeout".into(),
        });
        let r = compute_category_stats(&[outcome("a", true, true), skipped]).unwrap();
        let s = &r.per_category["a"];
        assert_eq!((s.n_instances, s.n_skipped, s.accuracy), (1, 1, 100.0));
    }

    #[test]
    fn attribute_stats_positive_only() {
        let s = set("grebe", &["long neck", "red eyes", "yellow bill"]);
        let outcomes = vec![
            verdict(&s, true, &["yes", "yes", "no"]),
            verdict(&s, true, &["yes", "no", "no"]),
            verdict(&s, false, &["yes", "yes", "yes"]),
        ];
        let map = BTreeMap::from([("grebe".to_string(), s.clone())]);
        let stats =
            compute_attribute_stats(&outcomes, &map, AttributeScope::PositivesOnly).unwrap();
        let acc: Vec<f64> = stats.iter().map(|a| a.attribute_accuracy).collect();
        assert_eq!(acc, [100.0, 50.0, 0.0]);
        assert_eq!(stats[0].concept_phrase, "long neck");
        assert_eq!(stats[0].n_positive_instances, 2);

        let all = compute_attribute_stats(&outcomes, &map, AttributeScope::AllInstances).unwrap();
        // yellow bill: no on both positives (0 yes), no "no" on the negative.
        assert_eq!(all[2].attribute_accuracy, 0.0);
        // long neck: 2 yes on positives, negative answered yes: 2 / 3.
        assert!((all[0].attribute_accuracy - 200.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn attribute_stats_reject_baseline_verdicts() {
        let instance = EvalInstance::new("img", cat("a"), "a");
        let v = Verdict::from_answers(
            instance,
            0,
            None,
            vec![AnswerRecord::new("img", "Is there a a?", "yes", "t")],
        )
        .unwrap();
        let err = compute_attribute_stats(
            &[InstanceOutcome::Classified(v)],
            &BTreeMap::new(),
            AttributeScope::PositivesOnly,
        )
        .unwrap_err();
        assert!(matches!(err, Error::BaselineVerdicts));
    }

    fn report_with(entries: &[(&str, usize, usize)]) -> CategoryReport {
        // (category, correct, total) with every error a false negative.
        let mut outcomes = Vec::new();
        for (name, correct, total) in entries {
            for i in 0..*total {
                outcomes.push(outcome(name, true, i < *correct));
            }
        }
        compute_category_stats(&outcomes).unwrap()
    }

    #[test]
    fn sweep_deltas() {
        let a = report_with(&[
            ("eastern towhee", 91, 150),
            ("vermilion flycatcher", 146, 150),
        ]);
        let b = report_with(&[
            ("eastern towhee", 123, 150),
            ("vermilion flycatcher", 76, 150),
        ]);
        assert_eq!(
            a.per_category["vermilion flycatcher"].reported_accuracy(),
            97.33
        );
        assert_eq!(
            b.per_category["vermilion flycatcher"].reported_accuracy(),
            50.67
        );
        assert_eq!(b.per_category["eastern towhee"].reported_accuracy(), 82.0);

        let d = m_sweep_delta(&a, &b).unwrap();
        assert_eq!(d.per_category[0].accuracy_delta, 21.33);
        assert_eq!(d.per_category[1].accuracy_delta, -46.66);
        assert_eq!((d.improved, d.worsened, d.unchanged), (1, 1, 0));
        assert_eq!(d.per_category[1].fn_delta, 70);

        let same = m_sweep_delta(&a, &a).unwrap();
        assert!(same
            .per_category
            .iter()
            .all(|c| c.accuracy_delta == 0.0 && c.fp_delta == 0 && c.fn_delta == 0));
        assert_eq!(same.unchanged, 2);

        let c = report_with(&[("eastern towhee", 1, 2)]);
        match m_sweep_delta(&a, &c) {
            Err(Error::CategoryMismatch {
                only_first,
                only_second,
            }) => {
                assert_eq!(only_first, ["vermilion flycatcher"]);
                assert!(only_second.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn attribute_type_labels() {
        let lex = Lexicon::default();
        assert_eq!(
            tag_attribute_types("yellow breast", &lex),
            "Color+Body Part"
        );
        assert_eq!(tag_attribute_types("long tail", &lex), "Size+Body Part");
        assert_eq!(tag_attribute_types("brown streaked back", &lex), "Multiple");
        assert_eq!(tag_attribute_types("yellowish-olive", &lex), "Color");
        assert_eq!(tag_attribute_types("blue and white", &lex), "Color");
        assert_eq!(
            tag_attribute_types("white spots on wings", &lex),
            "Multiple"
        );
        assert_eq!(tag_attribute_types("sings at dawn", &lex), "Other");
        assert_eq!(tag_attribute_types("Black Eyes", &lex), "Color+Body Part");
        assert_eq!(tag_attribute_types("red eye ring", &lex), "Color+Body Part");
    }

    #[test]
    fn diversity_counts() {
        let map = BTreeMap::from([
            (
                "a".to_string(),
                set("a", &["small", "red crown", "short bill"]),
            ),
            (
                "b".to_string(),
                set("b", &["Small ", "blue back", "long tail"]),
            ),
            (
                "c".to_string(),
                set("c", &["tiny", "green wings", "pointed beak"]),
            ),
        ]);
        let r = diversity_report(&map, &Lexicon::default()).unwrap();
        assert_eq!(r.total_phrases, 9);
        assert_eq!(r.unique_phrases, 8);
        assert_eq!(
            r.frequency[0],
            PhraseFrequency {
                phrase: "small".into(),
                categories: 2
            }
        );
        assert_eq!(r.attribute_types.values().sum::<usize>(), 9);
        assert_eq!(r.top(2).len(), 2);

        let distinct = BTreeMap::from([
            ("a".to_string(), set("a", &["p1", "p2", "p3"])),
            ("b".to_string(), set("b", &["p4", "p5", "p6"])),
            ("c".to_string(), set("c", &["p7", "p8", "p9"])),
        ]);
        let r = diversity_report(&distinct, &Lexicon::default()).unwrap();
        assert_eq!((r.unique_phrases, r.total_phrases), (9, 9));
        assert_eq!(r.unique_fraction, 1.0);
    }

    #[test]
    fn lexicon_must_cover_all_types() {
        let mut lex = Lexicon::default();
        assert!(lex.validate().is_ok());
        lex.0.remove(&AttributeType::Shape);
        assert!(lex.validate().is_err());
    }

    proptest! {
        #[test]
        fn overall_is_instance_weighted_mean(
            rows in prop::collection::vec((0usize..4, any::<bool>(), any::<bool>()), 1..200)
        ) {
            let names = ["a", "b", "c", "d"];
            let outcomes: Vec<_> = rows
                .iter()
                .map(|(c, pos, ok)| outcome(names[*c], *pos, *ok))
                .collect();
            let r = compute_category_stats(&outcomes).unwrap();
            let weighted: f64 = r.per_category.values()
                .map(|s| s.accuracy * s.n_instances as f64)
                .sum::<f64>() / r.overall.n_instances as f64;
            prop_assert!((weighted - r.overall.accuracy).abs() < 1e-9);
            let incorrect = rows.iter().filter(|(_, _, ok)| !ok).count();
            prop_assert_eq!(r.overall.false_positives + r.overall.false_negatives, incorrect);

            let mut reversed = outcomes.clone();
            reversed.reverse();
            prop_assert_eq!(compute_category_stats(&reversed).unwrap(), r);
        }

        #[test]
        fn adding_keywords_never_removes_types(
            phrase in "[a-z]{2,8}( [a-z]{2,8}){0,3}",
            extra in "[a-z]{2,8}",
            which in 0usize..5
        ) {
            let lex = Lexicon::default();
            let before = lex.matched_types(&phrase);
            let mut bigger = lex.clone();
            bigger.0.get_mut(&AttributeType::ALL[which]).unwrap().push(extra);
            let after = bigger.matched_types(&phrase);
            prop_assert!(before.is_subset(&after));
            prop_assert_eq!(tag_attribute_types(&phrase, &lex), tag_attribute_types(&phrase, &lex));
        }
    }
}
