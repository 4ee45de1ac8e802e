//! End-to-end classification: meta-questions, VQA answers, majority vote.
//!
//! Each evaluation instance is classified by asking one question per concept
//! phrase of its target category (or the single baseline question when
//! `m = 0`) and declaring the category present when at least `(m + 1) / 2`
//! answers are "yes". Answers that are neither yes nor no count against
//! presence. Backend failures mark the instance as skipped instead of
//! guessing a verdict.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::{
    Answer, AnswerRecord, BackendError, CacheKey, CachedValue, LlmBackend, LlmBackendHandle,
    ResponseCache, VqaBackend, VqaBackendHandle,
};
use crate::concepts::{
    build_concept_prompt, parse_concepts, CategorySpec, ConceptCount, ConceptSet, MetaQuestion,
    Provenance, QuestionTemplates,
};
use crate::dataset::{expected_answer, EvalInstance, Polarity};
use crate::error::{Error, Result};
use crate::{derive_seed, schema};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// One fixed prompt template for every category.
    #[default]
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Concepts per category; 0 asks only the baseline question.
    pub m: u32,
    pub prompt_mode: PromptMode,
    /// Labeled training examples per category. Always 0.
    pub n: u32,
    pub seed: u64,
    pub max_in_flight: usize,
    pub cache_dir: Option<PathBuf>,
    /// Replaces each category's subject noun in meta-questions.
    pub subject_noun: Option<String>,
    pub templates: QuestionTemplates,
    pub llm: Option<LlmBackendHandle>,
    pub vqa: Option<VqaBackendHandle>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            m: 3,
            prompt_mode: PromptMode::Fixed,
            n: 0,
            seed: 0,
            max_in_flight: 4,
            cache_dir: None,
            subject_noun: None,
            templates: QuestionTemplates::default(),
            llm: None,
            vqa: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m != 0 {
            ConceptCount::new(self.m)?;
        }
        if self.n != 0 {
            return Err(Error::InvalidParameter(format!(
                "n must be 0 (zero-shot), got {}",
                self.n
            )));
        }
        if self.max_in_flight == 0 {
            return Err(Error::InvalidParameter(
                "max_in_flight must be at least 1".into(),
            ));
        }
        if let Some(noun) = &self.subject_noun {
            if noun.trim().is_empty() {
                return Err(Error::InvalidParameter(
                    "subject noun override is empty".into(),
                ));
            }
        }
        self.templates.validate()?;
        if let Some(vqa) = &self.vqa {
            vqa.validate()?;
        }
        Ok(())
    }

    pub fn concept_count(&self) -> Option<ConceptCount> {
        ConceptCount::new(self.m).ok()
    }
}

pub fn majority_threshold(m: u32) -> Result<u32> {
    Ok(ConceptCount::new(m)?.majority_threshold())
}

/// Present iff the number of `Yes` answers reaches the majority threshold.
pub fn aggregate(answers: &[Answer], m: u32) -> Result<bool> {
    let threshold = majority_threshold(m)?;
    if answers.len() != m as usize {
        return Err(Error::LengthMismatch {
            expected: m as usize,
            actual: answers.len(),
        });
    }
    let yes = answers.iter().filter(|a| a.is_yes()).count() as u32;
    Ok(yes >= threshold)
}

/// One classified instance together with the answers that justify it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub instance: EvalInstance,
    pub m: u32,
    pub concept_fingerprint: Option<String>,
    pub answers: Vec<AnswerRecord>,
    pub yes_count: u32,
    pub unparseable_count: u32,
    pub predicted_present: bool,
    pub correct: bool,
}

impl Verdict {
    pub fn from_answers(
        instance: EvalInstance,
        m: u32,
        concept_fingerprint: Option<String>,
        answers: Vec<AnswerRecord>,
    ) -> Result<Self> {
        let expected = if m == 0 { 1 } else { m as usize };
        if answers.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: answers.len(),
            });
        }
        let yes_count = count(&answers, Answer::Yes);
        let unparseable_count = count(&answers, Answer::Unparseable);
        let predicted_present = yes_count >= threshold_for(m)?;
        let correct = predicted_present == (instance.polarity == Polarity::Positive);
        Ok(Self {
            instance,
            m,
            concept_fingerprint,
            answers,
            yes_count,
            unparseable_count,
            predicted_present,
            correct,
        })
    }

    /// Recomputes derived fields and compares them with the stored ones.
    pub fn check(&self) -> Result<()> {
        let rebuilt = Verdict::from_answers(
            self.instance.clone(),
            self.m,
            self.concept_fingerprint.clone(),
            self.answers.clone(),
        )?;
        if rebuilt != *self || !self.instance.is_consistent() {
            return Err(Error::InvalidParameter(format!(
                "verdict for {} / {} violates its invariants",
                self.instance.image_ref,
                self.instance.target.name()
            )));
        }
        Ok(())
    }

    pub fn is_baseline(&self) -> bool {
        self.m == 0
    }
}

fn count(answers: &[AnswerRecord], which: Answer) -> u32 {
    answers.iter().filter(|a| a.normalized == which).count() as u32
}

fn threshold_for(m: u32) -> Result<u32> {
    if m == 0 {
        Ok(1)
    } else {
        majority_threshold(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedInstance {
    pub instance: EvalInstance,
    pub m: u32,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum InstanceOutcome {
    Classified(Verdict),
    Skipped(SkippedInstance),
}

impl InstanceOutcome {
    pub fn instance(&self) -> &EvalInstance {
        match self {
            InstanceOutcome::Classified(v) => &v.instance,
            InstanceOutcome::Skipped(s) => &s.instance,
        }
    }

    pub fn m(&self) -> u32 {
        match self {
            InstanceOutcome::Classified(v) => v.m,
            InstanceOutcome::Skipped(s) => s.m,
        }
    }

    pub fn verdict(&self) -> Option<&Verdict> {
        match self {
            InstanceOutcome::Classified(v) => Some(v),
            InstanceOutcome::Skipped(_) => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheSummary {
    pub hits: u64,
    pub misses: u64,
    pub corrupt: u64,
}

#[derive(Default)]
struct CacheCounters {
    hits: AtomicU64,
    misses: AtomicU64,
    corrupt: AtomicU64,
}

/// Asks the LLM for `m` concept phrases for one category.
///
/// The raw response is cached before parsing, so a malformed answer is not
/// re-requested on the next run; fix the fixture or clear the cache instead.
pub fn generate_concept_set(
    llm: &dyn LlmBackend,
    cache: Option<&ResponseCache>,
    category: &CategorySpec,
    m: u32,
) -> Result<ConceptSet> {
    let prompt = build_concept_prompt(category, m)?;
    let key = CacheKey::llm(&llm.fingerprint(), &prompt);
    let cached = match cache.map(|c| c.get_text(&key)) {
        Some(Ok(text)) => text,
        Some(Err(e)) => {
            log::warn!("ignoring cache entry: {e}");
            None
        }
        None => None,
    };
    let raw = match cached {
        Some(text) => text,
        None => {
            let text = llm.generate(&prompt)?;
            if let Some(cache) = cache {
                cache.put(key, CachedValue::Text { text: text.clone() })?;
            }
            text
        }
    };
    let mut set = parse_concepts(&raw, m, category)?;
    set.provenance = Some(Provenance {
        llm_fingerprint: llm.fingerprint(),
        llm_params: llm.params(),
    });
    Ok(set)
}

/// Runs [`generate_concept_set`] for each category, keeping per-category
/// failures instead of stopping at the first one.
pub fn generate_concepts(
    llm: &dyn LlmBackend,
    cache: Option<&ResponseCache>,
    categories: &[CategorySpec],
    m: u32,
) -> Result<Vec<(CategorySpec, Result<ConceptSet>)>> {
    ConceptCount::new(m)?;
    if categories.is_empty() {
        return Err(Error::EmptyInput("categories"));
    }
    Ok(categories
        .iter()
        .map(|c| (c.clone(), generate_concept_set(llm, cache, c, m)))
        .collect())
}

/// Configured VQA backend plus optional response cache.
pub struct Pipeline {
    config: RunConfig,
    vqa: Arc<dyn VqaBackend>,
    cache: Option<Arc<ResponseCache>>,
    counters: CacheCounters,
}

impl Pipeline {
    /// Opens the configured VQA backend and cache directory.
    pub fn open(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let handle = config
            .vqa
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter("no VQA backend configured".into()))?;
        let vqa = handle.open(&config.templates)?;
        let cache = match &config.cache_dir {
            Some(dir) => Some(Arc::new(ResponseCache::open(dir)?)),
            None => None,
        };
        Self::new(config, vqa, cache)
    }

    pub fn new(
        config: RunConfig,
        vqa: Arc<dyn VqaBackend>,
        cache: Option<Arc<ResponseCache>>,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            vqa,
            cache,
            counters: CacheCounters::default(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn cache_summary(&self) -> Option<CacheSummary> {
        self.cache.as_ref().map(|_| CacheSummary {
            hits: self.counters.hits.load(Ordering::Relaxed),
            misses: self.counters.misses.load(Ordering::Relaxed),
            corrupt: self.counters.corrupt.load(Ordering::Relaxed),
        })
    }

    /// Cache first; the backend is consulted only on a miss.
    fn ask(&self, image_ref: &str, question: &str) -> Result<AnswerRecord, BackendError> {
        let fingerprint = self.vqa.fingerprint();
        let key = CacheKey::vqa(&fingerprint, image_ref, question);
        if let Some(cache) = &self.cache {
            match cache.get_answer(&key) {
                Ok(Some(record)) => {
                    self.counters.hits.fetch_add(1, Ordering::Relaxed);
                    return Ok(record);
                }
                Ok(None) => {}
                Err(e) => {
                    log::warn!("ignoring cache entry: {e}");
                    self.counters.corrupt.fetch_add(1, Ordering::Relaxed);
                }
            }
            self.counters.misses.fetch_add(1, Ordering::Relaxed);
        }
        let record = self.vqa.answer(image_ref, question)?;
        if let Some(cache) = &self.cache {
            cache.put(key, CachedValue::Answer(record.clone()))?;
        }
        Ok(record)
    }

    pub fn questions_for(&self, concepts: &ConceptSet) -> Vec<MetaQuestion> {
        let mut questions = self.config.templates.make_meta_questions(concepts);
        if let Some(noun) = &self.config.subject_noun {
            for q in &mut questions {
                q.text = self
                    .config
                    .templates
                    .meta_question(noun, &concepts.phrases[q.concept_index]);
            }
        }
        questions
    }

    pub fn classify_instance(
        &self,
        instance: &EvalInstance,
        concepts: Option<&ConceptSet>,
    ) -> Result<InstanceOutcome> {
        let m = self.config.m;
        let (questions, fingerprint) = match (m, concepts) {
            (0, None) => (
                vec![self.config.templates.baseline_question(&instance.target)],
                None,
            ),
            (0, Some(_)) => {
                return Err(Error::InvalidParameter(
                    "baseline mode (m = 0) takes no concept set".into(),
                ))
            }
            (_, None) => {
                return Err(Error::MissingConcepts(vec![instance
                    .target
                    .name()
                    .to_string()]))
            }
            (_, Some(set)) => {
                if set.category.name() != instance.target.name() {
                    return Err(Error::InvalidParameter(format!(
                        "concept set for {:?} used on instance targeting {:?}",
                        set.category.name(),
                        instance.target.name()
                    )));
                }
                if set.m.get() != m {
                    return Err(Error::InvalidParameter(format!(
                        "concept set for {:?} has m = {} but the run uses m = {m}",
                        set.category.name(),
                        set.m
                    )));
                }
                let texts = self
                    .questions_for(set)
                    .into_iter()
                    .map(|q| q.text)
                    .collect();
                (texts, Some(set.fingerprint()))
            }
        };

        let mut answers = Vec::with_capacity(questions.len());
        for question in &questions {
            match self.ask(&instance.image_ref, question) {
                Ok(record) => answers.push(record),
                Err(e) => {
                    log::warn!(
                        "skipping {} / {}: {e}",
                        instance.image_ref,
                        instance.target.name()
                    );
                    return Ok(InstanceOutcome::Skipped(SkippedInstance {
                        instance: instance.clone(),
                        m,
                        error: e.to_string(),
                    }));
                }
            }
        }
        Verdict::from_answers(instance.clone(), m, fingerprint, answers)
            .map(InstanceOutcome::Classified)
    }

    fn preflight(
        &self,
        eval_set: &[EvalInstance],
        concept_map: &BTreeMap<String, ConceptSet>,
    ) -> Result<()> {
        if self.config.m == 0 {
            return Ok(());
        }
        let missing: BTreeSet<String> = eval_set
            .iter()
            .map(|i| i.target.name())
            .filter(|name| !concept_map.contains_key(*name))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingConcepts(missing.into_iter().collect()));
        }
        for set in concept_map.values() {
            set.validate()?;
            if set.m.get() != self.config.m {
                return Err(Error::InvalidParameter(format!(
                    "concept set for {:?} has m = {} but the run uses m = {}",
                    set.category.name(),
                    set.m,
                    self.config.m
                )));
            }
        }
        Ok(())
    }

    /// Classifies every instance, up to `max_in_flight` at a time. The result
    /// is in `eval_set` order whatever the completion order.
    pub fn run(
        &self,
        eval_set: &[EvalInstance],
        concept_map: &BTreeMap<String, ConceptSet>,
    ) -> Result<RunOutput> {
        self.preflight(eval_set, concept_map)?;
        let started_at = Utc::now();
        let clock = Instant::now();

        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<InstanceOutcome>>> = Mutex::new(vec![None; eval_set.len()]);
        let failure: Mutex<Option<Error>> = Mutex::new(None);
        let workers = self.config.max_in_flight.min(eval_set.len()).max(1);

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= eval_set.len() || failure.lock().expect("lock").is_some() {
                        break;
                    }
                    let instance = &eval_set[i];
                    let concepts = if self.config.m == 0 {
                        None
                    } else {
                        concept_map.get(instance.target.name())
                    };
                    match self.classify_instance(instance, concepts) {
                        Ok(outcome) => slots.lock().expect("lock")[i] = Some(outcome),
                        Err(e) => {
                            failure.lock().expect("lock").get_or_insert(e);
                            break;
                        }
                    }
                });
            }
        });

        if let Some(e) = failure.into_inner().expect("lock") {
            return Err(e);
        }
        let outcomes: Vec<InstanceOutcome> = slots
            .into_inner()
            .expect("lock")
            .into_iter()
            .map(|o| o.expect("every instance classified"))
            .collect();

        let classified = outcomes.iter().filter(|o| o.verdict().is_some()).count();
        let correct = outcomes
            .iter()
            .filter_map(InstanceOutcome::verdict)
            .filter(|v| v.correct)
            .count();
        let used: BTreeSet<&str> = eval_set.iter().map(|i| i.target.name()).collect();
        let concept_fingerprints = if self.config.m == 0 {
            BTreeMap::new()
        } else {
            used.iter()
                .filter_map(|c| {
                    concept_map
                        .get(*c)
                        .map(|s| (c.to_string(), s.fingerprint()))
                })
                .collect()
        };

        let manifest = RunManifest {
            schema_version: schema::schema_version(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at,
            wall_time_secs: clock.elapsed().as_secs_f64(),
            config: self.config.clone(),
            vqa_backend: self.vqa.fingerprint(),
            concept_fingerprints,
            instances: outcomes.len(),
            classified,
            skipped: outcomes.len() - classified,
            correct,
            cache: self.cache_summary(),
        };
        Ok(RunOutput { outcomes, manifest })
    }
}

/// Opens the configured backends and runs the whole evaluation.
pub fn run_evaluation(
    eval_set: &[EvalInstance],
    concept_map: &BTreeMap<String, ConceptSet>,
    config: &RunConfig,
) -> Result<RunOutput> {
    Pipeline::open(config.clone())?.run(eval_set, concept_map)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub outcomes: Vec<InstanceOutcome>,
    pub manifest: RunManifest,
}

impl RunOutput {
    pub fn verdicts(&self) -> impl Iterator<Item = &Verdict> {
        self.outcomes.iter().filter_map(InstanceOutcome::verdict)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub tool_version: String,
    pub started_at: DateTime<Utc>,
    pub wall_time_secs: f64,
    pub config: RunConfig,
    pub vqa_backend: String,
    pub concept_fingerprints: BTreeMap<String, String>,
    pub instances: usize,
    pub classified: usize,
    pub skipped: usize,
    pub correct: usize,
    pub cache: Option<CacheSummary>,
}

impl RunManifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct VerdictLine {
    schema_version: String,
    #[serde(flatten)]
    outcome: InstanceOutcome,
}

pub fn write_verdicts(writer: impl Write, outcomes: &[InstanceOutcome]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for outcome in outcomes {
        let line = VerdictLine {
            schema_version: schema::schema_version(),
            outcome: outcome.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn save_verdicts(path: impl AsRef<Path>, outcomes: &[InstanceOutcome]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_verdicts(file, outcomes).map_err(|e| Error::io(path, e))
}

/// Reads a verdict log, rejecting unknown schema majors and verdicts whose
/// derived fields disagree with their answers.
pub fn read_verdicts(path: impl AsRef<Path>) -> Result<Vec<InstanceOutcome>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let where_ = format!("{}:{}", path.display(), i + 1);
        let version: serde_json::Value =
            serde_json::from_str(&line).map_err(|e| Error::json(&where_, e))?;
        let version = version
            .get("schema_version")
            .and_then(serde_json::Value::as_str)
            .unwrap_or("");
        schema::check(version, &where_)?;
        let parsed: VerdictLine =
            serde_json::from_str(&line).map_err(|e| Error::json(&where_, e))?;
        if let InstanceOutcome::Classified(v) = &parsed.outcome {
            v.check()?;
        }
        out.push(parsed.outcome);
    }
    Ok(out)
}

/// One of the set's meta-questions, chosen uniformly and reproducibly from
/// the set's fingerprint and `seed`.
pub fn sample_one_metaquestion(concepts: &ConceptSet, seed: u64) -> MetaQuestion {
    sample_one_metaquestion_with(concepts, seed, &QuestionTemplates::default())
}

pub fn sample_one_metaquestion_with(
    concepts: &ConceptSet,
    seed: u64,
    templates: &QuestionTemplates,
) -> MetaQuestion {
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(seed, &["one-shot", &concepts.fingerprint()]));
    let index = rng.gen_range(0..concepts.phrases.len());
    templates.make_meta_questions(concepts).swap_remove(index)
}

/// Fine-tuning example: an image, one sampled meta-question for its target
/// category, and the answer a correct model would give.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub run: u32,
    pub seed: u64,
    pub image: String,
    pub category: String,
    pub question: String,
    pub concept_index: usize,
    pub expected_answer: Answer,
}

/// For each of `runs` runs (seeds `seed`, `seed + 1`, ...) samples one
/// meta-question per category and pairs it with every instance of that
/// category.
pub fn sample_training_pairs(
    eval_set: &[EvalInstance],
    concept_map: &BTreeMap<String, ConceptSet>,
    seed: u64,
    runs: u32,
    templates: &QuestionTemplates,
) -> Result<Vec<TrainingPair>> {
    let missing: BTreeSet<String> = eval_set
        .iter()
        .map(|i| i.target.name())
        .filter(|n| !concept_map.contains_key(*n))
        .map(str::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingConcepts(missing.into_iter().collect()));
    }
    let mut pairs = Vec::new();
    for run in 0..runs {
        let run_seed = seed.wrapping_add(u64::from(run));
        let chosen: BTreeMap<&str, MetaQuestion> = concept_map
            .iter()
            .map(|(name, set)| {
                (
                    name.as_str(),
                    sample_one_metaquestion_with(set, run_seed, templates),
                )
            })
            .collect();
        for instance in eval_set {
            let q = &chosen[instance.target.name()];
            pairs.push(TrainingPair {
                run,
                seed: run_seed,
                image: instance.image_ref.clone(),
                category: instance.target.name().to_string(),
                question: q.text.clone(),
                concept_index: q.concept_index,
                expected_answer: expected_answer(instance),
            });
        }
    }
    Ok(pairs)
}
