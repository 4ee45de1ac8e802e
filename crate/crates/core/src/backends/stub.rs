//! Deterministic backends for offline runs and tests.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{AnswerRecord, BackendError, LlmBackend, VqaBackend};
use crate::concepts::{ParsedQuestion, QuestionMatcher, QuestionTemplates};
use crate::dataset::AttributeWorld;
use crate::{derive_seed, fingerprint};

/// Replays LLM responses from a JSON map of exact prompt to response text.
#[derive(Debug, Clone)]
pub struct FixtureLlm {
    path: PathBuf,
    entries: BTreeMap<String, String>,
    digest: String,
}

impl FixtureLlm {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackendError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::Config(format!("cannot read fixture {}: {e}", path.display()))
        })?;
        let entries: BTreeMap<String, String> = serde_json::from_str(&text).map_err(|e| {
            BackendError::Config(format!(
                "fixture {} is not a prompt map: {e}",
                path.display()
            ))
        })?;
        Ok(Self::from_entries_at(path.to_path_buf(), entries))
    }

    pub fn from_entries(entries: BTreeMap<String, String>) -> Self {
        Self::from_entries_at(PathBuf::new(), entries)
    }

    fn from_entries_at(path: PathBuf, entries: BTreeMap<String, String>) -> Self {
        let canonical = serde_json::to_string(&entries).expect("string map serializes");
        Self {
            path,
            digest: fingerprint(&[&canonical]),
            entries,
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl LlmBackend for FixtureLlm {
    fn fingerprint(&self) -> String {
        format!("fixture-llm:{}", self.digest)
    }

    fn generate(&self, prompt: &str) -> Result<String, BackendError> {
        self.entries
            .get(prompt)
            .cloned()
            .ok_or_else(|| BackendError::FixtureMiss {
                prompt: prompt.to_string(),
            })
    }
}

pub(crate) fn check_noise(p: f64) -> Result<(), BackendError> {
    if (0.0..0.5).contains(&p) {
        Ok(())
    } else {
        Err(BackendError::Config(format!(
            "noise_flip_probability must lie in [0, 0.5), got {p}"
        )))
    }
}

/// Answers from the attribute world's ground truth, with optional
/// independent answer flips.
///
/// Each `(image_ref, question)` pair owns a random stream seeded from
/// `rng_seed`, so a pair always receives the same answer regardless of call
/// order or repetition.
pub struct OracleVqa {
    world: Arc<AttributeWorld>,
    noise: f64,
    seed: u64,
    matcher: QuestionMatcher,
    fingerprint: String,
}

impl OracleVqa {
    pub fn new(
        world: Arc<AttributeWorld>,
        noise_flip_probability: f64,
        rng_seed: u64,
        templates: &QuestionTemplates,
    ) -> Result<Self, BackendError> {
        check_noise(noise_flip_probability)?;
        let fingerprint = format!(
            "oracle-stub:{}",
            fingerprint(&[
                &world.fingerprint(),
                &noise_flip_probability.to_string(),
                &rng_seed.to_string(),
                &templates.meta_question,
                &templates.baseline_question,
            ])
        );
        Ok(Self {
            world,
            noise: noise_flip_probability,
            seed: rng_seed,
            matcher: templates.matcher(),
            fingerprint,
        })
    }

    pub fn world(&self) -> &AttributeWorld {
        &self.world
    }

    fn flips(&self, image_ref: &str, question: &str) -> bool {
        if self.noise == 0.0 {
            return false;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[image_ref, question]));
        rng.gen::<f64>() < self.noise
    }
}

impl VqaBackend for OracleVqa {
    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn answer(&self, image_ref: &str, question: &str) -> Result<AnswerRecord, BackendError> {
        let category = self
            .world
            .category_of(image_ref)
            .ok_or_else(|| BackendError::ImageNotFound(image_ref.to_string()))?;
        let truth = match self.matcher.parse(question) {
            Some(ParsedQuestion::Concept { concept, .. }) => self
                .world
                .oracle_truth(image_ref, &concept)
                .unwrap_or(false),
            Some(ParsedQuestion::Category(name)) => {
                name.trim().eq_ignore_ascii_case(category.trim())
            }
            None => {
                return Ok(AnswerRecord::new(
                    image_ref,
                    question,
                    "unanswerable question",
                    &self.fingerprint,
                ))
            }
        };
        let said_yes = truth != self.flips(image_ref, question);
        Ok(AnswerRecord::new(
            image_ref,
            question,
            if said_yes { "yes" } else { "no" },
            &self.fingerprint,
        ))
    }
}
