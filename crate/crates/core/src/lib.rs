//! Zero-shot visual concept recognition through question answering.
//!
//! An LLM describes each object category with `m` short phrases. Every phrase
//! becomes a yes/no meta-question posed to a VQA backend together with the
//! test image, and the category is declared present when at least
//! `(m + 1) / 2` answers are affirmative. The per-question answers form an
//! explanation trace for each verdict.
//!
//! Modules:
//! - [`concepts`]: prompt construction, response parsing, question templates.
//! - [`backends`]: LLM and VQA backends (HTTP, fixture, oracle) plus a response cache.
//! - [`dataset`]: manifest conversion to binary test sets and the synthetic attribute world.
//! - [`pipeline`]: per-instance classification and concurrent evaluation runs.
//! - [`metrics`]: accuracy, FP/FN, attribute accuracy, sweeps, and concept diversity.

pub mod backends;
pub mod concepts;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod pipeline;
pub mod schema;

pub use backends::{Answer, AnswerRecord, BackendError, LlmBackend, ResponseCache, VqaBackend};
pub use concepts::{
    CategorySpec, ConceptCount, ConceptSet, ConceptStore, MetaQuestion, QuestionTemplates,
};
pub use dataset::{AttributeWorld, EvalInstance, LabeledManifest, Polarity};
pub use error::{Error, Result};
pub use pipeline::{InstanceOutcome, Pipeline, RunConfig, Verdict};

use sha2::{Digest, Sha256};

/// Short stable hex digest over length-prefixed parts.
pub(crate) fn fingerprint(parts: &[&str]) -> String {
    let digest = digest_parts(parts);
    hex::encode(&digest[..8])
}

/// 64-bit seed derived from a base seed and labels.
pub(crate) fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let seed = seed.to_string();
    let mut all = vec![seed.as_str()];
    all.extend_from_slice(parts);
    let digest = digest_parts(&all);
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn digest_parts(parts: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    hasher.finalize().into()
}
