//! TOML configuration with environment and flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use conceptvqa::backends::{LlmBackendHandle, RetryPolicy, VqaBackendHandle};
use conceptvqa::RunConfig;
use serde::{Deserialize, Serialize};

pub const ENV_LLM_ENDPOINT: &str = "CONCEPTVQA_LLM_ENDPOINT";
pub const ENV_LLM_TOKEN: &str = "CONCEPTVQA_LLM_TOKEN";
pub const ENV_VQA_ENDPOINT: &str = "CONCEPTVQA_VQA_ENDPOINT";
pub const ENV_VQA_TOKEN: &str = "CONCEPTVQA_VQA_TOKEN";

fn default_neg_ratio() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CliConfig {
    /// Negatives per positive when building eval sets.
    #[serde(default = "default_neg_ratio")]
    pub neg_ratio: f64,
    #[serde(flatten)]
    pub run: RunConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            neg_ratio: default_neg_ratio(),
            run: RunConfig::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub m: Option<u32>,
    pub seed: Option<u64>,
    pub neg_ratio: Option<f64>,
    pub noise: Option<f64>,
    pub cache_dir: Option<PathBuf>,
    pub max_in_flight: Option<usize>,
    pub subject_noun: Option<String>,
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                let mut config: CliConfig = toml::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?;
                config.resolve_paths(path.parent().unwrap_or(Path::new("")));
                Ok(config)
            }
        }
    }

    /// Relative paths in a config file are taken relative to that file.
    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(dir) = &mut self.run.cache_dir {
            join(dir);
        }
        if let Some(LlmBackendHandle::FixtureStub { path }) = &mut self.run.llm {
            join(path);
        }
        match &mut self.run.vqa {
            Some(VqaBackendHandle::OracleStub { world, .. }) => join(world),
            Some(VqaBackendHandle::Http {
                image_root: Some(root),
                ..
            }) => join(root),
            _ => {}
        }
    }

    /// Endpoints and tokens from the environment. An endpoint variable
    /// replaces whatever backend the file configured with an HTTP one.
    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(endpoint) = var(ENV_LLM_ENDPOINT) {
            let params = match &self.run.llm {
                Some(LlmBackendHandle::Http { params, .. }) => params.clone(),
                _ => Default::default(),
            };
            self.run.llm = Some(LlmBackendHandle::Http {
                endpoint,
                params,
                bearer_token: None,
                timeout_secs: 60,
                retry: RetryPolicy::default(),
            });
        }
        if let Some(token) = var(ENV_LLM_TOKEN) {
            if let Some(LlmBackendHandle::Http { bearer_token, .. }) = &mut self.run.llm {
                *bearer_token = Some(token);
            }
        }
        if let Some(endpoint) = var(ENV_VQA_ENDPOINT) {
            let image_root = match &self.run.vqa {
                Some(VqaBackendHandle::Http { image_root, .. }) => image_root.clone(),
                _ => None,
            };
            self.run.vqa = Some(VqaBackendHandle::Http {
                endpoint,
                image_root,
                bearer_token: None,
                timeout_secs: 60,
                retry: RetryPolicy::default(),
            });
        }
        if let Some(token) = var(ENV_VQA_TOKEN) {
            if let Some(VqaBackendHandle::Http { bearer_token, .. }) = &mut self.run.vqa {
                *bearer_token = Some(token);
            }
        }
    }

    pub fn apply_overrides(&mut self, o: &Overrides) -> Result<()> {
        if let Some(m) = o.m {
            self.run.m = m;
        }
        if let Some(seed) = o.seed {
            self.run.seed = seed;
        }
        if let Some(r) = o.neg_ratio {
            self.neg_ratio = r;
        }
        if let Some(dir) = &o.cache_dir {
            self.run.cache_dir = Some(dir.clone());
        }
        if let Some(n) = o.max_in_flight {
            self.run.max_in_flight = n;
        }
        if let Some(noun) = &o.subject_noun {
            self.run.subject_noun = Some(noun.clone());
        }
        if let Some(noise) = o.noise {
            match &mut self.run.vqa {
                Some(VqaBackendHandle::OracleStub {
                    noise_flip_probability,
                    ..
                }) => *noise_flip_probability = noise,
                _ => bail!("--noise applies only to the oracle-stub VQA backend"),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.neg_ratio.is_finite() && self.neg_ratio > 0.0) {
            bail!("neg_ratio must be a positive real, got {}", self.neg_ratio);
        }
        self.run.validate()?;
        Ok(())
    }
}
