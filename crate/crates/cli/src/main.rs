//! `conceptvqa` command-line tool.
//!
//! Exit codes: 0 success, 1 partial failure (some categories or instances
//! failed), 2 usage or configuration error.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use conceptvqa::backends::VqaBackendHandle;
use conceptvqa::concepts::CategorySpec;
use conceptvqa::dataset::{
    build_eval_sets, generate_attribute_world, read_eval_set, write_eval_set, write_jsonl,
    LabeledManifest, WorldParams,
};
use conceptvqa::metrics::{
    compute_attribute_stats, compute_category_stats, diversity_report, format_percent,
    m_sweep_delta, write_attribute_stats_csv, write_attribute_types_csv, write_category_stats_csv,
    write_frequency_csv, write_sweep_csv, AttributeScope, Lexicon,
};
use conceptvqa::pipeline::{
    generate_concepts, read_verdicts, sample_training_pairs, save_verdicts,
};
use conceptvqa::{schema, ConceptCount, ConceptStore, Pipeline, ResponseCache};
use serde::Serialize;

use config::{CliConfig, Overrides};

#[derive(Parser)]
#[command(
    name = "conceptvqa",
    version,
    about = "Zero-shot category recognition by asking a VQA model about LLM-generated concepts"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Concepts per category (odd; 0 for the baseline question).
    #[arg(long, global = true)]
    m: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Negatives per positive in generated eval sets.
    #[arg(long, global = true)]
    neg_ratio: Option<f64>,
    /// Answer flip probability of the oracle-stub VQA backend.
    #[arg(long, global = true)]
    noise: Option<f64>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    max_in_flight: Option<usize>,
    /// Subject noun used in meta-questions.
    #[arg(long, global = true)]
    subject_noun: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Ask the LLM for concept phrases for each category.
    Concepts {
        /// One category per line, or JSON objects with name, dataset_id and subject_noun.
        #[arg(long)]
        categories: PathBuf,
        #[arg(long, default_value = "custom")]
        dataset_id: String,
    },
    /// Write the meta-questions a concept store expands to.
    Questions {
        #[arg(long)]
        concepts: PathBuf,
    },
    /// Turn a labeled JSONL manifest into a binary eval set.
    Convert {
        #[arg(long)]
        manifest: PathBuf,
        /// Restrict targets to the categories listed in this file.
        #[arg(long)]
        targets: Option<PathBuf>,
        #[arg(long, default_value = "custom")]
        dataset_id: String,
        #[arg(long)]
        split: Option<String>,
    },
    /// Generate a synthetic attribute world with matching eval set and concepts.
    Synth {
        #[arg(long, default_value_t = 10)]
        n_categories: usize,
        #[arg(long, default_value_t = 3)]
        attrs_per_category: usize,
        #[arg(long, default_value_t = 20)]
        images_per_category: usize,
        /// Defaults to n_categories * attrs_per_category.
        #[arg(long)]
        vocabulary_size: Option<usize>,
    },
    /// Classify every instance of an eval set.
    Run {
        #[arg(long)]
        eval_set: PathBuf,
        /// Concept store; not used when m = 0.
        #[arg(long)]
        concepts: Option<PathBuf>,
    },
    /// Category and attribute accuracy CSVs, optionally against a second run.
    Report {
        #[arg(long)]
        verdicts: PathBuf,
        /// Verdicts of a second run to compare against.
        #[arg(long)]
        compare: Option<PathBuf>,
        /// Concept store of the first run, needed for attribute accuracy.
        #[arg(long)]
        concepts: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Scope::PositivesOnly)]
        attribute_scope: Scope,
    },
    /// Phrase diversity and attribute-type breakdown of a concept store.
    Analyze {
        #[arg(long)]
        concepts: PathBuf,
        /// Keyword lexicon JSON; the built-in one is used otherwise.
        #[arg(long)]
        lexicon: Option<PathBuf>,
    },
    /// Export (image, sampled meta-question, expected answer) pairs.
    SampleTrain {
        #[arg(long)]
        eval_set: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long, default_value_t = 1)]
        runs: u32,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    PositivesOnly,
    AllInstances,
}

impl From<Scope> for AttributeScope {
    fn from(s: Scope) -> Self {
        match s {
            Scope::PositivesOnly => AttributeScope::PositivesOnly,
            Scope::AllInstances => AttributeScope::AllInstances,
        }
    }
}

enum Status {
    Ok,
    Partial,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// `synth` writes its own oracle configuration, so `--noise` is not applied
/// to the loaded one there.
fn load_config(g: &GlobalArgs, apply_noise: bool) -> Result<CliConfig> {
    let mut config = CliConfig::load(g.config.as_deref())?;
    config.apply_env(|k| std::env::var(k).ok());
    config.apply_overrides(&Overrides {
        m: g.m,
        seed: g.seed,
        neg_ratio: g.neg_ratio,
        noise: g.noise.filter(|_| apply_noise),
        cache_dir: g.cache_dir.clone(),
        max_in_flight: g.max_in_flight,
        subject_noun: g.subject_noun.clone(),
    })?;
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<Status> {
    let is_synth = matches!(cli.command, Command::Synth { .. });
    let config = load_config(&cli.global, !is_synth)?;
    let out = &cli.global.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Concepts {
            categories,
            dataset_id,
        } => cmd_concepts(&config, &categories, &dataset_id, out),
        Command::Questions { concepts } => cmd_questions(&config, &concepts, out),
        Command::Convert {
            manifest,
            targets,
            dataset_id,
            split,
        } => cmd_convert(
            &config,
            &manifest,
            targets.as_deref(),
            &dataset_id,
            split,
            out,
        ),
        Command::Synth {
            n_categories,
            attrs_per_category,
            images_per_category,
            vocabulary_size,
        } => cmd_synth(
            &config,
            &cli.global,
            WorldParams {
                n_categories,
                attrs_per_category,
                images_per_category,
                attribute_vocabulary_size: vocabulary_size
                    .unwrap_or(n_categories * attrs_per_category),
                seed: config.run.seed,
            },
            out,
        ),
        Command::Run { eval_set, concepts } => {
            cmd_run(&config, &eval_set, concepts.as_deref(), out)
        }
        Command::Report {
            verdicts,
            compare,
            concepts,
            attribute_scope,
        } => cmd_report(
            &verdicts,
            compare.as_deref(),
            concepts.as_deref(),
            attribute_scope.into(),
            out,
        ),
        Command::Analyze { concepts, lexicon } => cmd_analyze(&concepts, lexicon.as_deref(), out),
        Command::SampleTrain {
            eval_set,
            concepts,
            runs,
        } => cmd_sample_train(&config, &eval_set, &concepts, runs, out),
    }
}

fn default_subject(config: &CliConfig) -> &str {
    config.run.subject_noun.as_deref().unwrap_or("object")
}

/// Plain lines are category names; lines starting with `{` are full
/// category specs. Blank lines and `#` comments are skipped.
fn read_categories(path: &Path, dataset_id: &str, subject: &str) -> Result<Vec<CategorySpec>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let spec = if line.starts_with('{') {
            serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?
        } else {
            CategorySpec::new(line, dataset_id, subject)?
        };
        out.push(spec);
    }
    if out.is_empty() {
        bail!("no categories in {}", path.display());
    }
    Ok(out)
}

fn cmd_concepts(
    config: &CliConfig,
    categories: &Path,
    dataset_id: &str,
    out: &Path,
) -> Result<Status> {
    let m = ConceptCount::new(config.run.m)
        .context("concept generation needs an odd m of at least 1")?;
    let categories = read_categories(categories, dataset_id, default_subject(config))?;
    let handle = config
        .run
        .llm
        .as_ref()
        .context("no LLM backend configured (set [llm] or CONCEPTVQA_LLM_ENDPOINT)")?;
    let llm = handle.open()?;
    let cache = match &config.run.cache_dir {
        Some(dir) => Some(ResponseCache::open(dir)?),
        None => None,
    };

    let mut sets = Vec::new();
    let mut failed = 0;
    for (category, result) in generate_concepts(llm.as_ref(), cache.as_ref(), &categories, m.get())?
    {
        match result {
            Ok(set) => sets.push(set),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", category.name());
            }
        }
    }
    let path = out.join("concepts.json");
    ConceptStore::new(m, sets)?.save(&path)?;
    println!(
        "wrote {} ({} of {} categories)",
        path.display(),
        categories.len() - failed,
        categories.len()
    );
    Ok(if failed == 0 {
        Status::Ok
    } else {
        Status::Partial
    })
}

#[derive(Serialize)]
struct QuestionLine<'a> {
    category: &'a str,
    concept_index: usize,
    concept: &'a str,
    question: String,
}

fn cmd_questions(config: &CliConfig, concepts: &Path, out: &Path) -> Result<Status> {
    let store = ConceptStore::load(concepts)?;
    let templates = &config.run.templates;
    let mut lines = Vec::new();
    for set in &store.concept_sets {
        let subject = config
            .run
            .subject_noun
            .as_deref()
            .unwrap_or(set.category.subject_noun());
        for (i, phrase) in set.phrases.iter().enumerate() {
            lines.push(QuestionLine {
                category: set.category.name(),
                concept_index: i,
                concept: phrase,
                question: templates.meta_question(subject, phrase),
            });
        }
    }
    let path = out.join("questions.jsonl");
    write_jsonl(&path, &lines)?;
    println!("wrote {} ({} questions)", path.display(), lines.len());
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct SamplingManifest {
    schema_version: String,
    policy: &'static str,
    neg_ratio: f64,
    seed: u64,
    targets: usize,
    positives: usize,
    negatives: usize,
}

fn cmd_convert(
    config: &CliConfig,
    manifest: &Path,
    targets: Option<&Path>,
    dataset_id: &str,
    split: Option<String>,
    out: &Path,
) -> Result<Status> {
    let manifest = LabeledManifest::read_jsonl(manifest, split)?;
    let subject = default_subject(config);
    let targets = match targets {
        Some(path) => read_categories(path, dataset_id, subject)?,
        None => manifest
            .categories
            .iter()
            .map(|c| CategorySpec::new(c.as_str(), dataset_id, subject))
            .collect::<conceptvqa::Result<_>>()?,
    };
    let eval = build_eval_sets(&manifest, &targets, config.neg_ratio, config.run.seed)?;
    let positives = eval
        .iter()
        .filter(|i| i.polarity == conceptvqa::Polarity::Positive)
        .count();
    let path = out.join("eval_set.jsonl");
    write_eval_set(&path, &eval)?;
    write_json(
        &out.join("sampling.json"),
        &SamplingManifest {
            schema_version: schema::schema_version(),
            policy: "uniform-without-replacement",
            neg_ratio: config.neg_ratio,
            seed: config.run.seed,
            targets: targets.len(),
            positives,
            negatives: eval.len() - positives,
        },
    )?;
    println!("wrote {} ({} instances)", path.display(), eval.len());
    Ok(Status::Ok)
}

fn cmd_synth(
    config: &CliConfig,
    g: &GlobalArgs,
    params: WorldParams,
    out: &Path,
) -> Result<Status> {
    let m = ConceptCount::new(config.run.m)
        .context("synth writes a concept store and needs an odd m")?;
    let world = generate_attribute_world(&params)?;
    let concepts = ConceptStore::new(m, world.true_concepts(m.get())?)?;
    let eval = build_eval_sets(
        &world.manifest,
        &world.category_specs(),
        config.neg_ratio,
        config.run.seed,
    )?;

    world.save(out.join("world.json"))?;
    world.manifest.write_jsonl(out.join("manifest.jsonl"))?;
    write_eval_set(out.join("eval_set.jsonl"), &eval)?;
    concepts.save(out.join("concepts.json"))?;

    let mut run_config = config.clone();
    run_config.run.llm = None;
    run_config.run.cache_dir = None;
    run_config.run.vqa = Some(VqaBackendHandle::OracleStub {
        world: PathBuf::from("world.json"),
        noise_flip_probability: g.noise.unwrap_or(0.0),
        rng_seed: config.run.seed,
    });
    let text = toml::to_string(&run_config).context("serializing config")?;
    std::fs::write(out.join("config.toml"), text)?;
    println!(
        "wrote attribute world with {} categories, {} images, {} eval instances to {}",
        world.profiles.len(),
        world.manifest.entries.len(),
        eval.len(),
        out.display()
    );
    Ok(Status::Ok)
}

fn cmd_run(
    config: &CliConfig,
    eval_set: &Path,
    concepts: Option<&Path>,
    out: &Path,
) -> Result<Status> {
    let eval = read_eval_set(eval_set)?;
    let concept_map = match (config.run.m, concepts) {
        (0, Some(_)) => bail!("m = 0 asks only the baseline question; drop --concepts"),
        (0, None) => BTreeMap::new(),
        (_, None) => bail!("--concepts is required when m > 0"),
        (m, Some(path)) => {
            let store = ConceptStore::load(path)?;
            if store.m.get() != m {
                bail!(
                    "concept store {} was built with m = {} but the run uses m = {m}; \
                     regenerate concepts or pass --m {}",
                    path.display(),
                    store.m,
                    store.m
                );
            }
            store.to_map()
        }
    };
    let pipeline = Pipeline::open(config.run.clone())?;
    let output = pipeline.run(&eval, &concept_map)?;
    let verdicts = out.join("verdicts.jsonl");
    save_verdicts(&verdicts, &output.outcomes)?;
    output.manifest.save(out.join("run_manifest.json"))?;
    let m = &output.manifest;
    println!(
        "{} instances: {} classified, {} correct, {} skipped; wrote {}",
        m.instances,
        m.classified,
        m.correct,
        m.skipped,
        verdicts.display()
    );
    Ok(if m.skipped == 0 {
        Status::Ok
    } else {
        Status::Partial
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct Summary {
    schema_version: String,
    instances: usize,
    correct: usize,
    skipped: usize,
    false_positives: usize,
    false_negatives: usize,
    accuracy: String,
}

fn cmd_report(
    verdicts: &Path,
    compare: Option<&Path>,
    concepts: Option<&Path>,
    scope: AttributeScope,
    out: &Path,
) -> Result<Status> {
    let outcomes = read_verdicts(verdicts)?;
    let report = compute_category_stats(&outcomes)?;
    write_category_stats_csv(out.join("category_stats.csv"), &report)?;
    let o = &report.overall;
    write_json(
        &out.join("summary.json"),
        &Summary {
            schema_version: schema::schema_version(),
            instances: o.n_instances,
            correct: o.n_correct,
            skipped: o.n_skipped,
            false_positives: o.false_positives,
            false_negatives: o.false_negatives,
            accuracy: format_percent(o.accuracy),
        },
    )?;
    println!(
        "accuracy {}% over {} instances",
        format_percent(o.accuracy),
        o.n_instances
    );

    match concepts {
        Some(path) => {
            let store = ConceptStore::load(path)?;
            let stats = compute_attribute_stats(&outcomes, &store.to_map(), scope)?;
            write_attribute_stats_csv(out.join("attribute_stats.csv"), &stats)?;
        }
        None => log::warn!("no --concepts given; skipping attribute accuracy"),
    }

    if let Some(other) = compare {
        let other = compute_category_stats(&read_verdicts(other)?)?;
        let sweep = m_sweep_delta(&report, &other)?;
        write_sweep_csv(out.join("m_sweep_delta.csv"), &sweep)?;
        println!(
            "second run: {} improved, {} worsened, {} unchanged",
            sweep.improved, sweep.worsened, sweep.unchanged
        );
    }
    Ok(Status::Ok)
}

#[derive(Serialize)]
struct DiversitySummary<'a> {
    schema_version: String,
    total_phrases: usize,
    unique_phrases: usize,
    unique_fraction: f64,
    attribute_types: &'a BTreeMap<String, usize>,
}

fn cmd_analyze(concepts: &Path, lexicon: Option<&Path>, out: &Path) -> Result<Status> {
    let store = ConceptStore::load(concepts)?;
    let lexicon = match lexicon {
        Some(path) => Lexicon::load(path)?,
        None => Lexicon::default(),
    };
    let report = diversity_report(&store.to_map(), &lexicon)?;
    write_frequency_csv(out.join("phrase_frequency.csv"), &report.frequency)?;
    write_attribute_types_csv(out.join("attribute_types.csv"), &report)?;
    write_json(
        &out.join("diversity.json"),
        &DiversitySummary {
            schema_version: schema::schema_version(),
            total_phrases: report.total_phrases,
            unique_phrases: report.unique_phrases,
            unique_fraction: report.unique_fraction,
            attribute_types: &report.attribute_types,
        },
    )?;
    println!(
        "{} of {} phrases unique ({:.2}%)",
        report.unique_phrases,
        report.total_phrases,
        100.0 * report.unique_fraction
    );
    Ok(Status::Ok)
}

fn cmd_sample_train(
    config: &CliConfig,
    eval_set: &Path,
    concepts: &Path,
    runs: u32,
    out: &Path,
) -> Result<Status> {
    let eval = read_eval_set(eval_set)?;
    let store = ConceptStore::load(concepts)?;
    let pairs = sample_training_pairs(
        &eval,
        &store.to_map(),
        config.run.seed,
        runs,
        &config.run.templates,
    )?;
    let path = out.join("train_pairs.jsonl");
    write_jsonl(&path, &pairs)?;
    println!("wrote {} ({} pairs)", path.display(), pairs.len());
    Ok(Status::Ok)
}
