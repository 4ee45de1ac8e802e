//! Binary zero-shot test sets and the synthetic attribute world.
//!
//! A labeled manifest of `(image, category)` pairs becomes, for each target
//! category, a set of positive instances (images of the target) and sampled
//! negative instances (images of other categories), each paired with the
//! question "Is there a <category>?".
//!
//! The attribute world is a pixel-free stand-in for an attribute-annotated
//! dataset: every category owns a distinct set of descriptor phrases and
//! every image of that category carries exactly that set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backends::Answer;
use crate::concepts::{make_baseline_question, CategorySpec, ConceptCount, ConceptSet};
use crate::error::{Error, Result};
use crate::{derive_seed, fingerprint, schema};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawManifest")]
pub struct LabeledManifest {
    pub entries: Vec<ManifestEntry>,
    /// Distinct categories in order of first appearance.
    pub categories: Vec<String>,
    #[serde(default)]
    pub split: Option<String>,
}

#[derive(Deserialize)]
struct RawManifest {
    entries: Vec<ManifestEntry>,
    #[serde(default)]
    split: Option<String>,
}

impl TryFrom<RawManifest> for LabeledManifest {
    type Error = Error;

    fn try_from(raw: RawManifest) -> Result<Self> {
        LabeledManifest::new(raw.entries, raw.split)
    }
}

impl LabeledManifest {
    pub fn new(entries: Vec<ManifestEntry>, split: Option<String>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut categories = Vec::new();
        let mut known = HashSet::new();
        for e in &entries {
            if e.image.is_empty() || e.category.trim().is_empty() {
                return Err(Error::InvalidManifest(format!(
                    "entry with empty image or category: {e:?}"
                )));
            }
            if !seen.insert(e.image.as_str()) {
                return Err(Error::InvalidManifest(format!(
                    "duplicate image reference {:?}",
                    e.image
                )));
            }
            if known.insert(e.category.as_str()) {
                categories.push(e.category.clone());
            }
        }
        Ok(Self {
            entries,
            categories,
            split,
        })
    }

    /// Reads `{"image": ..., "category": ...}` lines; blank lines are ignored.
    pub fn read_jsonl(path: impl AsRef<Path>, split: Option<String>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
            entries.push(entry);
        }
        Self::new(entries, split)
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.entries)
    }

    pub fn images_of<'a>(&'a self, category: &'a str) -> impl Iterator<Item = &'a ManifestEntry> {
        self.entries.iter().filter(move |e| e.category == category)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInstance {
    #[serde(rename = "image")]
    pub image_ref: String,
    pub target: CategorySpec,
    pub polarity: Polarity,
    pub question: String,
    pub source_category: String,
}

impl EvalInstance {
    pub fn new(
        image_ref: impl Into<String>,
        target: CategorySpec,
        source_category: impl Into<String>,
    ) -> Self {
        let source_category = source_category.into();
        let polarity = if source_category == target.name() {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        Self {
            image_ref: image_ref.into(),
            question: make_baseline_question(&target),
            target,
            polarity,
            source_category,
        }
    }

    pub fn is_consistent(&self) -> bool {
        (self.polarity == Polarity::Positive) == (self.source_category == self.target.name())
    }
}

/// The answer a perfect system gives to the instance's question.
pub fn expected_answer(instance: &EvalInstance) -> Answer {
    match instance.polarity {
        Polarity::Positive => Answer::Yes,
        Polarity::Negative => Answer::No,
    }
}

/// Every image of `target` as a positive, followed by
/// `ceil(neg_ratio * positives)` negatives drawn uniformly without
/// replacement from all other images, in manifest order.
pub fn build_eval_set(
    manifest: &LabeledManifest,
    target: &CategorySpec,
    neg_ratio: f64,
    seed: u64,
) -> Result<Vec<EvalInstance>> {
    if !(neg_ratio.is_finite() && neg_ratio > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "neg_ratio must be a positive real, got {neg_ratio}"
        )));
    }
    if !manifest.categories.iter().any(|c| c == target.name()) {
        return Err(Error::UnknownCategory(target.name().to_string()));
    }

    let positives: Vec<&ManifestEntry> = manifest.images_of(target.name()).collect();
    let others: Vec<&ManifestEntry> = manifest
        .entries
        .iter()
        .filter(|e| e.category != target.name())
        .collect();
    let needed = (neg_ratio * positives.len() as f64).ceil() as usize;
    if needed > others.len() {
        return Err(Error::InsufficientNegatives {
            category: target.name().to_string(),
            needed,
            available: others.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, others.len(), needed).into_vec();
    picked.sort_unstable();

    let mut out: Vec<EvalInstance> = positives
        .iter()
        .map(|e| EvalInstance::new(&e.image, target.clone(), &e.category))
        .collect();
    out.extend(
        picked
            .into_iter()
            .map(|i| EvalInstance::new(&others[i].image, target.clone(), &others[i].category)),
    );
    Ok(out)
}

/// Eval sets for several targets, concatenated in target order. Each target
/// samples with its own seed derived from `seed` and the category name.
pub fn build_eval_sets(
    manifest: &LabeledManifest,
    targets: &[CategorySpec],
    neg_ratio: f64,
    seed: u64,
) -> Result<Vec<EvalInstance>> {
    let mut all = Vec::new();
    for target in targets {
        let target_seed = derive_seed(seed, &["eval-set", target.name()]);
        all.extend(build_eval_set(manifest, target, neg_ratio, target_seed)?);
    }
    Ok(all)
}

pub fn write_eval_set(path: impl AsRef<Path>, instances: &[EvalInstance]) -> Result<()> {
    write_jsonl(path.as_ref(), instances)
}

pub fn read_eval_set(path: impl AsRef<Path>) -> Result<Vec<EvalInstance>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let instance: EvalInstance = serde_json::from_str(&line)
            .map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
        if !instance.is_consistent() {
            return Err(Error::InvalidManifest(format!(
                "{}:{}: polarity disagrees with source category",
                path.display(),
                i + 1
            )));
        }
        out.push(instance);
    }
    Ok(out)
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeProfile {
    pub category: String,
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldParams {
    pub n_categories: usize,
    pub attrs_per_category: usize,
    pub images_per_category: usize,
    pub attribute_vocabulary_size: usize,
    pub seed: u64,
}

/// Subject noun used for attribute-world categories.
pub const WORLD_SUBJECT_NOUN: &str = "bird";
pub const WORLD_DATASET_ID: &str = "attribute-world";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWorld")]
pub struct AttributeWorld {
    pub schema_version: String,
    pub params: WorldParams,
    pub seed: u64,
    pub vocabulary: Vec<String>,
    pub manifest: LabeledManifest,
    pub profiles: BTreeMap<String, AttributeProfile>,
    #[serde(skip)]
    image_category: HashMap<String, usize>,
}

#[derive(Deserialize)]
struct RawWorld {
    schema_version: String,
    params: WorldParams,
    vocabulary: Vec<String>,
    manifest: LabeledManifest,
    profiles: BTreeMap<String, AttributeProfile>,
}

impl TryFrom<RawWorld> for AttributeWorld {
    type Error = Error;

    fn try_from(raw: RawWorld) -> Result<Self> {
        schema::check(&raw.schema_version, "attribute-world bundle")?;
        for c in &raw.manifest.categories {
            match raw.profiles.get(c) {
                Some(p) if !p.attributes.is_empty() => {}
                _ => {
                    return Err(Error::InvalidManifest(format!(
                        "category {c:?} has no attribute profile"
                    )))
                }
            }
        }
        Ok(AttributeWorld::assemble(
            raw.params,
            raw.vocabulary,
            raw.manifest,
            raw.profiles,
        ))
    }
}

impl AttributeWorld {
    fn assemble(
        params: WorldParams,
        vocabulary: Vec<String>,
        manifest: LabeledManifest,
        profiles: BTreeMap<String, AttributeProfile>,
    ) -> Self {
        let image_category = manifest
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.image.clone(), i))
            .collect();
        Self {
            schema_version: schema::schema_version(),
            seed: params.seed,
            params,
            vocabulary,
            manifest,
            profiles,
            image_category,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn category_of(&self, image_ref: &str) -> Option<&str> {
        self.image_category
            .get(image_ref)
            .map(|&i| self.manifest.entries[i].category.as_str())
    }

    /// Whether `phrase` is one of the image's attributes (case-insensitive).
    /// `None` when the image is unknown.
    pub fn oracle_truth(&self, image_ref: &str, phrase: &str) -> Option<bool> {
        let category = self.category_of(image_ref)?;
        let phrase = phrase.trim();
        Some(
            self.profiles
                .get(category)
                .is_some_and(|p| p.attributes.iter().any(|a| a.eq_ignore_ascii_case(phrase))),
        )
    }

    pub fn category_spec(&self, name: &str) -> Result<CategorySpec> {
        if !self.profiles.contains_key(name) {
            return Err(Error::UnknownCategory(name.to_string()));
        }
        CategorySpec::new(name, WORLD_DATASET_ID, WORLD_SUBJECT_NOUN)
    }

    pub fn category_specs(&self) -> Vec<CategorySpec> {
        self.manifest
            .categories
            .iter()
            .map(|c| {
                CategorySpec::new(c.as_str(), WORLD_DATASET_ID, WORLD_SUBJECT_NOUN)
                    .expect("non-empty")
            })
            .collect()
    }

    /// Concept sets made of each category's first `m` true attributes, in
    /// manifest category order.
    pub fn true_concepts(&self, m: u32) -> Result<Vec<ConceptSet>> {
        let count = ConceptCount::new(m)?;
        if count.as_usize() > self.params.attrs_per_category {
            return Err(Error::InvalidParameter(format!(
                "m = {m} exceeds the {} attributes per category",
                self.params.attrs_per_category
            )));
        }
        self.category_specs()
            .into_iter()
            .map(|c| {
                let phrases = self.profiles[c.name()].attributes[..count.as_usize()].to_vec();
                ConceptSet::from_phrases(c, phrases)
            })
            .collect()
    }

    pub fn fingerprint(&self) -> String {
        let profiles = serde_json::to_string(&self.profiles).expect("profiles serialize");
        let entries = serde_json::to_string(&self.manifest.entries).expect("entries serialize");
        fingerprint(&[&profiles, &entries])
    }
}

const COLORS: &[&str] = &[
    "red", "blue", "yellow", "black", "white", "brown", "grey", "olive", "orange", "green", "buff",
    "rufous",
];
const PATTERNS: &[&str] = &["streaked", "spotted", "barred", "striped", "mottled"];
const SIZES: &[&str] = &["long", "short", "large", "small", "slender"];
const SHAPES: &[&str] = &["pointed", "curved", "hooked", "forked", "rounded"];
const PARTS: &[&str] = &[
    "crown",
    "beak",
    "tail",
    "wings",
    "breast",
    "belly",
    "throat",
    "eye ring",
    "nape",
    "back",
    "legs",
    "cheek patch",
];

/// The first `size` descriptor phrases of a fixed modifier x body-part
/// grid, followed by numbered traits when the grid runs out.
pub fn attribute_vocabulary(size: usize) -> Vec<String> {
    let modifiers = COLORS.iter().chain(PATTERNS).chain(SIZES).chain(SHAPES);
    let grid = modifiers.flat_map(|m| PARTS.iter().map(move |p| format!("{m} {p}")));
    grid.chain((0..).map(|i| format!("trait {i}")))
        .take(size)
        .collect()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn generate_attribute_world(params: &WorldParams) -> Result<AttributeWorld> {
    let WorldParams {
        n_categories: n,
        attrs_per_category: k,
        images_per_category,
        attribute_vocabulary_size: v,
        seed,
    } = *params;
    if n == 0 || k == 0 || images_per_category == 0 || v == 0 {
        return Err(Error::InvalidParameter(
            "attribute-world counts must all be positive".into(),
        ));
    }
    if k > v || binomial(v, k) < n as f64 {
        return Err(Error::VocabularyTooSmall {
            vocabulary: v,
            categories: n,
            per_category: k,
        });
    }

    let vocabulary = attribute_vocabulary(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets: Vec<Vec<usize>> = if v >= n * k {
        // Disjoint profiles.
        let mut order: Vec<usize> = (0..v).collect();
        order.shuffle(&mut rng);
        order.chunks(k).take(n).map(<[usize]>::to_vec).collect()
    } else {
        distinct_subsets(&mut rng, v, k, n)
    };

    let width = (n - 1).to_string().len().max(2);
    let mut profiles = BTreeMap::new();
    let mut entries = Vec::with_capacity(n * images_per_category);
    for (ci, set) in sets.into_iter().enumerate() {
        let name = format!("species {ci:0width$}");
        for ii in 0..images_per_category {
            entries.push(ManifestEntry {
                image: format!("species-{ci:0width$}/img-{ii:04}"),
                category: name.clone(),
            });
        }
        profiles.insert(
            name.clone(),
            AttributeProfile {
                category: name,
                attributes: set.into_iter().map(|i| vocabulary[i].clone()).collect(),
            },
        );
    }
    let manifest = LabeledManifest::new(entries, Some("test".into()))?;
    Ok(AttributeWorld::assemble(
        *params, vocabulary, manifest, profiles,
    ))
}

/// `n` pairwise-distinct `k`-subsets of `0..v`, each in random order.
fn distinct_subsets(rng: &mut ChaCha8Rng, v: usize, k: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = if binomial(v, k) <= 200_000.0 {
        let all = combinations(v, k);
        index::sample(rng, all.len(), n)
            .into_iter()
            .map(|i| all[i].clone())
            .collect()
    } else {
        // Collisions are rare when there are this many subsets.
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut set = index::sample(rng, v, k).into_vec();
            set.sort_unstable();
            if seen.insert(set.clone()) {
                out.push(set);
            }
        }
        out
    };
    for set in &mut out {
        set.shuffle(rng);
    }
    out
}

fn combinations(v: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    fn rec(start: usize, v: usize, k: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if current.len() == k {
            out.push(current.clone());
            return;
        }
        for i in start..=(v - (k - current.len())) {
            current.push(i);
            rec(i + 1, v, k, current, out);
            current.pop();
        }
    }
    rec(0, v, k, &mut current, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(counts: &[(&str, usize)]) -> LabeledManifest {
        let mut entries = Vec::new();
        for (cat, n) in counts {
            for i in 0..*n {
                entries.push(ManifestEntry {
                    image: format!("{cat}/{i}.jpg"),
                    category: cat.to_string(),
                });
            }
        }
        LabeledManifest::new(entries, None).unwrap()
    }

    fn spec(name: &str) -> CategorySpec {
        CategorySpec::new(name, "cub", "bird").unwrap()
    }

    #[test]
    fn balanced_eval_set() {
        let mut counts = vec![("cardinal", 20)];
        let others: Vec<String> = (0..49).map(|i| format!("other{i}")).collect();
        counts.extend(others.iter().map(|o| (o.as_str(), 20)));
        let m = manifest(&counts);
        assert_eq!(m.entries.len(), 1000);

        let set = build_eval_set(&m, &spec("cardinal"), 1.0, 7).unwrap();
        assert_eq!(set.len(), 40);
        let pos: Vec<_> = set
            .iter()
            .filter(|i| i.polarity == Polarity::Positive)
            .collect();
        let neg: Vec<_> = set
            .iter()
            .filter(|i| i.polarity == Polarity::Negative)
            .collect();
        assert_eq!((pos.len(), neg.len()), (20, 20));
        assert!(neg.iter().all(|i| i.source_category != "cardinal"));
        assert!(set.iter().all(|i| i.question == "Is there a cardinal?"));
        assert!(set.iter().all(EvalInstance::is_consistent));
        let unique: HashSet<_> = set.iter().map(|i| &i.image_ref).collect();
        assert_eq!(unique.len(), 40);

        assert_eq!(set, build_eval_set(&m, &spec("cardinal"), 1.0, 7).unwrap());
    }

    #[test]
    fn negative_count_rounds_up() {
        let m = manifest(&[("a", 3), ("b", 10)]);
        let set = build_eval_set(&m, &spec("a"), 0.5, 1).unwrap();
        assert_eq!(
            set.iter()
                .filter(|i| i.polarity == Polarity::Negative)
                .count(),
            2
        );
    }

    #[test]
    fn eval_set_errors() {
        let m = manifest(&[("a", 3)]);
        assert!(matches!(
            build_eval_set(&m, &spec("a"), 1.0, 1),
            Err(Error::InsufficientNegatives {
                needed: 3,
                available: 0,
                ..
            })
        ));
        assert!(matches!(
            build_eval_set(&m, &spec("zebra"), 1.0, 1),
            Err(Error::UnknownCategory(_))
        ));
        assert!(build_eval_set(&m, &spec("a"), 0.0, 1).is_err());
    }

    #[test]
    fn manifest_rejects_duplicates() {
        let e = ManifestEntry {
            image: "x".into(),
            category: "a".into(),
        };
        assert!(LabeledManifest::new(vec![e.clone(), e], None).is_err());
    }

    #[test]
    fn expected_answer_follows_polarity() {
        let pos = EvalInstance::new("img", spec("cardinal"), "cardinal");
        assert_eq!(expected_answer(&pos), Answer::Yes);
        let neg = EvalInstance::new("img", spec("cardinal"), "blue jay");
        assert_eq!(expected_answer(&neg), Answer::No);
        let mut flipped = pos.clone();
        flipped.polarity = flipped.polarity.flipped();
        assert_eq!(expected_answer(&flipped), Answer::No);
    }

    #[test]
    fn small_world_construction() {
        let params = WorldParams {
            n_categories: 2,
            attrs_per_category: 3,
            images_per_category: 5,
            attribute_vocabulary_size: 10,
            seed: 1,
        };
        let world = generate_attribute_world(&params).unwrap();
        assert_eq!(world.manifest.entries.len(), 10);
        assert_eq!(world.profiles.len(), 2);
        let sets: Vec<_> = world.profiles.values().map(|p| &p.attributes).collect();
        assert_ne!(sets[0], sets[1]);
        for p in world.profiles.values() {
            assert_eq!(p.attributes.len(), 3);
            let unique: HashSet<_> = p.attributes.iter().collect();
            assert_eq!(unique.len(), 3);
        }
        let img = &world.manifest.entries[0];
        let attr = &world.profiles[&img.category].attributes[1];
        assert_eq!(world.oracle_truth(&img.image, attr), Some(true));
        assert_eq!(world.oracle_truth("missing", attr), None);

        let again = generate_attribute_world(&params).unwrap();
        assert_eq!(world, again);

        let concepts = world.true_concepts(3).unwrap();
        assert_eq!(concepts.len(), 2);
        assert_eq!(
            concepts[0].phrases,
            world.profiles[concepts[0].category.name()].attributes
        );
        assert_eq!(world.true_concepts(1).unwrap()[1].phrases.len(), 1);
        assert!(world.true_concepts(5).is_err());
        assert!(world.true_concepts(2).is_err());
    }

    #[test]
    fn overlapping_world_still_distinct() {
        let params = WorldParams {
            n_categories: 10,
            attrs_per_category: 3,
            images_per_category: 1,
            attribute_vocabulary_size: 6,
            seed: 4,
        };
        let world = generate_attribute_world(&params).unwrap();
        let mut seen = HashSet::new();
        for p in world.profiles.values() {
            let mut s = p.attributes.clone();
            s.sort();
            assert!(seen.insert(s));
        }
    }

    #[test]
    fn vocabulary_too_small() {
        let params = WorldParams {
            n_categories: 5,
            attrs_per_category: 2,
            images_per_category: 1,
            attribute_vocabulary_size: 3,
            seed: 0,
        };
        assert!(matches!(
            generate_attribute_world(&params),
            Err(Error::VocabularyTooSmall { .. })
        ));
    }

    #[test]
    fn world_bundle_round_trips() {
        let world = generate_attribute_world(&WorldParams {
            n_categories: 3,
            attrs_per_category: 3,
            images_per_category: 2,
            attribute_vocabulary_size: 9,
            seed: 5,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("world.json");
        world.save(&path).unwrap();
        let loaded = AttributeWorld::load(&path).unwrap();
        assert_eq!(loaded, world);
        assert_eq!(
            loaded.category_of("species-01/img-0001"),
            Some("species 01")
        );
    }

    #[test]
    fn vocabulary_is_unique() {
        let v = attribute_vocabulary(400);
        let unique: HashSet<_> = v.iter().collect();
        assert_eq!(unique.len(), 400);
        assert_eq!(v[0], "red crown");
    }
}
