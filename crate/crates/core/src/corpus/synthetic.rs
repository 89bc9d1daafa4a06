//! Seeded synthetic corpora.
//!
//! Every category owns a set of attribute words per view. A category's
//! document names its attribute words (plus non-visual filler), and each of
//! its images is the category's multi-hot attribute vector, with attributes
//! occasionally occluded, plus Gaussian noise. Unseen categories are novel
//! combinations of attributes that all occur in some seen category, so
//! knowledge can transfer through the words.
//!
//! The defaults (one attribute out of three per view) keep every category
//! vector inside the affine span of the seen ones, so transfer is learnable
//! from only eight seen categories.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    read_to_string, write_atomic, AttributeView, AttributeViewSet, DatasetManifest, MultiAttributeDocument, Sample,
    Split, VisualWordLexicon,
};
use crate::error::{MadsError, Result};

/// Non-visual filler words injected into synthetic paragraphs. None of them is
/// ever part of a synthetic lexicon.
pub const NOISE_WORDS: &[&str] = &[
    "the", "often", "usually", "eats", "known", "which", "during", "also", "mostly", "believed", "they", "when",
    "several", "years", "many", "sounds", "breeds", "lives", "called", "among", "generally", "quite", "rarely",
    "named",
];

const VIEW_NAMES: &[&str] = &[
    "Color and Patterns",
    "Size and Shape",
    "Habitat and Environment",
    "Physical Features",
    "Texture",
    "Tail",
    "Behavior",
    "Legs and Feet",
];

const ATTRIBUTE_POOLS: &[&[&str]] = &[
    &["red", "blue", "green", "yellow", "black", "white", "brown", "orange", "gray", "pink", "purple", "golden"],
    &["round", "slender", "stocky", "elongated", "tall", "flat", "compact", "plump", "lanky", "curved", "squat", "broad"],
    &["forest", "desert", "river", "meadow", "mountain", "ocean", "swamp", "tundra", "savanna", "reef", "cave", "grassland"],
    &["horns", "antlers", "tusks", "crest", "beak", "whiskers", "mane", "fins", "claws", "hooves", "trunk", "spikes"],
    &["furry", "scaly", "feathered", "smooth", "rough", "woolly", "spiny", "shaggy", "sleek", "leathery", "bristly", "silky"],
    &["bushy", "forked", "stubby", "fanned", "tufted", "ringed", "prehensile", "pointed", "paddle", "plumed", "banded", "tapered"],
    &["perching", "soaring", "burrowing", "wading", "climbing", "grazing", "diving", "hopping", "gliding", "basking", "roosting", "prowling"],
    &["webbed", "taloned", "padded", "stilted", "feathery", "knobby", "clawed", "hoofed", "splayed", "sturdy", "thin", "spurred"],
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_seen: usize,
    pub n_unseen: usize,
    /// Number of attribute views.
    pub views: usize,
    /// Attribute words available per view.
    pub vocab: usize,
    /// Attribute words each category draws per view.
    pub attrs_per_view: usize,
    /// Training images per seen category.
    pub samples_per_class: usize,
    /// Test images per category (test_seen for seen, test_unseen for unseen).
    pub test_samples_per_class: usize,
    pub noise_words_per_paragraph: usize,
    /// Standard deviation of the per-image latent noise.
    pub image_noise: f64,
    /// Probability that an image does not show one of its category's
    /// attributes (occlusion). Varies images within a class so that every
    /// attribute dimension is observed on its own.
    pub attribute_dropout: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_seen: 8,
            n_unseen: 4,
            views: 3,
            vocab: 3,
            attrs_per_view: 1,
            samples_per_class: 40,
            test_samples_per_class: 20,
            noise_words_per_paragraph: 4,
            image_noise: 0.1,
            attribute_dropout: 0.2,
        }
    }
}

/// Latent attribute vectors of categories and images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTable {
    pub attribute_words: Vec<String>,
    pub class_latents: BTreeMap<u32, Vec<f64>>,
    pub image_latents: BTreeMap<String, Vec<f64>>,
}

impl LatentTable {
    pub fn dim(&self) -> usize {
        self.attribute_words.len()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MadsError::schema(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self).map_err(|e| MadsError::schema("latents", e))?;
        write_atomic(path, json.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub views: AttributeViewSet,
    pub manifest: DatasetManifest,
    pub documents: Vec<MultiAttributeDocument>,
    pub lexicon: VisualWordLexicon,
    pub latents: LatentTable,
}

impl SyntheticDataset {
    /// All words the documents can contain, attribute words first.
    pub fn words(&self) -> Vec<String> {
        let mut words = self.latents.attribute_words.clone();
        words.extend(NOISE_WORDS.iter().map(|w| w.to_string()));
        words
    }
}

fn attribute_word(view: usize, j: usize) -> String {
    match ATTRIBUTE_POOLS.get(view).and_then(|p| p.get(j)) {
        Some(w) => w.to_string(),
        None => format!("attr{view}x{j}"),
    }
}

fn view_name(view: usize) -> String {
    match VIEW_NAMES.get(view) {
        Some(n) => n.to_string(),
        None => format!("View {view}"),
    }
}

type Signature = Vec<Vec<usize>>;

pub fn gen_synthetic_dataset(seed: u64, config: &SyntheticConfig) -> Result<SyntheticDataset> {
    let c = config;
    if c.n_seen < 2 || c.n_unseen < 2 {
        return Err(MadsError::Config("need at least 2 seen and 2 unseen classes".into()));
    }
    if c.views == 0 || c.attrs_per_view == 0 || c.attrs_per_view > c.vocab {
        return Err(MadsError::Config(format!(
            "need views >= 1 and 1 <= attrs_per_view ({}) <= vocab ({})",
            c.attrs_per_view, c.vocab
        )));
    }
    if c.samples_per_class == 0 || c.test_samples_per_class == 0 {
        return Err(MadsError::Config("sample counts must be positive".into()));
    }
    if !(0.0..1.0).contains(&c.attribute_dropout) {
        return Err(MadsError::Config("attribute_dropout must be in [0, 1)".into()));
    }
    if !(c.image_noise >= 0.0 && c.image_noise.is_finite()) {
        return Err(MadsError::Config("image_noise must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let draw = |rng: &mut ChaCha8Rng, pool: &[usize]| -> Vec<usize> {
        let mut picked: Vec<usize> =
            index::sample(rng, pool.len(), c.attrs_per_view).into_iter().map(|i| pool[i]).collect();
        picked.sort_unstable();
        picked
    };

    let full: Vec<usize> = (0..c.vocab).collect();
    let mut used: HashSet<Signature> = HashSet::new();
    let mut signatures: Vec<Signature> = Vec::new();
    for _ in 0..c.n_seen {
        let sig = (0..1000)
            .map(|_| (0..c.views).map(|_| draw(&mut rng, &full)).collect::<Signature>())
            .find(|s| !used.contains(s))
            .ok_or_else(|| MadsError::Config("cannot draw distinct seen classes; increase vocab".into()))?;
        used.insert(sig.clone());
        signatures.push(sig);
    }

    let covered: Vec<Vec<usize>> = (0..c.views)
        .map(|v| {
            let set: BTreeSet<usize> = signatures.iter().flat_map(|s| s[v].iter().copied()).collect();
            set.into_iter().collect()
        })
        .collect();
    if let Some(v) = covered.iter().position(|cv| cv.len() < c.attrs_per_view) {
        return Err(MadsError::Config(format!(
            "view {v}: seen classes cover only {} attributes, unseen classes need {}",
            covered[v].len(),
            c.attrs_per_view
        )));
    }
    for _ in 0..c.n_unseen {
        let sig = (0..1000)
            .map(|_| covered.iter().map(|pool| draw(&mut rng, pool)).collect::<Signature>())
            .find(|s| !used.contains(s))
            .ok_or_else(|| {
                MadsError::Config(format!(
                    "cannot compose {} novel unseen classes from attributes present in seen classes",
                    c.n_unseen
                ))
            })?;
        used.insert(sig.clone());
        signatures.push(sig);
    }

    let views = AttributeViewSet::new(
        (0..c.views)
            .map(|v| AttributeView { name: view_name(v), explanation: String::new() })
            .collect(),
    )?;
    let attribute_words: Vec<String> =
        (0..c.views).flat_map(|v| (0..c.vocab).map(move |j| attribute_word(v, j))).collect();
    let lexicon = VisualWordLexicon::from_labels(attribute_words.iter().map(String::as_str), "synthetic");

    let dim = attribute_words.len();
    let mut documents = Vec::new();
    let mut class_latents = BTreeMap::new();
    for (cid, sig) in signatures.iter().enumerate() {
        let mut latent = vec![0.0; dim];
        let mut paragraphs = BTreeMap::new();
        for (v, attrs) in sig.iter().enumerate() {
            let mut words: Vec<&str> = Vec::new();
            let owned: Vec<String> = attrs.iter().map(|&j| attribute_word(v, j)).collect();
            for (&j, w) in attrs.iter().zip(&owned) {
                latent[v * c.vocab + j] = 1.0;
                words.push(w);
            }
            for _ in 0..c.noise_words_per_paragraph {
                words.push(NOISE_WORDS.choose(&mut rng).expect("non-empty pool"));
            }
            words.shuffle(&mut rng);
            paragraphs.insert(view_name(v), format!("{}.", words.join(" ")));
        }
        documents.push(MultiAttributeDocument {
            category_id: cid as u32,
            category_name: format!("synthetic-class-{cid}"),
            paragraphs,
        });
        class_latents.insert(cid as u32, latent);
    }

    let normal = Normal::new(0.0, c.image_noise).map_err(|e| MadsError::Config(e.to_string()))?;
    let mut samples = Vec::new();
    let mut image_latents = BTreeMap::new();
    for (cid, latent) in &class_latents {
        let seen = (*cid as usize) < c.n_seen;
        let plan: Vec<(Split, usize)> = if seen {
            vec![(Split::Train, c.samples_per_class), (Split::TestSeen, c.test_samples_per_class)]
        } else {
            vec![(Split::TestUnseen, c.test_samples_per_class)]
        };
        let mut idx = 0;
        for (split, count) in plan {
            for _ in 0..count {
                let image_ref = format!("syn{seed}/c{cid:03}/{idx:05}");
                let x: Vec<f64> = latent
                    .iter()
                    .map(|&a| {
                        let shown = if a != 0.0 && rng.random::<f64>() < c.attribute_dropout { 0.0 } else { a };
                        shown + normal.sample(&mut rng)
                    })
                    .collect();
                image_latents.insert(image_ref.clone(), x);
                samples.push(Sample { image_ref, category_id: *cid, split });
                idx += 1;
            }
        }
    }

    let seen_ids = (0..c.n_seen as u32).collect();
    let unseen_ids = (c.n_seen as u32..(c.n_seen + c.n_unseen) as u32).collect();
    let manifest = DatasetManifest::new(seen_ids, unseen_ids, samples)?;

    Ok(SyntheticDataset {
        views,
        manifest,
        documents,
        lexicon,
        latents: LatentTable { attribute_words, class_latents, image_latents },
    })
}
