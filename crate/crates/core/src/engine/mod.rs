//! Model assembly, class-embedding computation, training, inference,
//! explanation dumps and checkpoints.

mod checkpoint;
mod explain;
mod infer;
mod optim;
mod train;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::aggregate::{aggregate_attend, fuse, AggregatorParams, SemanticEmbeddings};
use crate::autodiff::{Matrix, ParamId, ParamStore};
use crate::config::ModelConfig;
use crate::corpus::{tokenize, AttributeViewSet, MultiAttributeDocument, TokenizedParagraph, VisualWordLexicon, Vocabulary};
use crate::error::{MadsError, Result};
use crate::imageenc::{encode_images, Backbone, ImageEncoderParams, ImageFeatures};
use crate::nn::Graph;
use crate::objective::LocalAlignParams;
use crate::textenc::{view_features, EmbeddingTable, SemanticPerceiverParams, TextEncoderParams, ViewFeatures};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use explain::{cosine, explain, ClassExplanation, Explanation, ViewExplanation, WordScore};
pub use infer::{
    evaluate, gamma_grid, harmonic_mean, per_class_accuracy, predict_gzsl, predict_zsl, EvalOptions, EvalResult,
    GammaPoint, GammaSelection,
};
pub use optim::{AdamW, LrSchedule};
pub use train::{train, EpochMetrics, TrainReport};

/// A category document tokenized against the model vocabulary, one
/// paragraph per view in view-set order.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedDocument {
    pub category_id: u32,
    pub category_name: String,
    pub views: Vec<TokenizedParagraph>,
}

/// Tokenizes documents. Paragraphs longer than the positional table are
/// truncated with a warning.
pub fn prepare_documents(
    docs: &[MultiAttributeDocument],
    views: &AttributeViewSet,
    lexicon: &VisualWordLexicon,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<PreparedDocument>> {
    docs.iter()
        .map(|doc| {
            doc.validate(views)?;
            let paragraphs = (0..views.len())
                .map(|i| {
                    let text = doc.paragraph(views, i).expect("validated document");
                    let mut t = tokenize(text, lexicon, vocab).map_err(|e| {
                        e.with_context(format!("category {} view {:?}", doc.category_id, views.views()[i].name))
                    })?;
                    if t.len() + 1 > max_len {
                        log::warn!(
                            "category {} view {:?}: {} tokens truncated to {}",
                            doc.category_id,
                            views.views()[i].name,
                            t.len(),
                            max_len - 1
                        );
                        t.truncate(max_len - 1);
                    }
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(PreparedDocument { category_id: doc.category_id, category_name: doc.category_name.clone(), views: paragraphs })
        })
        .collect()
}

/// Block outputs of the images a command touches, plus the backbone that
/// can recompute later blocks.
#[derive(Clone, Copy)]
pub struct ImageSource<'a> {
    pub backbone: &'a dyn Backbone,
    pub features: &'a BTreeMap<String, Vec<Matrix>>,
}

impl ImageSource<'_> {
    fn outputs<'s>(&'s self, refs: &[&str]) -> Result<Vec<&'s [Matrix]>> {
        let missing: Vec<String> =
            refs.iter().filter(|r| !self.features.contains_key(**r)).map(|r| r.to_string()).collect();
        if !missing.is_empty() {
            return Err(MadsError::MissingFeatures { refs: missing });
        }
        Ok(refs.iter().map(|r| self.features[*r].as_slice()).collect())
    }
}

/// Evaluated class embeddings for a list of categories.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEmbeddings {
    pub category_ids: Vec<u32>,
    /// `T_g` rows, `C × r`.
    pub global: Matrix,
    /// `T_l` per category.
    pub local: Vec<Matrix>,
    /// Per-view core features `g_i` per category (`V × r`).
    pub cores: Vec<Matrix>,
    /// Per-view attention maps per category.
    pub maps: Vec<Vec<Matrix>>,
}

impl ClassEmbeddings {
    pub fn index_of(&self, category_id: u32) -> Option<usize> {
        self.category_ids.iter().position(|&c| c == category_id)
    }
}

type CacheKey = (u64, Vec<u32>);

#[derive(Debug)]
pub struct MadsModel {
    pub config: ModelConfig,
    pub views: AttributeViewSet,
    pub vocab: Vocabulary,
    pub store: ParamStore,
    pub word_vectors: ParamId,
    pub text: TextEncoderParams,
    pub perceiver: SemanticPerceiverParams,
    pub aggregator: AggregatorParams,
    pub image: ImageEncoderParams,
    pub local: LocalAlignParams,
    cache: Mutex<Option<(CacheKey, Arc<ClassEmbeddings>)>>,
}

impl MadsModel {
    /// Fresh model. Parameter names and shapes depend only on the config, so
    /// a checkpoint can overwrite values by name.
    pub fn new(config: ModelConfig, views: AttributeViewSet, words: EmbeddingTable, seed: u64) -> Result<Self> {
        config.validate()?;
        if views.len() != config.num_views {
            return Err(MadsError::Config(format!(
                "{} attribute views but num_views is {}",
                views.len(),
                config.num_views
            )));
        }
        if words.dim() != config.word_dim {
            return Err(MadsError::Config(format!(
                "word vectors have width {} but word_dim is {}",
                words.dim(),
                config.word_dim
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let word_vectors = store.add("text.word_vectors", words.table, false);
        let text = TextEncoderParams::init(&mut store, &mut rng, &config);
        let perceiver = SemanticPerceiverParams::init(&mut store, &mut rng, &config);
        let aggregator = AggregatorParams::init(&mut store, &mut rng, &config);
        let image = ImageEncoderParams::init(&mut store, &mut rng, &config);
        let local = LocalAlignParams::init(&mut store, &mut rng, &config);
        Ok(Self {
            config,
            views,
            vocab: words.vocab,
            store,
            word_vectors,
            text,
            perceiver,
            aggregator,
            image,
            local,
            cache: Mutex::new(None),
        })
    }

    pub fn prepare(&self, docs: &[MultiAttributeDocument], lexicon: &VisualWordLexicon) -> Result<Vec<PreparedDocument>> {
        prepare_documents(docs, &self.views, lexicon, &self.vocab, self.config.max_len)
    }

    /// Runs the text tower and aggregation for one category inside `g`.
    pub fn class_forward(&self, g: &mut Graph, doc: &PreparedDocument) -> Result<(SemanticEmbeddings, Vec<ViewFeatures>)> {
        if doc.views.len() != self.config.num_views {
            return Err(MadsError::Shape(format!(
                "category {} has {} paragraphs for {} views",
                doc.category_id,
                doc.views.len(),
                self.config.num_views
            )));
        }
        let table = self.store.get(self.word_vectors);
        let feats = doc
            .views
            .iter()
            .enumerate()
            .map(|(i, t)| view_features(g, table, t, &self.text, &self.perceiver, i))
            .collect::<Result<Vec<_>>>()?;
        let (a_g, a_l) = aggregate_attend(g, &feats, &self.aggregator)?;
        let emb = fuse(g, &feats, a_g, a_l, self.config.beta)?;
        Ok((emb, feats))
    }

    /// Encodes a batch of images inside `g`.
    pub fn image_forward(&self, g: &mut Graph, source: &ImageSource, refs: &[&str]) -> Result<ImageFeatures> {
        let outs = source.outputs(refs)?;
        encode_images(g, source.backbone, &self.image, &outs)
    }

    /// Class embeddings without dropout, evaluated in parallel over categories.
    pub fn compute_class_embeddings(&self, docs: &[PreparedDocument]) -> Result<ClassEmbeddings> {
        let per_class: Vec<(Matrix, Matrix, Matrix, Vec<Matrix>)> = docs
            .par_iter()
            .map(|doc| {
                let mut g = Graph::new(&self.store);
                let (emb, feats) = self.class_forward(&mut g, doc)?;
                let cores: Vec<_> = emb.per_view_core.iter().map(|&c| g.tape.value(c).view().to_owned()).collect();
                let core_views: Vec<_> = cores.iter().map(|c| c.view()).collect();
                let cores = ndarray::concatenate(ndarray::Axis(0), &core_views).expect("uniform width");
                Ok((
                    g.tape.value(emb.global).clone(),
                    g.tape.value(emb.local).clone(),
                    cores,
                    feats.iter().map(|f| g.tape.value(f.attention).clone()).collect(),
                ))
            })
            .collect::<Result<_>>()?;
        if per_class.is_empty() {
            return Err(MadsError::EmptyInput("no category documents".into()));
        }
        let rows: Vec<_> = per_class.iter().map(|p| p.0.view()).collect();
        let global = ndarray::concatenate(ndarray::Axis(0), &rows).expect("uniform width");
        let mut local = Vec::new();
        let mut cores = Vec::new();
        let mut maps = Vec::new();
        for (_, l, c, m) in per_class {
            local.push(l);
            cores.push(c);
            maps.push(m);
        }
        Ok(ClassEmbeddings { category_ids: docs.iter().map(|d| d.category_id).collect(), global, local, cores, maps })
    }

    /// Cached class embeddings; recomputed whenever parameters or the
    /// category list change.
    pub fn class_embeddings(&self, docs: &[PreparedDocument]) -> Result<Arc<ClassEmbeddings>> {
        let key: CacheKey = (self.store.version(), docs.iter().map(|d| d.category_id).collect());
        let mut cache = self.cache.lock().expect("embedding cache lock");
        if let Some((k, emb)) = cache.as_ref() {
            if *k == key {
                return Ok(emb.clone());
            }
        }
        let emb = Arc::new(self.compute_class_embeddings(docs)?);
        *cache = Some((key, emb.clone()));
        Ok(emb)
    }

    /// Global image features (`n × r`) without dropout, in chunks.
    pub fn image_globals(&self, source: &ImageSource, refs: &[&str]) -> Result<Matrix> {
        const CHUNK: usize = 64;
        let parts: Vec<Matrix> = refs
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = Graph::new(&self.store);
                let f = self.image_forward(&mut g, source, chunk)?;
                Ok(g.tape.value(f.global).clone())
            })
            .collect::<Result<_>>()?;
        if parts.is_empty() {
            return Ok(Matrix::zeros((0, self.config.dim)));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        Ok(ndarray::concatenate(ndarray::Axis(0), &views).expect("uniform width"))
    }

    /// Raw global scores `I_g · T_g` of every image against every class.
    pub fn global_scores(&self, source: &ImageSource, refs: &[&str], classes: &ClassEmbeddings) -> Result<Matrix> {
        let ig = self.image_globals(source, refs)?;
        let scores = ig.dot(&classes.global.t());
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(MadsError::Numerical("non-finite global scores".into()));
        }
        Ok(scores)
    }

    /// Mean of the per-word maximum attention score over visual words.
    pub fn visual_focus_mass(&self, docs: &[PreparedDocument]) -> Result<f64> {
        let emb = self.compute_class_embeddings(docs)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for (doc, maps) in docs.iter().zip(&emb.maps) {
            for (t, h) in doc.views.iter().zip(maps) {
                for (j, &psi) in t.visual_mask.iter().enumerate() {
                    if psi == 1 {
                        total += h.column(j).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        count += 1;
                    }
                }
            }
        }
        if count == 0 {
            return Err(MadsError::EmptyInput("documents contain no visual words".into()));
        }
        Ok(total / count as f64)
    }

    pub(crate) fn invalidate_cache(&self) {
        *self.cache.lock().expect("embedding cache lock") = None;
    }
}
