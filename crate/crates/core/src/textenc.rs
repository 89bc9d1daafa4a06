//! Per-view text pathway: frozen word vectors refined by a shallow MLP, a
//! transformer encoder with a view-specific [CLS] token, and the semantic
//! perceiver that compresses word features into `K` salient features.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, ParamId, ParamStore, Var};
use crate::config::ModelConfig;
use crate::corpus::{normalize_word, TokenizedParagraph, Vocabulary, UNK_TOKEN};
use crate::error::{MadsError, Result};
use crate::nn::{attention, init_weight, normal_matrix, FeedForward, Graph, LayerNorm, Linear, ProjectedAttention};

/// Frozen word vectors. Row 0 is the UNK vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocabulary,
    pub table: Matrix,
}

/// Counts gathered while building a corpus-specific table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CoverageReport {
    pub found: usize,
    pub missing: Vec<String>,
}

impl EmbeddingTable {
    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    /// Reads the text format: a `vocab_size d` header line, then `word v1 ... vd` lines.
    /// Words repeated after normalization keep their first vector.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| MadsError::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let ctx = path.display().to_string();
        let header = lines
            .next()
            .ok_or_else(|| MadsError::schema(&ctx, "empty embedding file"))?
            .map_err(|e| MadsError::io(path, e))?;
        let mut it = header.split_whitespace();
        let (Some(n), Some(d), None) = (it.next(), it.next(), it.next()) else {
            return Err(MadsError::schema(&ctx, "header must be `vocab_size d`"));
        };
        let n: usize = n.parse().map_err(|e| MadsError::schema(&ctx, e))?;
        let d: usize = d.parse().map_err(|e| MadsError::schema(&ctx, e))?;
        let mut vocab = Vocabulary::new();
        let mut rows: Vec<f64> = vec![0.0; d];
        let mut unk: Option<Vec<f64>> = None;
        for (lineno, line) in lines.enumerate() {
            let line = line.map_err(|e| MadsError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default();
            let values: Vec<f64> = parts
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| MadsError::schema(format!("{ctx} line {}", lineno + 2), e))?;
            if values.len() != d {
                return Err(MadsError::schema(
                    format!("{ctx} line {}", lineno + 2),
                    format!("expected {d} values, found {}", values.len()),
                ));
            }
            if word == UNK_TOKEN {
                unk = Some(values);
                continue;
            }
            let norm = normalize_word(word);
            if norm.is_empty() || vocab.id(&norm).is_some() {
                continue;
            }
            vocab.insert(&norm);
            rows.extend(values);
        }
        if vocab.len() - 1 > n {
            log::warn!("{ctx}: header declares {n} words but {} were read", vocab.len() - 1);
        }
        let mut table = Matrix::from_shape_vec((vocab.len(), d), rows).expect("row-major table");
        if let Some(u) = unk {
            table.row_mut(0).assign(&ndarray::Array1::from(u));
        }
        Ok(Self { vocab, table })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{} {}", self.vocab.len(), self.dim()).expect("in-memory write");
        for (id, word) in self.vocab.words().iter().enumerate() {
            let values: Vec<String> = self.table.row(id).iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{word} {}", values.join(" ")).expect("in-memory write");
        }
        crate::corpus::write_atomic(path, &out)
    }

    /// Random Gaussian vectors for `words`, for synthetic corpora.
    pub fn synthetic<S: AsRef<str>>(words: &[S], dim: usize, seed: u64) -> Self {
        let mut vocab = Vocabulary::new();
        for w in words {
            vocab.insert(w.as_ref());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_90e5);
        let mut table = normal_matrix(&mut rng, vocab.len(), dim, 1.0);
        table.row_mut(0).fill(0.0);
        Self { vocab, table }
    }

    /// Table restricted to `words`; words absent from `self` fall back to UNK
    /// and are listed in the report.
    pub fn restrict<'a>(&self, words: impl IntoIterator<Item = &'a str>) -> (Self, CoverageReport) {
        let mut vocab = Vocabulary::new();
        let mut rows = vec![self.table.row(0).to_owned()];
        let mut report = CoverageReport::default();
        for w in words {
            let w = normalize_word(w);
            if w.is_empty() || vocab.id(&w).is_some() || report.missing.contains(&w) {
                continue;
            }
            match self.vocab.id(&w) {
                Some(id) => {
                    vocab.insert(&w);
                    rows.push(self.table.row(id).to_owned());
                    report.found += 1;
                }
                None => report.missing.push(w),
            }
        }
        let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
        let table = ndarray::concatenate(Axis(0), &views).expect("uniform width");
        (Self { vocab, table }, report)
    }
}

#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub ffn: FeedForward,
    pub heads: usize,
}

impl EncoderBlock {
    fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, cfg: &ModelConfig) -> Self {
        let r = cfg.dim;
        Self {
            ln1: LayerNorm::init(store, &format!("{name}.ln1"), r),
            q: Linear::init(store, rng, &format!("{name}.attn.q"), r, r, true),
            k: Linear::init(store, rng, &format!("{name}.attn.k"), r, r, true),
            v: Linear::init(store, rng, &format!("{name}.attn.v"), r, r, true),
            o: Linear::init(store, rng, &format!("{name}.attn.o"), r, r, true),
            ln2: LayerNorm::init(store, &format!("{name}.ln2"), r),
            ffn: FeedForward::init(store, rng, &format!("{name}.ffn"), r, r * cfg.mlp_ratio),
            heads: cfg.text_heads,
        }
    }

    /// Pre-norm block: multi-head self-attention then a GELU MLP, each residual.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.ln1.forward(g, x);
        let q = self.q.forward(g, h);
        let k = self.k.forward(g, h);
        let v = self.v.forward(g, h);
        let width = g.tape.shape(q).1 / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let qh = g.tape.slice_cols(q, head * width, width);
            let kh = g.tape.slice_cols(k, head * width, width);
            let vh = g.tape.slice_cols(v, head * width, width);
            outs.push(attention(g, qh, kh, vh).0);
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.tape.concat_cols(&outs) };
        let o = self.o.forward(g, merged);
        let o = g.dropout(o);
        let x = g.tape.add(x, o);
        let h = self.ln2.forward(g, x);
        let f = self.ffn.forward(g, h);
        let f = g.dropout(f);
        g.tape.add(x, f)
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoderParams {
    /// `d × r`
    pub w1: ParamId,
    /// `r × r`
    pub w2: ParamId,
    /// Per-view [CLS] tokens (`1 × r`), or one shared token.
    pub cls: Vec<ParamId>,
    /// Learned positions, `max_len × r`; row 0 belongs to [CLS].
    pub positions: ParamId,
    pub blocks: Vec<EncoderBlock>,
    pub max_len: usize,
}

impl TextEncoderParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let r = cfg.dim;
        let w1 = init_weight(store, rng, "text.mlp.w1", cfg.word_dim, r);
        let w2 = init_weight(store, rng, "text.mlp.w2", r, r);
        let n_cls = if cfg.shared_view_tokens { 1 } else { cfg.num_views };
        let cls = (0..n_cls)
            .map(|i| {
                let v = normal_matrix(rng, 1, r, 0.5);
                store.add(format!("text.cls.{i}"), v, true)
            })
            .collect();
        let positions = store.add("text.positions", normal_matrix(rng, cfg.max_len, r, 0.1), true);
        let blocks = (0..cfg.text_layers)
            .map(|l| EncoderBlock::init(store, rng, &format!("text.block{l}"), cfg))
            .collect();
        Self { w1, w2, cls, positions, blocks, max_len: cfg.max_len }
    }

    fn cls_for(&self, view: usize) -> ParamId {
        self.cls[view.min(self.cls.len() - 1)]
    }
}

/// Looks up frozen word vectors and applies `W_2 · relu(W_1 · x)` row-wise.
pub fn embed_words(g: &mut Graph, table: &Matrix, tokens: &TokenizedParagraph, params: &TextEncoderParams) -> Result<Var> {
    if let Some(&id) = tokens.token_ids.iter().find(|&&id| id >= table.nrows()) {
        return Err(MadsError::Vocabulary { id, size: table.nrows() });
    }
    let glove = table.select(Axis(0), &tokens.token_ids);
    let x = g.tape.constant(glove);
    let w1 = g.p(params.w1);
    let w2 = g.p(params.w2);
    let h = g.tape.matmul(x, w1);
    let h = g.tape.relu(h);
    Ok(g.tape.matmul(h, w2))
}

/// Prepends the view's [CLS] token, adds positions and runs the encoder
/// blocks. Returns the [CLS] output (`1 × r`) and the word outputs (`M × r`).
pub fn encode_paragraph(g: &mut Graph, word_embs: Var, params: &TextEncoderParams, view: usize) -> Result<(Var, Var)> {
    let m = g.tape.shape(word_embs).0;
    if m == 0 {
        return Err(MadsError::EmptyInput("paragraph without tokens".into()));
    }
    if m + 1 > params.max_len {
        return Err(MadsError::Length { len: m + 1, max: params.max_len });
    }
    let cls = g.p(params.cls_for(view));
    let x = g.tape.concat_rows(&[cls, word_embs]);
    let pos = g.p(params.positions);
    let pos = g.tape.slice_rows(pos, 0, m + 1);
    let mut x = g.tape.add(x, pos);
    for block in &params.blocks {
        x = block.forward(g, x);
    }
    let core = g.tape.slice_rows(x, 0, 1);
    let local = g.tape.slice_rows(x, 1, m);
    Ok((core, local))
}

#[derive(Debug, Clone)]
pub struct SemanticPerceiverParams {
    /// Per-view queries (`K × r`), or one shared set.
    pub queries: Vec<ParamId>,
    /// Chained cross-attention layers; layer `n+1` queries with layer `n` outputs.
    pub layers: Vec<ProjectedAttention>,
}

impl SemanticPerceiverParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let n = if cfg.shared_view_tokens { 1 } else { cfg.num_views };
        let queries = (0..n)
            .map(|i| store.add(format!("perceiver.queries.{i}"), normal_matrix(rng, cfg.num_queries, cfg.dim, 0.5), true))
            .collect();
        let layers = (0..cfg.perceiver_layers)
            .map(|l| ProjectedAttention::init(store, rng, &format!("perceiver.layer{l}"), cfg.dim, cfg.head_dim))
            .collect();
        Self { queries, layers }
    }

    pub fn num_queries(&self, store: &ParamStore) -> usize {
        store.get(self.queries[0]).nrows()
    }
}

/// Cross-attends the view's queries over word features. Returns the salient
/// features (`K × r`) and the final layer's attention map (`K × M`).
pub fn perceive(g: &mut Graph, local: Var, params: &SemanticPerceiverParams, view: usize) -> (Var, Var) {
    let mut q = g.p(params.queries[view.min(params.queries.len() - 1)]);
    let mut map = None;
    for layer in &params.layers {
        let (out, weights) = layer.forward(g, q, local);
        q = out;
        map = Some(weights);
    }
    (q, map.expect("at least one perceiver layer"))
}

/// Graph handles for one view of one document.
#[derive(Debug, Clone, Copy)]
pub struct ViewFeatures {
    pub view_index: usize,
    /// Single-view core feature, `1 × r`.
    pub core: Var,
    /// Salient local features, `K × r`.
    pub salient: Var,
    /// Attention map, `K × M`.
    pub attention: Var,
}

/// Full per-view pathway for one tokenized paragraph.
pub fn view_features(
    g: &mut Graph,
    table: &Matrix,
    tokens: &TokenizedParagraph,
    text: &TextEncoderParams,
    perceiver: &SemanticPerceiverParams,
    view: usize,
) -> Result<ViewFeatures> {
    let w = embed_words(g, table, tokens, text)?;
    let (core, local) = encode_paragraph(g, w, text, view)?;
    let (salient, attention) = perceive(g, local, perceiver, view);
    Ok(ViewFeatures { view_index: view, core, salient, attention })
}
