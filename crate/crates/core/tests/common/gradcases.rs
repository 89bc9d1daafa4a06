//! Finite-difference cases for every module and loss, on small random instances.

use std::collections::BTreeMap;

use super::{fd_check, random_matrix, rng, FdReport, Sizes};
use mads::aggregate::{aggregate_attend, fuse, AggregatorParams};
use mads::autodiff::{Matrix, ParamStore, Var};
use mads::config::{FocusForm, LossWeights, ModelConfig, PoolMode, SsfMode};
use mads::corpus::{AttributeViewSet, TokenizedParagraph, Vocabulary};
use mads::engine::{ImageSource, MadsModel, PreparedDocument};
use mads::imageenc::{encode_images, ImageEncoderParams, SyntheticBackbone, SyntheticBackboneConfig};
use mads::nn::Graph;
use mads::objective::{focus_loss, global_loss, local_logits, local_loss, total_loss, LocalAlignParams, LossParts};
use mads::textenc::{embed_words, encode_paragraph, perceive, EmbeddingTable, SemanticPerceiverParams, TextEncoderParams, ViewFeatures};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 20;

fn cfg(s: &Sizes) -> ModelConfig {
    ModelConfig {
        word_dim: 4,
        dim: s.dim,
        head_dim: s.head,
        num_views: s.views,
        num_queries: s.queries,
        text_layers: 0,
        text_heads: 1,
        perceiver_layers: 1,
        mlp_ratio: 2,
        max_len: 8,
        backbone_width: 5,
        backbone_blocks: 2,
        num_patches: s.patches,
        ..ModelConfig::default()
    }
}

/// Replaces every parameter with random values so that unit scales, zero
/// shifts and other structured initializations do not hide errors.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (r, c) = store.get(id).dim();
        store.set(id, random_matrix(rng, r, c, 0.8));
    }
}

fn tokens(rng: &mut ChaCha8Rng, m: usize, vocab: usize) -> TokenizedParagraph {
    let token_ids: Vec<usize> = (0..m).map(|_| rng.random_range(1..vocab)).collect();
    TokenizedParagraph {
        tokens: token_ids.iter().map(|i| format!("w{i}")).collect(),
        token_ids,
        visual_mask: (0..m).map(|_| rng.random_range(0..2u8)).collect(),
    }
}

/// Summary of one case over all its instances.
#[derive(Debug, Clone)]
pub struct CaseSummary {
    pub name: &'static str,
    pub instances: usize,
    pub coords: usize,
    pub worst_rel: f64,
}

/// Runs `check` on `INSTANCES` random instances; any gradient mismatch panics.
fn per_instance(name: &'static str, check: impl Fn(u64, &mut ChaCha8Rng, Sizes) -> FdReport) -> CaseSummary {
    let reports: Vec<FdReport> = (0..INSTANCES)
        .map(|seed| {
            let mut r = rng(seed * 7919 + name.len() as u64);
            let sizes = Sizes::random(&mut r);
            check(seed, &mut r, sizes)
        })
        .collect();
    let coords: usize = reports.iter().map(|r| r.coords).sum();
    let worst_rel = reports.iter().map(|r| r.worst_rel).fold(0.0, f64::max);
    assert!(coords > 0, "{name}: nothing checked");
    CaseSummary { name, instances: reports.len(), coords, worst_rel }
}

pub fn word_mlp() -> CaseSummary {
    per_instance("word mlp", |seed, r, s| {
        let c = cfg(&s);
        let mut store = ParamStore::new();
        let params = TextEncoderParams::init(&mut store, r, &c);
        randomize(&mut store, r);
        let table = random_matrix(r, 6, c.word_dim, 1.0);
        let t = tokens(r, s.words, 6);
        fd_check(&store, &[], seed, |g, _| embed_words(g, &table, &t, &params).unwrap())
    })
}

pub fn text_encoder_with_cls_positions_and_blocks() -> CaseSummary {
    per_instance("text encoder", |seed, r, s| {
        let heads: Vec<usize> = (1..=s.dim).filter(|h| s.dim % h == 0).collect();
        let c = ModelConfig {
            text_layers: r.random_range(1..=2),
            text_heads: heads[r.random_range(0..heads.len())],
            shared_view_tokens: r.random(),
            ..cfg(&s)
        };
        let mut store = ParamStore::new();
        let params = TextEncoderParams::init(&mut store, r, &c);
        randomize(&mut store, r);
        let view = r.random_range(0..s.views);
        let words = random_matrix(r, s.words, s.dim, 1.0);
        fd_check(&store, &[words], seed, |g, x| {
            let (core, local) = encode_paragraph(g, x[0], &params, view).unwrap();
            g.tape.concat_rows(&[core, local])
        })
    })
}

pub fn semantic_perceiver() -> CaseSummary {
    per_instance("perceiver", |seed, r, s| {
        let c = ModelConfig { perceiver_layers: r.random_range(1..=2), ..cfg(&s) };
        let mut store = ParamStore::new();
        let params = SemanticPerceiverParams::init(&mut store, r, &c);
        randomize(&mut store, r);
        let view = r.random_range(0..s.views);
        let local = random_matrix(r, s.words, s.dim, 1.0);
        fd_check(&store, &[local], seed, |g, x| {
            let (salient, map) = perceive(g, x[0], &params, view);
            g.tape.concat_cols(&[salient, map])
        })
    })
}

/// View features built from input leaves: cores first, then salient features.
fn leaf_views(g: &mut Graph, x: &[Var], s: &Sizes) -> Vec<ViewFeatures> {
    (0..s.views)
        .map(|i| {
            let attention = g.tape.constant(Matrix::zeros((s.queries, 1)));
            ViewFeatures { view_index: i, core: x[i], salient: x[s.views + i], attention }
        })
        .collect()
}

fn view_inputs(r: &mut ChaCha8Rng, s: &Sizes) -> Vec<Matrix> {
    let mut inputs: Vec<Matrix> = (0..s.views).map(|_| random_matrix(r, 1, s.dim, 1.0)).collect();
    inputs.extend((0..s.views).map(|_| random_matrix(r, s.queries, s.dim, 1.0)));
    inputs
}

pub fn aggregator() -> CaseSummary {
    per_instance("aggregator", |seed, r, s| {
        let c = ModelConfig { aggregator_prenorm: r.random(), ..cfg(&s) };
        let mut store = ParamStore::new();
        let params = AggregatorParams::init(&mut store, r, &c);
        randomize(&mut store, r);
        let inputs = view_inputs(r, &s);
        fd_check(&store, &inputs, seed, |g, x| {
            let views = leaf_views(g, x, &s);
            let (a_g, a_l) = aggregate_attend(g, &views, &params).unwrap();
            g.tape.concat_rows(&[a_g, a_l])
        })
    })
}

pub fn fusion() -> CaseSummary {
    per_instance("fusion", |seed, r, s| {
        let beta = [0.0, 1.0, r.random::<f64>()][r.random_range(0..3)];
        let store = ParamStore::new();
        let mut inputs = view_inputs(r, &s);
        inputs.push(random_matrix(r, 1, s.dim, 1.0));
        inputs.push(random_matrix(r, s.views * s.queries, s.dim, 1.0));
        fd_check(&store, &inputs, seed, |g, x| {
            let views = leaf_views(g, x, &s);
            let n = x.len();
            let emb = fuse(g, &views, x[n - 2], x[n - 1], beta).unwrap();
            g.tape.concat_rows(&[emb.global, emb.local])
        })
    })
}

fn backbone(r: &mut ChaCha8Rng, s: &Sizes, width: usize, blocks: usize) -> SyntheticBackbone {
    let config = SyntheticBackboneConfig {
        seed: r.random(),
        width,
        patches: s.patches,
        blocks,
        views: 1,
        latent_dim: 1,
        ..SyntheticBackboneConfig::default()
    };
    SyntheticBackbone::new(config, BTreeMap::new()).unwrap()
}

pub fn ssf_and_projection() -> CaseSummary {
    per_instance("ssf + projection", |seed, r, s| {
        let blocks = r.random_range(1..=3);
        let width = r.random_range(2..=6);
        let mode = if seed % 2 == 0 { SsfMode::PerBlock } else { SsfMode::FinalOnly };
        let c = ModelConfig { backbone_width: width, backbone_blocks: blocks, ssf_mode: mode, ..cfg(&s) };
        let bb = backbone(r, &s, width, blocks);
        let mut store = ParamStore::new();
        let params = ImageEncoderParams::init(&mut store, r, &c);
        randomize(&mut store, r);
        let n_images = r.random_range(1..=2);
        let outs: Vec<Vec<Matrix>> =
            (0..n_images).map(|_| (0..blocks).map(|_| random_matrix(r, s.patches + 1, width, 1.0)).collect()).collect();
        let refs: Vec<&[Matrix]> = outs.iter().map(Vec::as_slice).collect();
        fd_check(&store, &[], seed, |g, _| {
            let f = encode_images(g, &bb, &params, &refs).unwrap();
            g.tape.concat_rows(&[f.global, f.local])
        })
    })
}

fn local_setup(r: &mut ChaCha8Rng, s: &Sizes) -> (ModelConfig, Vec<Matrix>, Vec<usize>) {
    let c = ModelConfig { pool: if r.random() { PoolMode::Mean } else { PoolMode::Max }, ..cfg(s) };
    let n = r.random_range(1..=3);
    let classes = r.random_range(1..=3);
    let mut inputs = vec![random_matrix(r, n * s.patches, s.dim, 1.0)];
    inputs.extend((0..classes).map(|_| random_matrix(r, s.views * s.queries, s.dim, 1.0)));
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    (c, inputs, labels)
}

pub fn local_cross_attention_scores() -> CaseSummary {
    per_instance("local cross-attention", |seed, r, s| {
        let (c, inputs, _) = local_setup(r, &s);
        let mut store = ParamStore::new();
        let params = LocalAlignParams::init(&mut store, r, &c);
        randomize(&mut store, r);
        fd_check(&store, &inputs, seed, |g, x| local_logits(g, x[0], s.patches, &x[1..], &params).unwrap())
    })
}

pub fn local_loss_gradients() -> CaseSummary {
    per_instance("local loss", |seed, r, s| {
        let (c, inputs, labels) = local_setup(r, &s);
        let mut store = ParamStore::new();
        let params = LocalAlignParams::init(&mut store, r, &c);
        randomize(&mut store, r);
        fd_check(&store, &inputs, seed, |g, x| local_loss(g, x[0], s.patches, &x[1..], &labels, &params).unwrap().0)
    })
}

pub fn global_loss_gradients() -> CaseSummary {
    per_instance("global loss", |seed, r, s| {
        let n = r.random_range(1..=4);
        let classes = r.random_range(1..=4);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let inputs = [random_matrix(r, n, s.dim, 1.0), random_matrix(r, classes, s.dim, 1.0)];
        fd_check(&ParamStore::new(), &inputs, seed, |g, x| global_loss(g, x[0], x[1], &labels).unwrap().0)
    })
}

pub fn focus_loss_gradients() -> CaseSummary {
    per_instance("focus loss", |seed, r, s| {
        let form = if seed % 3 == 2 { FocusForm::Literal } else { FocusForm::Bce };
        let normalize = r.random();
        let lengths: Vec<usize> = (0..s.views).map(|_| r.random_range(1..=5)).collect();
        let masks: Vec<Vec<u8>> = lengths.iter().map(|&m| (0..m).map(|_| r.random_range(0..2u8)).collect()).collect();
        let inputs: Vec<Matrix> = lengths.iter().map(|&m| random_matrix(r, s.queries, m, 2.0)).collect();
        fd_check(&ParamStore::new(), &inputs, seed, |g, x| {
            // Row-stochastic maps, as produced by attention.
            let maps: Vec<Var> = x.iter().map(|&v| g.tape.softmax_rows(v)).collect();
            let mask_refs: Vec<&[u8]> = masks.iter().map(Vec::as_slice).collect();
            focus_loss(g, &maps, &mask_refs, form, normalize).unwrap()
        })
    })
}

pub fn total_loss_gradients() -> CaseSummary {
    per_instance("total loss", |seed, r, _| {
        let weights = LossWeights { local: r.random(), focus: r.random() };
        let inputs: Vec<Matrix> = (0..3).map(|_| random_matrix(r, 1, 1, 2.0)).collect();
        fd_check(&ParamStore::new(), &inputs, seed, |g, x| {
            total_loss(g, LossParts { global: x[0], local: x[1], focus: x[2] }, &weights)
        })
    })
}

/// The whole training objective through every module of a small model.
pub fn full_objective() -> CaseSummary {
    per_instance("full objective", |seed, r, s| {
        let heads: Vec<usize> = (1..=s.dim).filter(|h| s.dim % h == 0).collect();
        let c = ModelConfig {
            text_layers: r.random_range(0..=1),
            text_heads: heads[r.random_range(0..heads.len())],
            perceiver_layers: r.random_range(1..=2),
            beta: r.random(),
            backbone_blocks: 2,
            ..cfg(&s)
        };
        let names: Vec<String> = (0..s.views).map(|i| format!("view {i}")).collect();
        let views = AttributeViewSet::from_names(&names).unwrap();
        let mut vocab = Vocabulary::new();
        for i in 1..6 {
            vocab.insert(&format!("w{i}"));
        }
        let table = random_matrix(r, vocab.len(), c.word_dim, 1.0);
        let mut model = MadsModel::new(c.clone(), views, EmbeddingTable { vocab, table }, seed).unwrap();
        randomize(&mut model.store, r);
        // Word vectors are frozen and must stay so.
        let classes = r.random_range(1..=3);
        let docs: Vec<PreparedDocument> = (0..classes)
            .map(|k| PreparedDocument {
                category_id: k as u32,
                category_name: format!("c{k}"),
                views: (0..s.views)
                    .map(|_| {
                        let m = r.random_range(1..=s.words);
                        tokens(r, m, 6)
                    })
                    .collect(),
            })
            .collect();
        let bb = backbone(r, &s, c.backbone_width, c.backbone_blocks);
        let n = r.random_range(1..=2);
        let features: BTreeMap<String, Vec<Matrix>> = (0..n)
            .map(|i| (format!("img{i}"), (0..2).map(|_| random_matrix(r, s.patches + 1, c.backbone_width, 1.0)).collect()))
            .collect();
        let refs: Vec<String> = features.keys().cloned().collect();
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..classes)).collect();
        let weights = LossWeights { local: r.random(), focus: r.random() };
        let model = &model;
        fd_check(&model.store, &[], seed, |g, _| {
            let source = ImageSource { backbone: &bb, features: &features };
            let mut globals = Vec::new();
            let mut locals = Vec::new();
            let mut focus = Vec::new();
            for doc in &docs {
                let (emb, feats) = model.class_forward(g, doc).unwrap();
                globals.push(emb.global);
                locals.push(emb.local);
                let maps: Vec<Var> = feats.iter().map(|f| f.attention).collect();
                let masks: Vec<&[u8]> = doc.views.iter().map(|t| t.visual_mask.as_slice()).collect();
                focus.push(focus_loss(g, &maps, &masks, c.focus_form, false).unwrap());
            }
            let class_global = g.tape.concat_rows(&globals);
            let focus = g.tape.concat_rows(&focus);
            let focus = g.tape.mean_all(focus);
            let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
            let img = model.image_forward(g, &source, &refs).unwrap();
            let (lg, _) = global_loss(g, img.global, class_global, &labels).unwrap();
            let (ll, _) = local_loss(g, img.local, img.patches, &locals, &labels, &model.local).unwrap();
            total_loss(g, LossParts { global: lg, local: ll, focus }, &weights)
        })
    })
}

/// Every case, in a fixed order.
pub const ALL: &[fn() -> CaseSummary] = &[
    word_mlp,
    text_encoder_with_cls_positions_and_blocks,
    semantic_perceiver,
    aggregator,
    fusion,
    ssf_and_projection,
    local_cross_attention_scores,
    local_loss_gradients,
    global_loss_gradients,
    focus_loss_gradients,
    total_loss_gradients,
    full_objective,
];
