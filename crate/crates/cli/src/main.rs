//! `mads` command-line driver.
//!
//! Every command reads a profile (built-in name or JSON file), applies flag
//! overrides and writes its artifacts into `--out-dir`. Failures print one
//! JSON error record on stderr and exit nonzero.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mads::autodiff::softmax_rows;
use mads::collect::{collect_all, mock_encyclopedia_entry, HttpClient, LlmClient, MockLlm};
use mads::corpus::{
    build_lexicon, gen_synthetic_dataset, load_documents, read_to_string, save_documents, split_words, write_atomic,
    AttributeViewSet, DatasetManifest, LatentTable, MultiAttributeDocument, Split, VisualWordLexicon,
};
use mads::engine::{
    evaluate, explain, gamma_grid, load_checkpoint, predict_gzsl, predict_zsl, save_checkpoint, train, EvalOptions,
    ImageSource, MadsModel, PreparedDocument,
};
use mads::imageenc::{FeatureStore, SyntheticBackbone, SyntheticBackboneConfig};
use mads::profile::{synthetic_backbone_config, RunProfile};
use mads::textenc::EmbeddingTable;
use mads::MadsError;

const MANIFEST: &str = "manifest.json";
const DOCUMENTS: &str = "documents.json";
const VIEWS: &str = "views.json";
const LEXICON: &str = "lexicon.txt";
const EMBEDDINGS: &str = "embeddings.txt";
const LATENTS: &str = "latents.json";
const FEATURES: &str = "features";
const CHECKPOINT: &str = "checkpoint.mads";
const METRICS: &str = "metrics.jsonl";

#[derive(Parser, Debug)]
#[command(name = "mads", version, about = "Zero-shot image classification from multi-attribute documents")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Built-in profile (awa2-like, cub-like, cub-like-r64, flo-like, synthetic) or a JSON profile file.
    #[arg(long, global = true, default_value = "synthetic")]
    profile: String,
    /// Seed for data generation, initialization, training and the mock LLM.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Calibration factor for GZSL; disables the sweep-based choice.
    #[arg(long, global = true)]
    gamma: Option<f64>,
    /// Weight of the mean core feature in the global class embedding.
    #[arg(long, global = true)]
    beta: Option<f64>,
    /// Weight of the focus loss on visual words
    #[arg(long, global = true)]
    lambda_focus: Option<f64>,
    /// Weight of the local image-document alignment loss
    #[arg(long, global = true)]
    lambda_local: Option<f64>,
    /// Learnable queries per view.
    #[arg(long, global = true)]
    k_queries: Option<usize>,
    /// Directory for every artifact a command reads or writes
    #[arg(long, global = true, default_value = "mads-out")]
    out_dir: PathBuf,
    /// Directory for cached LLM responses.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Answer LLM prompts with the seeded offline mock.
    #[arg(long, global = true)]
    mock_llm: bool,
}

#[derive(Args, Debug)]
struct DataArgs {
    /// Directory holding manifest, documents, views, lexicon, embeddings and features (default: --out-dir).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Trained checkpoint (default: <out-dir>/checkpoint.mads).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build attribute views and multi-attribute documents with an LLM.
    Collect {
        /// Class names, one per line, in category-id order.
        #[arg(long)]
        classes: PathBuf,
        /// JSON object mapping class name to collected encyclopedia text.
        #[arg(long)]
        raw_docs: Option<PathBuf>,
        /// Base URL of an OpenAI-compatible endpoint, e.g. http://localhost:8000/v1.
        #[arg(long)]
        llm_url: Option<String>,
        /// Model name sent to the endpoint (and part of the cache key)
        #[arg(long)]
        model_id: Option<String>,
        /// Environment variable holding the API key.
        #[arg(long, default_value = "MADS_API_KEY")]
        api_key_env: String,
    },
    /// Precompute backbone block outputs for every manifest image.
    PrepareFeatures {
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train on the seen classes and write a checkpoint and metrics log.
    Train {
        #[command(flatten)]
        data: DataArgs,
    },
    /// ZSL and GZSL evaluation with a calibration sweep.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        /// Manifest whose test splits select the calibration factor.
        #[arg(long)]
        validation: Option<PathBuf>,
    },
    /// Per-image predictions.
    Predict {
        #[command(flatten)]
        model: ModelArgs,
        /// Images to classify (default: every test image).
        #[arg(long)]
        image: Vec<String>,
        /// Predict over seen and unseen classes with calibrated stacking.
        #[arg(long)]
        gzsl: bool,
    },
    /// Per-view attention dump for one image.
    Explain {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        image: String,
        #[arg(long)]
        top_k: Option<usize>,
    },
    /// Write a synthetic corpus with features and word vectors.
    GenSynthetic,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", json!({"status": "error", "kind": "usage", "message": first}));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.chain().find_map(|c| c.downcast_ref::<MadsError>()).map_or("error", MadsError::kind);
            eprintln!("{}", json!({"status": "error", "kind": kind, "message": error_message(&e)}));
            ExitCode::FAILURE
        }
    }
}

/// The error chain on one line. Library errors already embed their source,
/// so links repeated by the previous message are skipped.
fn error_message(e: &anyhow::Error) -> String {
    let mut msg = String::new();
    for link in e.chain() {
        let s = link.to_string();
        if msg.ends_with(&s) {
            continue;
        }
        if !msg.is_empty() {
            msg.push_str(": ");
        }
        msg.push_str(&s);
    }
    msg.replace('\n', " ")
}

fn run(cli: &Cli) -> Result<()> {
    let profile = load_profile(&cli.global)?;
    let out = &cli.global.out_dir;
    match &cli.command {
        Command::GenSynthetic => gen_synthetic(&profile, out),
        Command::Collect { classes, raw_docs, llm_url, model_id, api_key_env } => {
            collect(&cli.global, &profile, classes, raw_docs.as_deref(), llm_url.as_deref(), model_id.as_deref(), api_key_env)
        }
        Command::PrepareFeatures { data } => {
            let paths = DataPaths::new(&profile, data, out);
            prepare_features(&profile, &paths)
        }
        Command::Train { data } => {
            let paths = DataPaths::new(&profile, data, out);
            train_cmd(&profile, &paths, out)
        }
        Command::Eval { model, validation } => {
            let paths = DataPaths::new(&profile, &model.data, out);
            let ckpt = checkpoint_path(&profile, model, out);
            let validation = validation.clone().or_else(|| profile.paths.validation_manifest.clone());
            eval_cmd(&cli.global, &profile, &paths, &ckpt, validation.as_deref(), out)
        }
        Command::Predict { model, image, gzsl } => {
            let paths = DataPaths::new(&profile, &model.data, out);
            let ckpt = checkpoint_path(&profile, model, out);
            predict_cmd(&cli.global, &profile, &paths, &ckpt, image, *gzsl, out)
        }
        Command::Explain { model, image, top_k } => {
            let paths = DataPaths::new(&profile, &model.data, out);
            let ckpt = checkpoint_path(&profile, model, out);
            explain_cmd(&cli.global, &profile, &paths, &ckpt, image, top_k.unwrap_or(profile.eval.explain_top_k), out)
        }
    }
}

/// Profile with flag overrides applied; flags win over the profile file.
fn load_profile(g: &Global) -> Result<RunProfile> {
    let mut p = RunProfile::resolve(&g.profile)?;
    if let Some(seed) = g.seed {
        p.train.seed = seed;
    }
    if let Some(b) = g.beta {
        p.model.beta = b;
    }
    if let Some(k) = g.k_queries {
        p.model.num_queries = k;
    }
    if let Some(l) = g.lambda_focus {
        p.train.loss_weights.focus = l;
    }
    if let Some(l) = g.lambda_local {
        p.train.loss_weights.local = l;
    }
    if let Some(gamma) = g.gamma {
        p.eval.gamma = Some(gamma);
    }
    if let Some(dir) = &g.cache_dir {
        p.collection.cache_dir = Some(dir.clone());
    }
    p.validate()?;
    Ok(p)
}

fn checkpoint_path(profile: &RunProfile, model: &ModelArgs, out: &Path) -> PathBuf {
    model.checkpoint.clone().or_else(|| profile.paths.checkpoint.clone()).unwrap_or_else(|| out.join(CHECKPOINT))
}

struct DataPaths {
    manifest: PathBuf,
    documents: PathBuf,
    views: PathBuf,
    lexicon: PathBuf,
    embeddings: PathBuf,
    features: PathBuf,
    latents: PathBuf,
}

impl DataPaths {
    fn new(profile: &RunProfile, data: &DataArgs, out: &Path) -> Self {
        let dir = data.data_dir.clone().unwrap_or_else(|| out.to_path_buf());
        let p = &profile.paths;
        let pick = |given: &Option<PathBuf>, name: &str| given.clone().unwrap_or_else(|| dir.join(name));
        Self {
            manifest: pick(&p.manifest, MANIFEST),
            documents: pick(&p.documents, DOCUMENTS),
            views: pick(&p.views, VIEWS),
            lexicon: pick(&p.lexicon, LEXICON),
            embeddings: pick(&p.embeddings, EMBEDDINGS),
            features: pick(&p.features, FEATURES),
            latents: pick(&p.latents, LATENTS),
        }
    }
}

/// Fails with every missing path named, before any long-running work.
fn require(paths: &[&Path]) -> Result<()> {
    let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        let first = PathBuf::from(&missing[0]);
        let err = std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("required input does not exist (missing: {})", missing.join(", ")),
        );
        return Err(MadsError::io(first, err).into());
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

fn load_views(path: &Path) -> Result<AttributeViewSet> {
    let text = read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| MadsError::schema(path.display().to_string(), e).into())
}

fn gen_synthetic(profile: &RunProfile, out: &Path) -> Result<()> {
    let seed = profile.train.seed;
    let data = gen_synthetic_dataset(seed, &profile.synthetic)?;
    let words = EmbeddingTable::synthetic(&data.words(), profile.model.word_dim, seed);
    let bcfg = synthetic_backbone_config(profile, &data, seed);
    let backbone = SyntheticBackbone::from_latents(bcfg.clone(), &data.latents)?;
    data.manifest.save(&out.join(MANIFEST))?;
    save_documents(&out.join(DOCUMENTS), &data.documents)?;
    write_json(&out.join(VIEWS), &data.views)?;
    data.lexicon.save(&out.join(LEXICON))?;
    words.save(&out.join(EMBEDDINGS))?;
    data.latents.save(&out.join(LATENTS))?;
    let mut store = FeatureStore::open(&out.join(FEATURES))?;
    store.precompute(&data.manifest, &backbone)?;
    store.save_backbone_config(&bcfg)?;
    println!(
        "{}",
        json!({"status": "ok", "command": "gen-synthetic", "seed": seed, "samples": data.manifest.samples.len(), "out_dir": out})
    );
    Ok(())
}

fn collect(
    g: &Global,
    profile: &RunProfile,
    classes: &Path,
    raw_docs: Option<&Path>,
    llm_url: Option<&str>,
    model_id: Option<&str>,
    api_key_env: &str,
) -> Result<()> {
    let mut required = vec![classes];
    required.extend(raw_docs);
    require(&required)?;
    let mut config = profile.collection.clone();
    if let Some(m) = model_id {
        config.model_id = m.to_string();
    }
    let names: Vec<String> = read_to_string(classes)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect();
    if names.is_empty() {
        bail!(MadsError::EmptyInput(format!("{} lists no classes", classes.display())));
    }
    let seed = profile.train.seed;
    let raw: BTreeMap<String, String> = match raw_docs {
        Some(path) => serde_json::from_str(&read_to_string(path)?)
            .map_err(|e| MadsError::schema(path.display().to_string(), e))?,
        None if g.mock_llm => {
            names.iter().map(|n| (n.clone(), mock_encyclopedia_entry(&config.domain, n, seed))).collect()
        }
        None => bail!(MadsError::Config("--raw-docs is required unless --mock-llm is set".into())),
    };
    let client: Box<dyn LlmClient> = match (g.mock_llm, llm_url) {
        (true, _) => Box::new(MockLlm::new(seed)),
        (false, Some(url)) => Box::new(HttpClient::new(url, api_key_env, Duration::from_secs(120))?),
        (false, None) => bail!(MadsError::Config("either --mock-llm or --llm-url is required".into())),
    };
    let collection = collect_all(client.as_ref(), &config, &names, &raw)?;
    let out = &g.out_dir;
    write_json(&out.join(VIEWS), &collection.views)?;
    save_documents(&out.join(DOCUMENTS), &collection.documents)?;
    println!(
        "{}",
        json!({"status": "ok", "command": "collect", "classes": names.len(), "views": collection.views.names().collect::<Vec<_>>()})
    );
    Ok(())
}

fn prepare_features(profile: &RunProfile, paths: &DataPaths) -> Result<()> {
    require(&[&paths.manifest])?;
    let manifest = DatasetManifest::load(&paths.manifest)?;
    let mut store = FeatureStore::open(&paths.features)?;
    let backbone_json = paths.features.join("backbone.json");
    let (config, latents) = if backbone_json.exists() {
        let table = if paths.latents.exists() { Some(LatentTable::load(&paths.latents)?) } else { None };
        (store.backbone_config()?, table)
    } else {
        require(&[&paths.latents])?;
        let table = LatentTable::load(&paths.latents)?;
        let config = SyntheticBackboneConfig {
            seed: profile.train.seed,
            latent_dim: table.dim(),
            ..profile.backbone.clone()
        };
        (config, Some(table))
    };
    let backbone = match &latents {
        Some(table) => SyntheticBackbone::from_latents(config.clone(), table)?,
        None => SyntheticBackbone::new(config.clone(), BTreeMap::new())?,
    };
    let written = store.precompute(&manifest, &backbone)?;
    store.save_backbone_config(&config)?;
    println!("{}", json!({"status": "ok", "command": "prepare-features", "written": written, "total": store.len()}));
    Ok(())
}

/// Inputs shared by training and evaluation.
struct Corpus {
    manifest: DatasetManifest,
    documents: Vec<MultiAttributeDocument>,
    lexicon: VisualWordLexicon,
    store: FeatureStore,
    backbone: SyntheticBackbone,
}

fn load_corpus(paths: &DataPaths, views: Option<&AttributeViewSet>) -> Result<Corpus> {
    let index = paths.features.join("index.json");
    require(&[&paths.manifest, &paths.documents, &paths.views, &paths.lexicon, &index])?;
    let manifest = DatasetManifest::load(&paths.manifest)?;
    let loaded_views;
    let views = match views {
        Some(v) => v,
        None => {
            loaded_views = load_views(&paths.views)?;
            &loaded_views
        }
    };
    let documents = load_documents(&paths.documents, views)?;
    let lexicon = build_lexicon(&[&paths.lexicon])?;
    let store = FeatureStore::open(&paths.features)?;
    let backbone = SyntheticBackbone::new(store.backbone_config()?, BTreeMap::new())?;
    Ok(Corpus { manifest, documents, lexicon, store, backbone })
}

fn load_features<'a>(
    store: &FeatureStore,
    refs: impl IntoIterator<Item = &'a str>,
) -> Result<BTreeMap<String, Vec<mads::autodiff::Matrix>>> {
    Ok(store.load_many(refs)?)
}

fn train_cmd(profile: &RunProfile, paths: &DataPaths, out: &Path) -> Result<()> {
    require(&[&paths.embeddings, &paths.views])?;
    let views = load_views(&paths.views)?;
    let corpus = load_corpus(paths, Some(&views))?;
    let table = EmbeddingTable::load(&paths.embeddings)?;
    let doc_words: Vec<String> = corpus
        .documents
        .iter()
        .flat_map(|d| d.paragraphs.values())
        .flat_map(|p| split_words(p))
        .collect();
    let (words, coverage) = table.restrict(doc_words.iter().map(String::as_str));
    if !coverage.missing.is_empty() {
        log::warn!("{} document words have no vector and map to UNK", coverage.missing.len());
    }
    let seed = profile.train.seed;
    let mut model = MadsModel::new(profile.model.clone(), views, words, seed)?;
    let docs = model.prepare(&corpus.documents, &corpus.lexicon)?;
    let features = load_features(&corpus.store, corpus.manifest.samples.iter().map(|s| s.image_ref.as_str()))?;
    let source = ImageSource { backbone: &corpus.backbone, features: &features };
    let metrics = out.join(METRICS);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let report = train(&mut model, &corpus.manifest, &docs, &source, &profile.train, Some(&metrics))?;
    let ckpt = out.join(CHECKPOINT);
    let meta = json!({"profile": profile.name, "seed": seed, "train": profile.train, "steps": report.steps});
    save_checkpoint(&model, &ckpt, &meta)?;
    let last = report.epochs.last();
    println!(
        "{}",
        json!({"status": "ok", "command": "train", "checkpoint": ckpt, "metrics": metrics, "epochs": report.epochs.len(),
               "last_T1_val": last.and_then(|e| e.t1_val)})
    );
    Ok(())
}

/// Checkpointed model plus the corpus it is evaluated on.
fn load_model(g: &Global, paths: &DataPaths, ckpt: &Path) -> Result<(MadsModel, Corpus, Vec<PreparedDocument>)> {
    require(&[ckpt])?;
    let (mut model, _meta) = load_checkpoint(ckpt, None)?;
    if let Some(k) = g.k_queries {
        if k != model.config.num_queries {
            return Err(MadsError::Incompatible {
                field: "num_queries".into(),
                expected: k.to_string(),
                found: model.config.num_queries.to_string(),
            }
            .into());
        }
    }
    if let Some(b) = g.beta {
        model.config.beta = b;
    }
    let views = model.views.clone();
    let corpus = load_corpus(paths, Some(&views))?;
    let docs = model.prepare(&corpus.documents, &corpus.lexicon)?;
    Ok((model, corpus, docs))
}

/// Documents in score order: seen classes, then unseen classes.
fn ordered(manifest: &DatasetManifest, docs: &[PreparedDocument]) -> Result<Vec<PreparedDocument>> {
    manifest
        .seen
        .iter()
        .chain(&manifest.unseen)
        .map(|c| {
            docs.iter()
                .find(|d| d.category_id == *c)
                .cloned()
                .ok_or_else(|| MadsError::Validation(format!("no document for category {c}")).into())
        })
        .collect()
}

fn eval_cmd(
    g: &Global,
    profile: &RunProfile,
    paths: &DataPaths,
    ckpt: &Path,
    validation: Option<&Path>,
    out: &Path,
) -> Result<()> {
    if let Some(v) = validation {
        require(&[ckpt, v])?;
    }
    let (model, corpus, docs) = load_model(g, paths, ckpt)?;
    let val = validation.map(DatasetManifest::load).transpose()?;
    let mut refs: Vec<&str> = corpus.manifest.split(Split::TestSeen).chain(corpus.manifest.split(Split::TestUnseen)).map(|s| s.image_ref.as_str()).collect();
    if let Some(v) = &val {
        refs.extend(v.split(Split::TestSeen).chain(v.split(Split::TestUnseen)).map(|s| s.image_ref.as_str()));
    }
    let features = load_features(&corpus.store, refs)?;
    let source = ImageSource { backbone: &corpus.backbone, features: &features };
    let options = EvalOptions { gamma_grid: gamma_grid(profile.eval.gamma_step), gamma: profile.eval.gamma, validation: val.as_ref() };
    let result = evaluate(&model, &corpus.manifest, &docs, &source, &options)?;
    let path = out.join("eval.json");
    write_json(&path, &result)?;
    println!(
        "{}",
        json!({"status": "ok", "command": "eval", "T1": result.t1, "U": result.u, "S": result.s, "H": result.h,
               "gamma": result.gamma, "gamma_selection": result.gamma_selection, "output": path})
    );
    Ok(())
}

fn predict_cmd(
    g: &Global,
    profile: &RunProfile,
    paths: &DataPaths,
    ckpt: &Path,
    images: &[String],
    gzsl: bool,
    out: &Path,
) -> Result<()> {
    let (model, corpus, docs) = load_model(g, paths, ckpt)?;
    let m = &corpus.manifest;
    let labels: BTreeMap<&str, u32> = m.samples.iter().map(|s| (s.image_ref.as_str(), s.category_id)).collect();
    let refs: Vec<&str> = if images.is_empty() {
        m.split(Split::TestSeen).chain(m.split(Split::TestUnseen)).map(|s| s.image_ref.as_str()).collect()
    } else {
        images.iter().map(String::as_str).collect()
    };
    let features = load_features(&corpus.store, refs.iter().copied())?;
    let source = ImageSource { backbone: &corpus.backbone, features: &features };
    let ordered = ordered(m, &docs)?;
    let classes = model.class_embeddings(&ordered)?;
    let raw = model.global_scores(&source, &refs, &classes)?;
    let ids = &classes.category_ids;
    let gamma = profile.eval.gamma.unwrap_or_else(|| {
        if gzsl {
            log::warn!("no --gamma given; predicting with gamma 0");
        }
        0.0
    });
    let seen_mask: Vec<bool> = (0..ids.len()).map(|i| i < m.seen.len()).collect();
    let unseen: Vec<usize> = (m.seen.len()..ids.len()).collect();
    let normalized = softmax_rows(&raw);
    let mut rows = Vec::with_capacity(refs.len());
    for (i, r) in refs.iter().enumerate() {
        let c = if gzsl { predict_gzsl(normalized.row(i), &seen_mask, gamma) } else { predict_zsl(raw.row(i), &unseen)? };
        let scores: Vec<(u32, f64)> = ids.iter().copied().zip(raw.row(i).iter().copied()).collect();
        rows.push(json!({"image_ref": r, "predicted": ids[c], "label": labels.get(r), "scores": scores}));
    }
    let mode = if gzsl { "gzsl" } else { "zsl" };
    let path = out.join("predictions.json");
    write_json(&path, &json!({"mode": mode, "gamma": if gzsl { Some(gamma) } else { None }, "predictions": rows}))?;
    println!("{}", json!({"status": "ok", "command": "predict", "mode": mode, "images": refs.len(), "output": path}));
    Ok(())
}

fn explain_cmd(
    g: &Global,
    _profile: &RunProfile,
    paths: &DataPaths,
    ckpt: &Path,
    image: &str,
    top_k: usize,
    out: &Path,
) -> Result<()> {
    let (model, corpus, docs) = load_model(g, paths, ckpt)?;
    let features = load_features(&corpus.store, [image])?;
    let source = ImageSource { backbone: &corpus.backbone, features: &features };
    let ordered = ordered(&corpus.manifest, &docs)?;
    let dump = explain(&model, image, &source, &ordered, top_k)?;
    let path = out.join("explain.json");
    write_json(&path, &dump)?;
    println!("{}", json!({"status": "ok", "command": "explain", "image_ref": image, "output": path}));
    Ok(())
}
