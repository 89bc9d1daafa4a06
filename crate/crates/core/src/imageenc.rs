//! Image pathway: frozen backbone contract with per-block hooks, scale/shift
//! adaptation of block outputs, projection to global and local image features,
//! and the on-disk feature store.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{s, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::config::{ModelConfig, SsfMode};
use crate::corpus::{read_to_string, write_atomic, DatasetManifest, LatentTable};
use crate::error::{MadsError, Result};
use crate::nn::{normal_matrix, Graph, Linear};

/// Frozen image backbone exposing every block output.
pub trait Backbone: Sync {
    /// Token width `D`.
    fn width(&self) -> usize;
    fn num_blocks(&self) -> usize;
    /// Patch count `N`; token matrices have `N + 1` rows with [CLS] first.
    fn num_patches(&self) -> usize;
    /// Unadapted outputs of all blocks for one image.
    fn block_outputs(&self, image_ref: &str) -> Result<Vec<Matrix>>;
    /// Applies block `b` to stacked token matrices (`n·(N+1) × D`) inside a
    /// graph. Backbone weights enter as constants.
    fn apply_block(&self, tape: &mut Tape, b: usize, x: Var) -> Var;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticBackboneConfig {
    pub seed: u64,
    pub width: usize,
    pub patches: usize,
    pub blocks: usize,
    /// Residual branch weight of each block.
    pub alpha: f64,
    pub activation: Activation,
    /// Number of attribute views; patch `n` shows the attributes of view `(n-1) mod views`.
    pub views: usize,
    /// Length of the latent attribute vectors.
    pub latent_dim: usize,
}

impl Default for SyntheticBackboneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 32,
            patches: 6,
            blocks: 2,
            alpha: 0.5,
            activation: Activation::Tanh,
            views: 3,
            latent_dim: 9,
        }
    }
}

/// Desk-scale stand-in for a vision transformer. Each patch token is a random
/// linear image of one view's slice of the image's latent attribute vector;
/// blocks mix tokens and apply a residual nonlinearity.
#[derive(Debug, Clone)]
pub struct SyntheticBackbone {
    pub config: SyntheticBackboneConfig,
    projection: Matrix,
    positions: Matrix,
    weights: Vec<Matrix>,
    mix: Matrix,
    latents: BTreeMap<String, Vec<f64>>,
}

impl SyntheticBackbone {
    pub fn new(config: SyntheticBackboneConfig, latents: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let c = &config;
        if c.width == 0 || c.patches == 0 || c.blocks == 0 || c.views == 0 || c.latent_dim == 0 {
            return Err(MadsError::Config("synthetic backbone dimensions must be positive".into()));
        }
        if c.latent_dim % c.views != 0 {
            return Err(MadsError::Config(format!(
                "latent_dim {} is not divisible by views {}",
                c.latent_dim, c.views
            )));
        }
        if let Some((r, v)) = latents.iter().find(|(_, v)| v.len() != c.latent_dim) {
            return Err(MadsError::Shape(format!("latent of {r} has length {}, expected {}", v.len(), c.latent_dim)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        let per_view = c.latent_dim / c.views;
        let projection = normal_matrix(&mut rng, c.latent_dim, c.width, 1.0 / (per_view as f64).sqrt());
        let positions = normal_matrix(&mut rng, c.patches + 1, c.width, 0.1);
        let weights = (0..c.blocks)
            .map(|_| normal_matrix(&mut rng, c.width, c.width, 1.0 / (c.width as f64).sqrt()))
            .collect();
        let t = c.patches + 1;
        let uniform = 1.0 / t as f64;
        let mix = Matrix::from_shape_fn((t, t), |(i, j)| {
            if i == 0 {
                uniform
            } else {
                0.5 * uniform + if i == j { 0.5 } else { 0.0 }
            }
        });
        Ok(Self { config, projection, positions, weights, mix, latents })
    }

    pub fn from_latents(config: SyntheticBackboneConfig, table: &LatentTable) -> Result<Self> {
        Self::new(config, table.image_latents.clone())
    }

    /// Token matrix entering block 0.
    pub fn stem(&self, latent: &[f64]) -> Matrix {
        let c = &self.config;
        let per_view = c.latent_dim / c.views;
        let mut x = self.positions.clone();
        for n in 1..=c.patches {
            let v = (n - 1) % c.views;
            let slice = &latent[v * per_view..(v + 1) * per_view];
            let proj = self.projection.slice(s![v * per_view..(v + 1) * per_view, ..]);
            let a = ndarray::ArrayView1::from(slice);
            let mut row = x.row_mut(n);
            row += &a.dot(&proj);
        }
        x
    }

    fn block_value(&self, b: usize, x: &Matrix) -> Matrix {
        let h = self.mix.dot(x).dot(&self.weights[b]);
        let h = match self.config.activation {
            Activation::Tanh => h.mapv(f64::tanh),
            Activation::Identity => h,
        };
        x + &(h * self.config.alpha)
    }
}

impl Backbone for SyntheticBackbone {
    fn width(&self) -> usize {
        self.config.width
    }

    fn num_blocks(&self) -> usize {
        self.config.blocks
    }

    fn num_patches(&self) -> usize {
        self.config.patches
    }

    fn block_outputs(&self, image_ref: &str) -> Result<Vec<Matrix>> {
        let latent = self
            .latents
            .get(image_ref)
            .ok_or_else(|| MadsError::MissingFeatures { refs: vec![image_ref.to_string()] })?;
        let mut x = self.stem(latent);
        let mut outs = Vec::with_capacity(self.config.blocks);
        for b in 0..self.config.blocks {
            x = self.block_value(b, &x);
            outs.push(x.clone());
        }
        Ok(outs)
    }

    fn apply_block(&self, tape: &mut Tape, b: usize, x: Var) -> Var {
        let mixed = tape.segment_matmul(&self.mix, x);
        let w = tape.constant(self.weights[b].clone());
        let h = tape.matmul(mixed, w);
        let h = match self.config.activation {
            Activation::Tanh => tape.tanh(h),
            Activation::Identity => h,
        };
        let h = tape.scale(h, self.config.alpha);
        tape.add(x, h)
    }
}

/// Per-block scale and shift vectors (`1 × D` each).
#[derive(Debug, Clone)]
pub struct SsfParams {
    pub scales: Vec<ParamId>,
    pub shifts: Vec<ParamId>,
    pub mode: SsfMode,
}

impl SsfParams {
    pub fn init(store: &mut ParamStore, cfg: &ModelConfig) -> Self {
        let pairs = match cfg.ssf_mode {
            SsfMode::PerBlock => cfg.backbone_blocks,
            SsfMode::FinalOnly => 1,
        };
        let d = cfg.backbone_width;
        let scales = (0..pairs)
            .map(|b| store.add(format!("image.ssf.{b}.scale"), Matrix::ones((1, d)), true))
            .collect();
        let shifts = (0..pairs)
            .map(|b| store.add(format!("image.ssf.{b}.shift"), Matrix::zeros((1, d)), true))
            .collect();
        Self { scales, shifts, mode: cfg.ssf_mode }
    }

    fn apply(&self, g: &mut Graph, i: usize, x: Var) -> Var {
        let scale = g.p(self.scales[i]);
        let shift = g.p(self.shifts[i]);
        let y = g.tape.mul_row(x, scale);
        g.tape.add_row(y, shift)
    }
}

#[derive(Debug, Clone)]
pub struct ImageEncoderParams {
    pub ssf: SsfParams,
    /// `D → r` projection with bias.
    pub projection: Linear,
}

impl ImageEncoderParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        Self {
            ssf: SsfParams::init(store, cfg),
            projection: Linear::init(store, rng, "image.proj", cfg.backbone_width, cfg.dim, true),
        }
    }
}

/// Encoded images of one batch.
#[derive(Debug, Clone, Copy)]
pub struct ImageFeatures {
    /// `I_g` of every image, `n × r`.
    pub global: Var,
    /// `I_l` of every image stacked, `(n·N) × r`.
    pub local: Var,
    pub count: usize,
    pub patches: usize,
}

/// Encodes a batch from unadapted block outputs. In per-block mode the first
/// stored block output is adapted and the remaining blocks are recomputed in
/// the graph so the adaptation reaches every block; in final-only mode only
/// the last output is adapted.
pub fn encode_images(
    g: &mut Graph,
    backbone: &dyn Backbone,
    params: &ImageEncoderParams,
    block_outputs: &[&[Matrix]],
) -> Result<ImageFeatures> {
    let b = backbone.num_blocks();
    let d = backbone.width();
    let n = backbone.num_patches();
    if block_outputs.is_empty() {
        return Err(MadsError::EmptyInput("no images to encode".into()));
    }
    let proj_in = g.store.get(params.projection.weight).nrows();
    if proj_in != d {
        return Err(MadsError::Shape(format!("projection expects width {proj_in}, backbone has {d}")));
    }
    for outs in block_outputs {
        if outs.len() != b || outs.iter().any(|m| m.dim() != (n + 1, d)) {
            return Err(MadsError::Shape(format!("expected {b} block outputs of shape {}×{d}", n + 1)));
        }
    }
    let pick = |i: usize| -> Matrix {
        let views: Vec<_> = block_outputs.iter().map(|o| o[i].view()).collect();
        ndarray::concatenate(Axis(0), &views).expect("uniform widths")
    };
    let x = match params.ssf.mode {
        SsfMode::PerBlock => {
            if params.ssf.scales.len() != b {
                return Err(MadsError::Shape(format!(
                    "{} adaptation pairs for {b} blocks",
                    params.ssf.scales.len()
                )));
            }
            let x = g.tape.constant(pick(0));
            let mut x = params.ssf.apply(g, 0, x);
            for blk in 1..b {
                x = backbone.apply_block(&mut g.tape, blk, x);
                x = params.ssf.apply(g, blk, x);
            }
            x
        }
        SsfMode::FinalOnly => {
            let x = g.tape.constant(pick(b - 1));
            params.ssf.apply(g, 0, x)
        }
    };
    let tokens = params.projection.forward(g, x);
    let t = n + 1;
    let count = block_outputs.len();
    let cls_rows: Vec<usize> = (0..count).map(|i| i * t).collect();
    let patch_rows: Vec<usize> = (0..count).flat_map(|i| (i * t + 1)..((i + 1) * t)).collect();
    let global = g.tape.select_rows(tokens, &cls_rows);
    let local = g.tape.select_rows(tokens, &patch_rows);
    Ok(ImageFeatures { global, local, count, patches: n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub file: String,
    /// `[B, N+1, D]`
    pub shape: [usize; 3],
    pub dtype: String,
}

/// Directory of unadapted block outputs, 32-bit little-endian floats, with a
/// JSON index mapping image refs to files.
#[derive(Debug, Clone)]
pub struct FeatureStore {
    dir: PathBuf,
    index: BTreeMap<String, FeatureEntry>,
}

const INDEX_FILE: &str = "index.json";
const BACKBONE_FILE: &str = "backbone.json";

fn file_name(image_ref: &str) -> String {
    let digest = Sha256::digest(image_ref.as_bytes());
    format!("{}.f32", hex::encode(&digest[..12]))
}

/// Rounds every entry to the nearest 32-bit float, the precision of the store.
pub fn round_to_f32(m: &Matrix) -> Matrix {
    m.mapv(|v| v as f32 as f64)
}

impl FeatureStore {
    /// Opens `dir`, reading its index if present.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(INDEX_FILE);
        let index = if path.exists() {
            serde_json::from_str(&read_to_string(&path)?).map_err(|e| MadsError::schema(path.display().to_string(), e))?
        } else {
            BTreeMap::new()
        };
        Ok(Self { dir: dir.to_path_buf(), index })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, image_ref: &str) -> bool {
        self.index.contains_key(image_ref)
    }

    pub fn entry(&self, image_ref: &str) -> Option<&FeatureEntry> {
        self.index.get(image_ref)
    }

    /// Computes and writes block outputs for every manifest sample not yet in
    /// the store. Returns the number of newly computed images.
    pub fn precompute(&mut self, manifest: &DatasetManifest, backbone: &dyn Backbone) -> Result<usize> {
        std::fs::create_dir_all(&self.dir).map_err(|e| MadsError::io(&self.dir, e))?;
        let mut todo: Vec<&str> = manifest
            .samples
            .iter()
            .map(|s| s.image_ref.as_str())
            .filter(|r| !self.index.contains_key(*r))
            .collect();
        todo.sort_unstable();
        todo.dedup();
        let results: Vec<(&str, Result<Vec<Matrix>>)> =
            todo.par_iter().map(|r| (*r, backbone.block_outputs(r))).collect();
        let missing: Vec<String> = results
            .iter()
            .filter_map(|(r, res)| match res {
                Err(MadsError::MissingFeatures { .. }) => Some(r.to_string()),
                _ => None,
            })
            .collect();
        if !missing.is_empty() {
            return Err(MadsError::MissingFeatures { refs: missing });
        }
        let count = results.len();
        for (r, res) in results {
            let outs = res?;
            self.write(r, &outs)?;
        }
        self.save_index()?;
        Ok(count)
    }

    /// Writes one image's block outputs, rounded to 32-bit floats.
    pub fn write(&mut self, image_ref: &str, outputs: &[Matrix]) -> Result<()> {
        let first = outputs.first().ok_or_else(|| MadsError::EmptyInput(format!("no block outputs for {image_ref}")))?;
        let (t, d) = first.dim();
        let mut bytes = Vec::with_capacity(outputs.len() * t * d * 4);
        for m in outputs {
            if m.dim() != (t, d) {
                return Err(MadsError::Shape(format!("block outputs of {image_ref} differ in shape")));
            }
            for v in m.iter() {
                bytes.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        let file = file_name(image_ref);
        write_atomic(&self.dir.join(&file), &bytes)?;
        self.index.insert(
            image_ref.to_string(),
            FeatureEntry { file, shape: [outputs.len(), t, d], dtype: "f32".into() },
        );
        Ok(())
    }

    pub fn save_index(&self) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.index).map_err(|e| MadsError::schema("feature index", e))?;
        write_atomic(&self.dir.join(INDEX_FILE), json.as_bytes())
    }

    pub fn load(&self, image_ref: &str) -> Result<Vec<Matrix>> {
        let entry = self
            .index
            .get(image_ref)
            .ok_or_else(|| MadsError::MissingFeatures { refs: vec![image_ref.to_string()] })?;
        if entry.dtype != "f32" {
            return Err(MadsError::schema(image_ref, format!("unsupported dtype {:?}", entry.dtype)));
        }
        let path = self.dir.join(&entry.file);
        let bytes = std::fs::read(&path).map_err(|e| MadsError::io(&path, e))?;
        let [b, t, d] = entry.shape;
        if bytes.len() != b * t * d * 4 {
            return Err(MadsError::schema(
                path.display().to_string(),
                format!("expected {} bytes, found {}", b * t * d * 4, bytes.len()),
            ));
        }
        let values: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(values
            .chunks_exact(t * d)
            .map(|c| Matrix::from_shape_vec((t, d), c.to_vec()).expect("sized chunk"))
            .collect())
    }

    /// Loads several images, reporting every missing ref at once.
    pub fn load_many<'a>(&self, refs: impl IntoIterator<Item = &'a str>) -> Result<BTreeMap<String, Vec<Matrix>>> {
        let refs: Vec<&str> = refs.into_iter().collect();
        let missing: Vec<String> = refs.iter().filter(|r| !self.contains(r)).map(|r| r.to_string()).collect();
        if !missing.is_empty() {
            return Err(MadsError::MissingFeatures { refs: missing });
        }
        refs.par_iter().map(|r| Ok((r.to_string(), self.load(r)?))).collect()
    }

    pub fn save_backbone_config(&self, config: &SyntheticBackboneConfig) -> Result<()> {
        let json = serde_json::to_string_pretty(config).map_err(|e| MadsError::schema("backbone config", e))?;
        write_atomic(&self.dir.join(BACKBONE_FILE), json.as_bytes())
    }

    pub fn backbone_config(&self) -> Result<SyntheticBackboneConfig> {
        let path = self.dir.join(BACKBONE_FILE);
        serde_json::from_str(&read_to_string(&path)?).map_err(|e| MadsError::schema(path.display().to_string(), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{gen_synthetic_dataset, SyntheticConfig};

    fn backbone(activation: Activation, blocks: usize) -> (SyntheticBackbone, Vec<f64>) {
        let latent: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 0.5).collect();
        let cfg = SyntheticBackboneConfig {
            seed: 3,
            width: 8,
            patches: 4,
            blocks,
            activation,
            views: 2,
            latent_dim: 6,
            ..Default::default()
        };
        let latents = BTreeMap::from([("img".to_string(), latent.clone())]);
        (SyntheticBackbone::new(cfg, latents).unwrap(), latent)
    }

    fn model_cfg(bb: &SyntheticBackbone, mode: SsfMode) -> ModelConfig {
        ModelConfig {
            dim: 4,
            backbone_width: bb.width(),
            backbone_blocks: bb.num_blocks(),
            num_patches: bb.num_patches(),
            ssf_mode: mode,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn identity_ssf_matches_projected_backbone() {
        let (bb, _) = backbone(Activation::Tanh, 3);
        let outs = bb.block_outputs("img").unwrap();
        for mode in [SsfMode::PerBlock, SsfMode::FinalOnly] {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let p = ImageEncoderParams::init(&mut store, &mut rng, &model_cfg(&bb, mode));
            let mut g = Graph::new(&store);
            let f = encode_images(&mut g, &bb, &p, &[&outs]).unwrap();
            let w = store.get(p.projection.weight);
            let bias = store.get(p.projection.bias.unwrap());
            let expected = outs.last().unwrap().dot(w) + bias;
            let got_g = g.tape.value(f.global);
            let got_l = g.tape.value(f.local);
            let tol = 1e-12;
            assert!((got_g - &expected.slice(s![0..1, ..])).iter().all(|v| v.abs() < tol));
            assert!((got_l - &expected.slice(s![1.., ..])).iter().all(|v| v.abs() < tol));
            assert_eq!(got_l.dim(), (4, 4));
        }
    }

    #[test]
    fn constant_shift_on_linear_single_block() {
        let (bb, _) = backbone(Activation::Identity, 1);
        let outs = bb.block_outputs("img").unwrap();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ImageEncoderParams::init(&mut store, &mut rng, &model_cfg(&bb, SsfMode::PerBlock));
        let base = {
            let mut g = Graph::new(&store);
            let f = encode_images(&mut g, &bb, &p, &[&outs]).unwrap();
            g.tape.value(f.local).clone()
        };
        let c = 0.7;
        store.set(p.ssf.shifts[0], Matrix::from_elem((1, 8), c));
        let mut g = Graph::new(&store);
        let f = encode_images(&mut g, &bb, &p, &[&outs]).unwrap();
        let displacement = Matrix::from_elem((1, 8), c).dot(store.get(p.projection.weight));
        let diff = g.tape.value(f.local) - &base;
        for row in diff.rows() {
            for (a, b) in row.iter().zip(displacement.iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn in_graph_blocks_match_direct_values() {
        let (bb, latent) = backbone(Activation::Tanh, 2);
        let outs = bb.block_outputs("img").unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(outs[0].clone());
        let y = bb.apply_block(&mut tape, 1, x);
        assert_eq!(tape.value(y), &outs[1]);
        assert_eq!(bb.stem(&latent).dim(), (5, 8));
    }

    #[test]
    fn width_mismatch_is_shape_error() {
        let (bb, _) = backbone(Activation::Tanh, 2);
        let outs = bb.block_outputs("img").unwrap();
        let mut cfg = model_cfg(&bb, SsfMode::FinalOnly);
        cfg.backbone_width = 5;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ImageEncoderParams::init(&mut store, &mut rng, &cfg);
        let mut g = Graph::new(&store);
        assert!(matches!(encode_images(&mut g, &bb, &p, &[&outs]), Err(MadsError::Shape(_))));
    }

    #[test]
    fn store_counts_shapes_and_round_trip() {
        let syn = gen_synthetic_dataset(
            1,
            &SyntheticConfig { samples_per_class: 4, test_samples_per_class: 1, ..Default::default() },
        )
        .unwrap();
        let mut manifest = syn.manifest.clone();
        manifest.samples.truncate(40);
        let cfg = SyntheticBackboneConfig {
            width: 32,
            patches: 16,
            blocks: 2,
            views: syn.views.len(),
            latent_dim: syn.latents.dim(),
            ..Default::default()
        };
        let bb = SyntheticBackbone::from_latents(cfg, &syn.latents).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut store = FeatureStore::open(dir.path()).unwrap();
        assert_eq!(store.precompute(&manifest, &bb).unwrap(), 40);
        assert_eq!(store.len(), 40);
        let files = std::fs::read_dir(dir.path()).unwrap().filter(|e| {
            e.as_ref().unwrap().path().extension().is_some_and(|x| x == "f32")
        });
        assert_eq!(files.count(), 40);
        for s in &manifest.samples {
            assert_eq!(store.entry(&s.image_ref).unwrap().shape, [2, 17, 32]);
            let loaded = store.load(&s.image_ref).unwrap();
            let direct: Vec<Matrix> = bb.block_outputs(&s.image_ref).unwrap().iter().map(round_to_f32).collect();
            assert_eq!(loaded, direct);
        }
        let mut reopened = FeatureStore::open(dir.path()).unwrap();
        assert_eq!(reopened.precompute(&manifest, &bb).unwrap(), 0);
    }

    #[test]
    fn missing_refs_are_listed() {
        let (bb, _) = backbone(Activation::Tanh, 1);
        let manifest = DatasetManifest {
            seen: vec![0, 1],
            unseen: vec![2, 3],
            samples: vec![
                crate::corpus::Sample { image_ref: "img".into(), category_id: 0, split: crate::corpus::Split::Train },
                crate::corpus::Sample { image_ref: "nope".into(), category_id: 1, split: crate::corpus::Split::Train },
            ],
            feature_source: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let mut store = FeatureStore::open(dir.path()).unwrap();
        let err = store.precompute(&manifest, &bb).unwrap_err();
        assert!(matches!(err, MadsError::MissingFeatures { ref refs } if refs == &vec!["nope".to_string()]));
        let err = store.load_many(["a", "b"]).unwrap_err();
        assert!(err.to_string().contains('a') && err.to_string().contains('b'));
    }
}
