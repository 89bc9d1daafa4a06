//! Multi-view aggregation and fusion into global and local semantic embeddings.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Var};
use crate::config::ModelConfig;
use crate::error::{MadsError, Result};
use crate::nn::{normal_matrix, FeedForward, Graph, LayerNorm, ProjectedAttention};
use crate::textenc::ViewFeatures;

#[derive(Debug, Clone)]
pub struct AggregatorParams {
    /// Aggregation token `z`, `1 × r`.
    pub token: ParamId,
    pub attn: ProjectedAttention,
    pub mlp: FeedForward,
    pub prenorm: Option<(LayerNorm, LayerNorm)>,
}

impl AggregatorParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        let r = cfg.dim;
        let token = store.add("agg.token", normal_matrix(rng, 1, r, 0.5), true);
        let attn = ProjectedAttention::init(store, rng, "agg.attn", r, cfg.head_dim);
        let mlp = FeedForward::init(store, rng, "agg.mlp", r, r);
        let prenorm = cfg
            .aggregator_prenorm
            .then(|| (LayerNorm::init(store, "agg.ln1", r), LayerNorm::init(store, "agg.ln2", r)));
        Self { token, attn, mlp, prenorm }
    }
}

/// Fused embeddings of one category.
#[derive(Debug, Clone)]
pub struct SemanticEmbeddings {
    /// `T_g`, `1 × r`.
    pub global: Var,
    /// `T_l`, `(V·K) × r`.
    pub local: Var,
    /// Per-view core features `g_i`.
    pub per_view_core: Vec<Var>,
}

fn check_views(g: &Graph, views: &[ViewFeatures]) -> Result<(usize, usize)> {
    let first = views.first().ok_or_else(|| MadsError::EmptyInput("no views to aggregate".into()))?;
    let (k, r) = g.tape.shape(first.salient);
    for (i, v) in views.iter().enumerate() {
        let s = g.tape.shape(v.salient);
        let c = g.tape.shape(v.core);
        if s != (k, r) || c != (1, r) {
            return Err(MadsError::Shape(format!(
                "view {i}: salient {s:?} and core {c:?} do not match {k}×{r}"
            )));
        }
    }
    Ok((k, r))
}

/// Self-attention over `[z; e_1; ...; e_V]` followed by a residual MLP.
/// Returns `A_g` (`1 × r`, the `z` row) and `A_l` (`(V·K) × r`).
pub fn aggregate_attend(g: &mut Graph, views: &[ViewFeatures], params: &AggregatorParams) -> Result<(Var, Var)> {
    let (k, _) = check_views(g, views)?;
    let z = g.p(params.token);
    let mut rows = vec![z];
    rows.extend(views.iter().map(|v| v.salient));
    let e = g.tape.concat_rows(&rows);
    let (attended, mlp_in) = match &params.prenorm {
        None => {
            let (a, _) = params.attn.forward(g, e, e);
            (a, a)
        }
        Some((ln1, ln2)) => {
            let h = ln1.forward(g, e);
            let (a, _) = params.attn.forward(g, h, h);
            (a, ln2.forward(g, a))
        }
    };
    let m = params.mlp.forward(g, mlp_in);
    let out = g.tape.add(attended, m);
    let a_g = g.tape.slice_rows(out, 0, 1);
    let a_l = g.tape.slice_rows(out, 1, views.len() * k);
    Ok((a_g, a_l))
}

/// `T_g = β·mean(g_i) + (1−β)·A_g` and `T_l = [e_1; ...; e_V] + A_l`.
pub fn fuse(g: &mut Graph, views: &[ViewFeatures], a_g: Var, a_l: Var, beta: f64) -> Result<SemanticEmbeddings> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(MadsError::Config(format!("beta {beta} outside [0, 1]")));
    }
    let (k, r) = check_views(g, views)?;
    if g.tape.shape(a_g) != (1, r) || g.tape.shape(a_l) != (views.len() * k, r) {
        return Err(MadsError::Shape("aggregated features do not match view features".into()));
    }
    let cores: Vec<Var> = views.iter().map(|v| v.core).collect();
    let stacked = g.tape.concat_rows(&cores);
    let mean = g.tape.segment_mean(stacked, views.len());
    let global = if beta == 1.0 {
        mean
    } else if beta == 0.0 {
        a_g
    } else {
        let a = g.tape.scale(mean, beta);
        let b = g.tape.scale(a_g, 1.0 - beta);
        g.tape.add(a, b)
    };
    let salient: Vec<Var> = views.iter().map(|v| v.salient).collect();
    let e_l = g.tape.concat_rows(&salient);
    let local = g.tape.add(e_l, a_l);
    Ok(SemanticEmbeddings { global, local, per_view_core: cores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;
    use ndarray::array;
    use rand::SeedableRng;

    fn cfg(r: usize) -> ModelConfig {
        ModelConfig { dim: r, head_dim: r, ..ModelConfig::default() }
    }

    fn views(g: &mut Graph, rng: &mut ChaCha8Rng, v: usize, k: usize, r: usize) -> Vec<ViewFeatures> {
        (0..v)
            .map(|i| {
                let core = g.tape.constant(normal_matrix(rng, 1, r, 1.0));
                let salient = g.tape.constant(normal_matrix(rng, k, r, 1.0));
                let attention = g.tape.constant(Matrix::zeros((k, 1)));
                ViewFeatures { view_index: i, core, salient, attention }
            })
            .collect()
    }

    #[test]
    fn shapes() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AggregatorParams::init(&mut store, &mut rng, &cfg(8));
        let mut g = Graph::new(&store);
        let vf = views(&mut g, &mut rng, 3, 4, 8);
        let (a_g, a_l) = aggregate_attend(&mut g, &vf, &p).unwrap();
        assert_eq!(g.tape.shape(a_g), (1, 8));
        assert_eq!(g.tape.shape(a_l), (12, 8));
        let t = fuse(&mut g, &vf, a_g, a_l, 0.5).unwrap();
        assert_eq!(g.tape.shape(t.local), (12, 8));
    }

    #[test]
    fn zero_weights_collapse() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AggregatorParams::init(&mut store, &mut rng, &cfg(4));
        for id in store.ids().filter(|&id| store.name(id) != "agg.token").collect::<Vec<_>>() {
            let shape = store.get(id).dim();
            store.set(id, Matrix::zeros(shape));
        }
        let mut g = Graph::new(&store);
        let vf = views(&mut g, &mut rng, 1, 2, 4);
        let (a_g, a_l) = aggregate_attend(&mut g, &vf, &p).unwrap();
        assert_eq!(g.tape.value(a_g), &Matrix::zeros((1, 4)));
        assert_eq!(g.tape.value(a_l), &Matrix::zeros((2, 4)));
    }

    #[test]
    fn mismatched_widths() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let p = AggregatorParams::init(&mut store, &mut rng, &cfg(4));
        let mut g = Graph::new(&store);
        let mut vf = views(&mut g, &mut rng, 2, 2, 4);
        vf[1].salient = g.tape.constant(Matrix::zeros((3, 4)));
        assert!(matches!(aggregate_attend(&mut g, &vf, &p), Err(MadsError::Shape(_))));
    }

    #[test]
    fn fuse_arithmetic_and_extremes() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let core = g.tape.constant(array![[2.0, 0.0]]);
        let salient = g.tape.constant(array![[1.0, 1.0]]);
        let attention = g.tape.constant(Matrix::ones((1, 1)));
        let vf = vec![ViewFeatures { view_index: 0, core, salient, attention }];
        let a_g = g.tape.constant(array![[0.0, 2.0]]);
        let a_l = g.tape.constant(array![[0.5, -1.0]]);
        let half = fuse(&mut g, &vf, a_g, a_l, 0.5).unwrap();
        assert_eq!(g.tape.value(half.global), &array![[1.0, 1.0]]);
        assert_eq!(g.tape.value(half.local), &array![[1.5, 0.0]]);
        let one = fuse(&mut g, &vf, a_g, a_l, 1.0).unwrap();
        assert_eq!(g.tape.value(one.global), &array![[2.0, 0.0]]);
        let zero = fuse(&mut g, &vf, a_g, a_l, 0.0).unwrap();
        assert_eq!(g.tape.value(zero.global), &array![[0.0, 2.0]]);
        assert!(matches!(fuse(&mut g, &vf, a_g, a_l, 1.5), Err(MadsError::Config(_))));
    }
}
