//! Focus, global alignment and local alignment losses.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Matrix, ParamStore, Var};
use crate::config::{FocusForm, LossWeights, ModelConfig, PoolMode};
use crate::error::{MadsError, Result};
use crate::nn::{FeedForward, Graph, Linear, ProjectedAttention};

pub const FOCUS_EPS: f64 = 1e-7;

/// Per-word focus scores: the maximum attention any query pays to each word.
pub fn focus_scores(g: &mut Graph, map: Var) -> Var {
    g.tape.col_max(map)
}

/// Focus loss over the attention maps (`K × M_i`) of all views of one document.
pub fn focus_loss(g: &mut Graph, maps: &[Var], masks: &[&[u8]], form: FocusForm, normalize_by_length: bool) -> Result<Var> {
    if maps.is_empty() || maps.len() != masks.len() {
        return Err(MadsError::Shape(format!("{} attention maps for {} masks", maps.len(), masks.len())));
    }
    let mut terms = Vec::with_capacity(maps.len());
    for (i, (&h, mask)) in maps.iter().zip(masks).enumerate() {
        let m = g.tape.shape(h).1;
        if m != mask.len() {
            return Err(MadsError::Shape(format!("view {i}: {m} attention columns for {} mask entries", mask.len())));
        }
        let s = focus_scores(g, h);
        let s = g.tape.clamp(s, FOCUS_EPS, 1.0 - FOCUS_EPS);
        let log_s = g.tape.log(s);
        let phi = match form {
            FocusForm::Bce => {
                let psi = Matrix::from_shape_fn((1, m), |(_, j)| f64::from(mask[j]));
                let ones = g.tape.constant(Matrix::ones((1, m)));
                let one_minus = g.tape.sub(ones, s);
                let log_rest = g.tape.log(one_minus);
                let a = g.tape.mul_const(log_s, psi.clone());
                let b = g.tape.mul_const(log_rest, psi.mapv(|v| 1.0 - v));
                let sum = g.tape.add(a, b);
                let phi = g.tape.sum_all(sum);
                g.tape.scale(phi, -1.0)
            }
            FocusForm::Literal => g.tape.sum_all(log_s),
        };
        terms.push(if normalize_by_length { g.tape.scale(phi, 1.0 / m as f64) } else { phi });
    }
    let stacked = g.tape.concat_rows(&terms);
    Ok(g.tape.mean_all(stacked))
}

fn check_finite(g: &Graph, logits: Var, what: &str) -> Result<()> {
    if g.tape.value(logits).iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MadsError::Numerical(format!("non-finite {what} logits")))
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(MadsError::Validation(format!("label {y} outside {classes} training classes"))),
        None => Ok(()),
    }
}

/// Dot-product scores between image globals (`n × r`) and class globals (`C × r`).
pub fn global_logits(g: &mut Graph, image_global: Var, class_global: Var) -> Var {
    g.tape.matmul_t(image_global, class_global)
}

/// Cross-entropy over seen-class global scores. Returns the loss and logits.
pub fn global_loss(g: &mut Graph, image_global: Var, class_global: Var, labels: &[usize]) -> Result<(Var, Var)> {
    let logits = global_logits(g, image_global, class_global);
    check_finite(g, logits, "global")?;
    check_labels(labels, g.tape.shape(logits).1)?;
    Ok((g.tape.cross_entropy(logits, labels), logits))
}

#[derive(Debug, Clone)]
pub struct LocalAlignParams {
    pub attn: ProjectedAttention,
    pub mlp: FeedForward,
    /// `r → 1`, no bias.
    pub scorer: Linear,
    pub pool: PoolMode,
}

impl LocalAlignParams {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Self {
        Self {
            attn: ProjectedAttention::init(store, rng, "local.attn", cfg.dim, cfg.head_dim),
            mlp: FeedForward::init(store, rng, "local.mlp", cfg.dim, cfg.dim),
            scorer: Linear::init(store, rng, "local.scorer", cfg.dim, 1, false),
            pool: cfg.pool,
        }
    }
}

/// Local scores of every image against every class: image patches attend
/// to the class's local semantic embeddings, then residual MLP, pooling over
/// patches and a linear scorer. `image_local` stacks `n` images of `patches`
/// rows each; the result is `n × C`.
pub fn local_logits(
    g: &mut Graph,
    image_local: Var,
    patches: usize,
    class_local: &[Var],
    params: &LocalAlignParams,
) -> Result<Var> {
    if class_local.is_empty() {
        return Err(MadsError::EmptyInput("no classes to score".into()));
    }
    let (rows, r) = g.tape.shape(image_local);
    if patches == 0 || rows % patches != 0 {
        return Err(MadsError::Shape(format!("{rows} patch rows are not a multiple of {patches}")));
    }
    let mut columns = Vec::with_capacity(class_local.len());
    for &t_l in class_local {
        if g.tape.shape(t_l).1 != r {
            return Err(MadsError::Shape("class local embeddings differ in width from image features".into()));
        }
        let (att, _) = params.attn.forward(g, image_local, t_l);
        let x = g.tape.add(image_local, att);
        let f = params.mlp.forward(g, x);
        let x = g.tape.add(x, f);
        let pooled = match params.pool {
            PoolMode::Mean => g.tape.segment_mean(x, patches),
            PoolMode::Max => g.tape.segment_max(x, patches),
        };
        columns.push(params.scorer.forward(g, pooled));
    }
    let logits = if columns.len() == 1 { columns[0] } else { g.tape.concat_cols(&columns) };
    check_finite(g, logits, "local")?;
    Ok(logits)
}

/// Cross-entropy over seen-class local scores. Returns the loss and logits.
pub fn local_loss(
    g: &mut Graph,
    image_local: Var,
    patches: usize,
    class_local: &[Var],
    labels: &[usize],
    params: &LocalAlignParams,
) -> Result<(Var, Var)> {
    let logits = local_logits(g, image_local, patches, class_local, params)?;
    check_labels(labels, class_local.len())?;
    Ok((g.tape.cross_entropy(logits, labels), logits))
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub global: Var,
    pub local: Var,
    pub focus: Var,
}

/// `L_global + λ_local·L_local + λ_focus·L_focus`.
pub fn total_loss(g: &mut Graph, parts: LossParts, weights: &LossWeights) -> Var {
    let local = g.tape.scale(parts.local, weights.local);
    let focus = g.tape.scale(parts.focus, weights.focus);
    let sum = g.tape.add(parts.global, local);
    g.tape.add(sum, focus)
}
