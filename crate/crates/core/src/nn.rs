//! Layer building blocks shared by the text, aggregation, image and
//! alignment modules.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Matrix, ParamId, ParamStore, Tape, Var};

/// One forward pass: a tape bound to a parameter store, plus optional dropout.
pub struct Graph<'a> {
    pub tape: Tape,
    pub store: &'a ParamStore,
    dropout: Option<(f64, ChaCha8Rng)>,
}

impl<'a> Graph<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self { tape: Tape::new(), store, dropout: None }
    }

    /// Training-mode graph with inverted dropout at rate `p`.
    pub fn with_dropout(store: &'a ParamStore, p: f64, seed: u64) -> Self {
        let dropout = (p > 0.0).then(|| (p, ChaCha8Rng::seed_from_u64(seed)));
        Self { tape: Tape::new(), store, dropout }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        self.tape.param(self.store, id)
    }

    pub fn dropout(&mut self, x: Var) -> Var {
        let Some((p, rng)) = self.dropout.as_mut() else { return x };
        let keep = 1.0 - *p;
        let (r, c) = self.tape.shape(x);
        let mask = Matrix::from_shape_fn((r, c), |_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 });
        self.tape.mul_const(x, mask)
    }
}

pub(crate) fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Matrix {
    let n = Normal::new(0.0, std).expect("finite std");
    Matrix::from_shape_fn((rows, cols), |_| n.sample(rng))
}

/// Weight initialized with standard deviation `1/sqrt(fan_in)`.
pub(crate) fn init_weight(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
    let w = normal_matrix(rng, fan_in, fan_out, 1.0 / (fan_in as f64).sqrt());
    store.add(name, w, true)
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize, bias: bool) -> Self {
        let weight = init_weight(store, rng, &format!("{name}.weight"), fan_in, fan_out);
        let bias = bias.then(|| store.add(format!("{name}.bias"), Matrix::zeros((1, fan_out)), true));
        Self { weight, bias }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.p(self.weight);
        let y = g.tape.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.p(b);
                g.tape.add_row(y, b)
            }
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn init(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Matrix::ones((1, width)), true),
            beta: store.add(format!("{name}.beta"), Matrix::zeros((1, width)), true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let gamma = g.p(self.gamma);
        let beta = g.p(self.beta);
        g.tape.layer_norm(x, gamma, beta, 1e-5)
    }
}

/// Two-layer GELU feed-forward network.
#[derive(Debug, Clone)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, hidden: usize) -> Self {
        Self {
            fc1: Linear::init(store, rng, &format!("{name}.fc1"), width, hidden, true),
            fc2: Linear::init(store, rng, &format!("{name}.fc2"), hidden, width, true),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let h = self.fc1.forward(g, x);
        let h = g.tape.gelu(h);
        let h = g.dropout(h);
        self.fc2.forward(g, h)
    }
}

/// Scaled dot-product attention. Returns the attended values and the
/// row-stochastic attention map (`queries × keys`).
pub fn attention(g: &mut Graph, q: Var, k: Var, v: Var) -> (Var, Var) {
    let width = g.tape.shape(q).1 as f64;
    let scores = g.tape.matmul_t(q, k);
    let scores = g.tape.scale(scores, 1.0 / width.sqrt());
    let weights = g.tape.softmax_rows(scores);
    let out = g.tape.matmul(weights, v);
    (out, weights)
}

/// Single-head projected attention `softmax(Q Kᵀ/√r_h) V W_o` with bias-free
/// projections, as used by the perceiver, the aggregator and local alignment.
#[derive(Debug, Clone)]
pub struct ProjectedAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

impl ProjectedAttention {
    pub fn init(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, width: usize, head: usize) -> Self {
        Self {
            wq: init_weight(store, rng, &format!("{name}.wq"), width, head),
            wk: init_weight(store, rng, &format!("{name}.wk"), width, head),
            wv: init_weight(store, rng, &format!("{name}.wv"), width, head),
            wo: init_weight(store, rng, &format!("{name}.wo"), head, width),
        }
    }

    pub fn forward(&self, g: &mut Graph, queries: Var, keys: Var) -> (Var, Var) {
        let (wq, wk, wv, wo) = (g.p(self.wq), g.p(self.wk), g.p(self.wv), g.p(self.wo));
        let q = g.tape.matmul(queries, wq);
        let k = g.tape.matmul(keys, wk);
        let v = g.tape.matmul(keys, wv);
        let (attended, weights) = attention(g, q, k, v);
        (g.tape.matmul(attended, wo), weights)
    }
}
