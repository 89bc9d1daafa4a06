//! Shared test oracles: central finite differences and small random instances.
#![allow(dead_code)]

pub mod gradcases;

use mads::autodiff::{Matrix, ParamStore, Var};
use mads::nn::Graph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;
/// Floor for gradients that are zero up to rounding: central differences of
/// O(1) values carry about 1e-11 of cancellation error at this step.
pub const FD_ATOL: f64 = 1e-8;
/// Coordinates checked per tensor; smaller tensors are checked in full.
pub const FD_MAX_COORDS: usize = 24;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_shape_fn((rows, cols), |_| scale * (rng.random::<f64>() * 2.0 - 1.0))
}

/// Scalar probe `Σ out ⊙ R` of a possibly non-scalar output.
fn probe(store: &ParamStore, inputs: &[Matrix], weights: &Matrix, build: &dyn Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new(store);
    let leaves: Vec<Var> = inputs.iter().map(|m| g.tape.leaf(m.clone())).collect();
    let out = build(&mut g, &leaves);
    (g.tape.value(out) * weights).sum()
}

#[derive(Debug, Default)]
pub struct FdReport {
    pub coords: usize,
    pub worst_rel: f64,
}

fn coords(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..shape.0).flat_map(|i| (0..shape.1).map(move |j| (i, j))).collect();
    if all.len() <= FD_MAX_COORDS {
        return all;
    }
    (0..FD_MAX_COORDS).map(|_| all[rng.random_range(0..all.len())]).collect()
}

fn compare(what: &str, analytic: f64, numeric: f64, report: &mut FdReport) {
    let err = (analytic - numeric).abs();
    let scale = analytic.abs().max(numeric.abs());
    assert!(
        err <= FD_RTOL * scale + FD_ATOL,
        "{what}: analytic {analytic:.10e} vs numeric {numeric:.10e} (err {err:.3e})"
    );
    report.coords += 1;
    if scale > 1e-6 {
        report.worst_rel = report.worst_rel.max(err / scale);
    }
}

/// Compares reverse-mode gradients of `build` with central differences, for
/// every input leaf and every trainable parameter the graph binds.
pub fn fd_check(store: &ParamStore, inputs: &[Matrix], seed: u64, build: impl Fn(&mut Graph, &[Var]) -> Var) -> FdReport {
    let build: &dyn Fn(&mut Graph, &[Var]) -> Var = &build;
    let mut rng = rng(seed ^ 0xfd);
    let mut g = Graph::new(store);
    let leaves: Vec<Var> = inputs.iter().map(|m| g.tape.leaf(m.clone())).collect();
    let out = build(&mut g, &leaves);
    let (r, c) = g.tape.shape(out);
    let weights = random_matrix(&mut rng, r, c, 1.0);
    let weighted = g.tape.mul_const(out, weights.clone());
    let total = g.tape.sum_all(weighted);
    let grads = g.tape.backward(total);
    let mut report = FdReport::default();

    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads.wrt(*leaf).cloned().unwrap_or_else(|| Matrix::zeros(inputs[k].dim()));
        for (i, j) in coords(&mut rng, inputs[k].dim()) {
            let mut plus = inputs.to_vec();
            plus[k][[i, j]] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k][[i, j]] -= FD_STEP;
            let numeric = (probe(store, &plus, &weights, build) - probe(store, &minus, &weights, build)) / (2.0 * FD_STEP);
            compare(&format!("input {k}[{i},{j}]"), analytic[[i, j]], numeric, &mut report);
        }
    }

    let param_grads = g.tape.param_grads(&grads);
    assert!(!param_grads.is_empty() || !leaves.is_empty(), "nothing to check");
    for (id, analytic) in param_grads {
        for (i, j) in coords(&mut rng, analytic.dim()) {
            let mut s = store.clone();
            s.get_mut(id)[[i, j]] += FD_STEP;
            let up = probe(&s, inputs, &weights, build);
            s.get_mut(id)[[i, j]] -= 2.0 * FD_STEP;
            let down = probe(&s, inputs, &weights, build);
            let numeric = (up - down) / (2.0 * FD_STEP);
            compare(&format!("{}[{i},{j}]", store.name(id)), analytic[[i, j]], numeric, &mut report);
        }
    }
    report
}

/// Instance sizes within the gradient-suite bounds.
#[derive(Debug, Clone, Copy)]
pub struct Sizes {
    pub views: usize,
    pub queries: usize,
    pub words: usize,
    pub patches: usize,
    pub dim: usize,
    pub head: usize,
}

impl Sizes {
    pub fn random(rng: &mut ChaCha8Rng) -> Self {
        let dim = rng.random_range(2..=8);
        Self {
            views: rng.random_range(1..=3),
            queries: rng.random_range(1..=2),
            words: rng.random_range(1..=5),
            patches: rng.random_range(1..=4),
            dim,
            head: rng.random_range(1..=dim),
        }
    }
}
