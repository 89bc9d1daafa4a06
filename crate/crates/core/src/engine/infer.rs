//! ZSL/GZSL prediction, per-class accuracy and the calibration sweep.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::{ImageSource, MadsModel, PreparedDocument};
use crate::autodiff::{softmax_rows, Matrix};
use crate::corpus::{DatasetManifest, Split};
use crate::error::{MadsError, Result};

/// Index of the first maximum.
fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Highest-scoring class among `unseen` (indices into `scores`); ties go to
/// the lowest index.
pub fn predict_zsl(scores: ArrayView1<f64>, unseen: &[usize]) -> Result<usize> {
    let mut sorted = unseen.to_vec();
    sorted.sort_unstable();
    let i = argmax(sorted.iter().map(|&c| scores[c]))
        .ok_or_else(|| MadsError::Config("no unseen classes to predict".into()))?;
    Ok(sorted[i])
}

/// Calibrated stacking: argmax of `score − γ·1[seen]`; ties go to the lowest index.
pub fn predict_gzsl(scores: ArrayView1<f64>, seen_mask: &[bool], gamma: f64) -> usize {
    argmax(scores.iter().zip(seen_mask).map(|(&s, &seen)| if seen { s - gamma } else { s })).unwrap_or(0)
}

/// Accuracy of every class that has samples.
pub fn per_class_accuracy(predictions: &[u32], labels: &[u32]) -> BTreeMap<u32, f64> {
    let mut counts: BTreeMap<u32, (usize, usize)> = BTreeMap::new();
    for (&p, &y) in predictions.iter().zip(labels) {
        let e = counts.entry(y).or_default();
        e.1 += 1;
        if p == y {
            e.0 += 1;
        }
    }
    counts.into_iter().map(|(c, (hit, n))| (c, hit as f64 / n as f64)).collect()
}

fn mean_accuracy(per_class: &BTreeMap<u32, f64>) -> f64 {
    if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    }
}

/// `2US/(U+S)`, zero when both are zero.
pub fn harmonic_mean(u: f64, s: f64) -> f64 {
    if u + s > 0.0 {
        2.0 * u * s / (u + s)
    } else {
        0.0
    }
}

/// `0, step, 2·step, ..., 1`.
pub fn gamma_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n).map(|i| i as f64 * step).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaSelection {
    Fixed,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPoint {
    pub gamma: f64,
    pub u: f64,
    pub s: f64,
    pub h: f64,
}

/// Accuracies are fractions in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub t1: f64,
    pub u: f64,
    pub s: f64,
    pub h: f64,
    pub gamma: f64,
    pub gamma_selection: GammaSelection,
    /// ZSL accuracy of every unseen class.
    pub per_class_acc: BTreeMap<u32, f64>,
    /// GZSL accuracy of every test class at the chosen γ.
    pub gzsl_per_class_acc: BTreeMap<u32, f64>,
    /// Test metrics at every swept γ.
    pub sweep: Vec<GammaPoint>,
}

#[derive(Debug, Clone)]
pub struct EvalOptions<'a> {
    /// Applied to per-image softmax-normalized scores.
    pub gamma_grid: Vec<f64>,
    /// Use this γ instead of selecting one.
    pub gamma: Option<f64>,
    /// Manifest whose test splits select γ; its images must be in the source.
    pub validation: Option<&'a DatasetManifest>,
}

impl Default for EvalOptions<'_> {
    fn default() -> Self {
        Self { gamma_grid: gamma_grid(0.02), gamma: None, validation: None }
    }
}

/// Documents ordered as the manifest's categories (seen first).
pub(crate) fn ordered_documents(manifest: &DatasetManifest, docs: &[PreparedDocument]) -> Result<Vec<PreparedDocument>> {
    manifest
        .categories()
        .iter()
        .map(|c| {
            docs.iter()
                .find(|d| d.category_id == *c)
                .cloned()
                .ok_or_else(|| MadsError::Validation(format!("no document for category {c}")))
        })
        .collect()
}

struct SplitScores {
    labels: Vec<u32>,
    /// Raw global scores, `n × C`.
    raw: Matrix,
    /// Per-image softmax of `raw`.
    normalized: Matrix,
}

fn split_scores(
    model: &MadsModel,
    manifest: &DatasetManifest,
    split: Split,
    source: &ImageSource,
    classes: &super::ClassEmbeddings,
) -> Result<SplitScores> {
    let samples: Vec<_> = manifest.split(split).collect();
    let refs: Vec<&str> = samples.iter().map(|s| s.image_ref.as_str()).collect();
    let raw = model.global_scores(source, &refs, classes)?;
    let normalized = softmax_rows(&raw);
    Ok(SplitScores { labels: samples.iter().map(|s| s.category_id).collect(), raw, normalized })
}

fn warn_empty_classes(classes: &[u32], labels: &[u32], split: Split) {
    let present: BTreeSet<u32> = labels.iter().copied().collect();
    for c in classes.iter().filter(|c| !present.contains(c)) {
        log::warn!("class {c} has no {split:?} samples and is excluded from the average");
    }
}

fn gzsl_point(scores: &[&SplitScores; 2], ids: &[u32], seen_mask: &[bool], gamma: f64) -> (GammaPoint, BTreeMap<u32, f64>) {
    let mut accs = Vec::with_capacity(2);
    let mut all = BTreeMap::new();
    for sc in scores {
        let preds: Vec<u32> =
            sc.normalized.rows().into_iter().map(|row| ids[predict_gzsl(row, seen_mask, gamma)]).collect();
        let per_class = per_class_accuracy(&preds, &sc.labels);
        accs.push(mean_accuracy(&per_class));
        all.extend(per_class);
    }
    let (u, s) = (accs[0], accs[1]);
    (GammaPoint { gamma, u, s, h: harmonic_mean(u, s) }, all)
}

fn best_gamma(points: &[GammaPoint]) -> Option<f64> {
    let mut best: Option<GammaPoint> = None;
    for p in points {
        if best.is_none_or(|b| p.h > b.h) {
            best = Some(*p);
        }
    }
    best.map(|p| p.gamma)
}

/// ZSL per-class top-1 over the unseen test split.
pub(crate) fn zsl_accuracy(
    model: &MadsModel,
    manifest: &DatasetManifest,
    docs: &[PreparedDocument],
    source: &ImageSource,
) -> Result<(f64, BTreeMap<u32, f64>)> {
    let ordered = ordered_documents(manifest, docs)?;
    let classes = model.class_embeddings(&ordered)?;
    let sc = split_scores(model, manifest, Split::TestUnseen, source, &classes)?;
    if sc.labels.is_empty() {
        return Err(MadsError::Validation("test_unseen split is empty".into()));
    }
    let unseen: Vec<usize> = (manifest.seen.len()..classes.category_ids.len()).collect();
    let preds = sc
        .raw
        .rows()
        .into_iter()
        .map(|row| predict_zsl(row, &unseen).map(|i| classes.category_ids[i]))
        .collect::<Result<Vec<_>>>()?;
    warn_empty_classes(&manifest.unseen, &sc.labels, Split::TestUnseen);
    let per_class = per_class_accuracy(&preds, &sc.labels);
    Ok((mean_accuracy(&per_class), per_class))
}

/// Evaluates ZSL T1 and GZSL U/S/H with a γ sweep.
pub fn evaluate(
    model: &MadsModel,
    manifest: &DatasetManifest,
    docs: &[PreparedDocument],
    source: &ImageSource,
    options: &EvalOptions,
) -> Result<EvalResult> {
    if manifest.split(Split::TestSeen).next().is_none() {
        return Err(MadsError::Validation("test_seen split is empty".into()));
    }
    let (t1, per_class_acc) = zsl_accuracy(model, manifest, docs, source)?;
    let ordered = ordered_documents(manifest, docs)?;
    let classes = model.class_embeddings(&ordered)?;
    let ids = &classes.category_ids;
    let seen_mask: Vec<bool> = (0..ids.len()).map(|i| i < manifest.seen.len()).collect();
    let unseen = split_scores(model, manifest, Split::TestUnseen, source, &classes)?;
    let seen = split_scores(model, manifest, Split::TestSeen, source, &classes)?;
    warn_empty_classes(&manifest.seen, &seen.labels, Split::TestSeen);
    let pair = [&unseen, &seen];
    let sweep: Vec<GammaPoint> = options.gamma_grid.iter().map(|&g| gzsl_point(&pair, ids, &seen_mask, g).0).collect();

    let (gamma, selection) = if let Some(g) = options.gamma {
        (g, GammaSelection::Fixed)
    } else if let Some(val) = options.validation {
        if val.categories() != manifest.categories() {
            return Err(MadsError::Validation("validation manifest has a different class list".into()));
        }
        let vu = split_scores(model, val, Split::TestUnseen, source, &classes)?;
        let vs = split_scores(model, val, Split::TestSeen, source, &classes)?;
        let points: Vec<GammaPoint> =
            options.gamma_grid.iter().map(|&g| gzsl_point(&[&vu, &vs], ids, &seen_mask, g).0).collect();
        (best_gamma(&points).unwrap_or(0.0), GammaSelection::Validation)
    } else {
        (best_gamma(&sweep).unwrap_or(0.0), GammaSelection::Test)
    };
    if !gamma.is_finite() {
        return Err(MadsError::Config(format!("gamma {gamma} is not finite")));
    }
    let (point, gzsl_per_class_acc) = gzsl_point(&pair, ids, &seen_mask, gamma);
    Ok(EvalResult {
        t1,
        u: point.u,
        s: point.s,
        h: point.h,
        gamma,
        gamma_selection: selection,
        per_class_acc,
        gzsl_per_class_acc,
        sweep,
    })
}
