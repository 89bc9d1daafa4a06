//! Training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infer::zsl_accuracy;
use super::{AdamW, ImageSource, LrSchedule, MadsModel, PreparedDocument};
use crate::config::TrainConfig;
use crate::corpus::{DatasetManifest, Split};
use crate::error::{MadsError, Result};
use crate::nn::Graph;
use crate::objective::{focus_loss, global_loss, local_loss, total_loss, LossParts};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    #[serde(rename = "L_global")]
    pub l_global: f64,
    #[serde(rename = "L_local")]
    pub l_local: f64,
    #[serde(rename = "L_focus")]
    pub l_focus: f64,
    /// Learning rate of the last step of the epoch.
    pub lr: f64,
    /// Unseen top-1 after the epoch; absent when per-epoch evaluation is off.
    #[serde(rename = "T1_val")]
    pub t1_val: Option<f64>,
}

impl EpochMetrics {
    pub fn total(&self, config: &TrainConfig) -> f64 {
        self.l_global + config.loss_weights.local * self.l_local + config.loss_weights.focus * self.l_focus
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: u64,
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ step.wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Trains on the manifest's train split. Class embeddings of all seen
/// categories are recomputed in the graph at every step. When `metrics_log`
/// is given, one JSON line per epoch is written to it.
pub fn train(
    model: &mut MadsModel,
    manifest: &DatasetManifest,
    docs: &[PreparedDocument],
    source: &ImageSource,
    config: &TrainConfig,
    metrics_log: Option<&Path>,
) -> Result<TrainReport> {
    config.validate()?;
    let seen_docs: Vec<&PreparedDocument> = manifest
        .seen
        .iter()
        .map(|c| {
            docs.iter()
                .find(|d| d.category_id == *c)
                .ok_or_else(|| MadsError::Validation(format!("no document for seen category {c}")))
        })
        .collect::<Result<_>>()?;
    let samples: Vec<(&str, usize)> = manifest
        .split(Split::Train)
        .map(|s| {
            let label = manifest.seen.iter().position(|&c| c == s.category_id).expect("validated manifest");
            (s.image_ref.as_str(), label)
        })
        .collect();
    if samples.is_empty() {
        return Err(MadsError::Validation("train split is empty".into()));
    }
    let missing: Vec<String> =
        samples.iter().filter(|(r, _)| !source.features.contains_key(*r)).map(|(r, _)| r.to_string()).collect();
    if !missing.is_empty() {
        return Err(MadsError::MissingFeatures { refs: missing });
    }

    let mut log_file = match metrics_log {
        Some(p) => Some(std::fs::File::create(p).map_err(|e| MadsError::io(p, e))?),
        None => None,
    };
    let steps_per_epoch = samples.len().div_ceil(config.batch_size);
    let schedule = LrSchedule::new(
        config.learning_rate,
        config.warmup_epochs * steps_per_epoch,
        config.epochs * steps_per_epoch,
    );
    let mut opt = AdamW::new(config);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    let has_unseen_test = manifest.split(Split::TestUnseen).next().is_some();
    let mut step = 0usize;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let mut lr = 0.0;
        for (batch_idx, batch) in order.chunks(config.batch_size).enumerate() {
            lr = schedule.lr(step);
            let refs: Vec<&str> = batch.iter().map(|&i| samples[i].0).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| samples[i].1).collect();
            let grads = {
                let mut g = Graph::with_dropout(&model.store, config.dropout, step_seed(config.seed, step as u64));
                let mut globals = Vec::with_capacity(seen_docs.len());
                let mut locals = Vec::with_capacity(seen_docs.len());
                let mut focus_terms = Vec::with_capacity(seen_docs.len());
                for doc in &seen_docs {
                    let (emb, feats) = model.class_forward(&mut g, doc)?;
                    globals.push(emb.global);
                    locals.push(emb.local);
                    let maps: Vec<_> = feats.iter().map(|f| f.attention).collect();
                    let masks: Vec<&[u8]> = doc.views.iter().map(|t| t.visual_mask.as_slice()).collect();
                    focus_terms.push(focus_loss(
                        &mut g,
                        &maps,
                        &masks,
                        model.config.focus_form,
                        model.config.focus_normalize_by_length,
                    )?);
                }
                let class_global = g.tape.concat_rows(&globals);
                let focus_stack = g.tape.concat_rows(&focus_terms);
                let focus = g.tape.mean_all(focus_stack);
                let images = model.image_forward(&mut g, source, &refs)?;
                let (l_global, _) = global_loss(&mut g, images.global, class_global, &labels)?;
                let (l_local, _) =
                    local_loss(&mut g, images.local, images.patches, &locals, &labels, &model.local)?;
                let parts = LossParts { global: l_global, local: l_local, focus };
                let total = total_loss(&mut g, parts, &config.loss_weights);
                let values = [g.tape.scalar(l_global), g.tape.scalar(l_local), g.tape.scalar(focus)];
                if !g.tape.scalar(total).is_finite() {
                    return Err(MadsError::Numerical(format!(
                        "non-finite loss at epoch {epoch} batch {batch_idx}: global {} local {} focus {}",
                        values[0], values[1], values[2]
                    )));
                }
                for (s, v) in sums.iter_mut().zip(values) {
                    *s += v;
                }
                let grads = g.tape.backward(total);
                g.tape.param_grads(&grads)
            };
            opt.step(&mut model.store, &grads, lr);
            step += 1;
        }
        model.invalidate_cache();
        let t1_val = if config.eval_each_epoch && has_unseen_test {
            Some(zsl_accuracy(model, manifest, docs, source)?.0)
        } else {
            None
        };
        let n = steps_per_epoch as f64;
        let metrics = EpochMetrics {
            epoch: epoch + 1,
            l_global: sums[0] / n,
            l_local: sums[1] / n,
            l_focus: sums[2] / n,
            lr,
            t1_val,
        };
        log::info!(
            "epoch {}: global {:.4} local {:.4} focus {:.4} lr {:.2e}{}",
            metrics.epoch,
            metrics.l_global,
            metrics.l_local,
            metrics.l_focus,
            metrics.lr,
            t1_val.map(|t| format!(" T1 {:.2}", 100.0 * t)).unwrap_or_default()
        );
        if let (Some(f), Some(p)) = (log_file.as_mut(), metrics_log) {
            let line = serde_json::to_string(&metrics).map_err(|e| MadsError::schema("metrics", e))?;
            writeln!(f, "{line}").map_err(|e| MadsError::io(p, e))?;
        }
        report.epochs.push(metrics);
    }
    report.steps = opt.steps();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::fixture;
    use super::*;

    fn quick(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig { epochs, learning_rate: lr, batch_size: 16, dropout: 0.1, eval_each_epoch: false, ..Default::default() }
    }

    #[test]
    fn zero_lr_leaves_parameters() {
        let mut f = fixture(3);
        let before: Vec<_> = f.model.store.entries().iter().map(|e| e.value.clone()).collect();
        let src_features = f.features.clone();
        let source = ImageSource { backbone: &f.backbone, features: &src_features };
        train(&mut f.model, &f.data.manifest, &f.docs, &source, &quick(1, 0.0), None).unwrap();
        let after: Vec<_> = f.model.store.entries().iter().map(|e| e.value.clone()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn same_seed_same_parameters_and_log() {
        let run = || {
            let mut f = fixture(4);
            let feats = f.features.clone();
            let source = ImageSource { backbone: &f.backbone, features: &feats };
            let dir = tempfile::tempdir().unwrap();
            let log = dir.path().join("m.jsonl");
            let cfg = TrainConfig { eval_each_epoch: true, ..quick(2, 1e-3) };
            let report = train(&mut f.model, &f.data.manifest, &f.docs, &source, &cfg, Some(&log)).unwrap();
            let text = std::fs::read_to_string(&log).unwrap();
            (f.model.store.entries().iter().map(|e| e.value.clone()).collect::<Vec<_>>(), report, text)
        };
        let (a, ra, la) = run();
        let (b, rb, lb) = run();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(la, lb);
        let first: serde_json::Value = serde_json::from_str(la.lines().next().unwrap()).unwrap();
        for key in ["epoch", "L_global", "L_local", "L_focus", "lr", "T1_val"] {
            assert!(first.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn missing_document_is_validation_error() {
        let mut f = fixture(5);
        let feats = f.features.clone();
        let source = ImageSource { backbone: &f.backbone, features: &feats };
        let docs: Vec<_> = f.docs[1..].to_vec();
        let err = train(&mut f.model, &f.data.manifest, &docs, &source, &quick(1, 1e-3), None).unwrap_err();
        assert!(matches!(err, MadsError::Validation(_)));
    }
}
