//! Per-view interpretable scores for one image.

use std::collections::BTreeMap;

use ndarray::ArrayView1;
use serde::{Deserialize, Serialize};

use super::{ImageSource, MadsModel, PreparedDocument};
use crate::error::Result;

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// `(word, focus score, ψ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordScore(pub String, pub f64, pub u8);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewExplanation {
    /// Cosine between the view's core feature and the image's global feature.
    pub cosine: f64,
    pub top_words: Vec<WordScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassExplanation {
    pub category_id: u32,
    /// Global score `I_g · T_g`.
    pub score: f64,
    pub views: BTreeMap<String, ViewExplanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub image_ref: String,
    pub classes: BTreeMap<String, ClassExplanation>,
}

/// Words sorted by descending focus score; equal scores keep text order.
pub(crate) fn top_words(tokens: &crate::corpus::TokenizedParagraph, map: &crate::autodiff::Matrix, k: usize) -> Vec<WordScore> {
    let mut scored: Vec<WordScore> = tokens
        .tokens
        .iter()
        .enumerate()
        .map(|(j, w)| {
            let s = map.column(j).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            WordScore(w.clone(), s, tokens.visual_mask[j])
        })
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    scored
}

pub fn explain(
    model: &MadsModel,
    image_ref: &str,
    source: &ImageSource,
    docs: &[PreparedDocument],
    top_k: usize,
) -> Result<Explanation> {
    let classes = model.class_embeddings(docs)?;
    let ig = model.image_globals(source, &[image_ref])?;
    let ig = ig.row(0);
    let mut out = BTreeMap::new();
    for (c, doc) in docs.iter().enumerate() {
        let views = model
            .views
            .views()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let cos = cosine(classes.cores[c].row(i), ig);
                let words = top_words(&doc.views[i], &classes.maps[c][i], top_k);
                (v.name.clone(), ViewExplanation { cosine: cos, top_words: words })
            })
            .collect();
        let score = classes.global.row(c).dot(&ig);
        let key = if out.contains_key(&doc.category_name) {
            format!("{} ({})", doc.category_name, doc.category_id)
        } else {
            doc.category_name.clone()
        };
        out.insert(key, ClassExplanation { category_id: doc.category_id, score, views });
    }
    Ok(Explanation { image_ref: image_ref.to_string(), classes: out })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::fixture;
    use super::*;
    use crate::corpus::TokenizedParagraph;
    use ndarray::array;

    #[test]
    fn cosine_examples() {
        assert!((cosine(array![1.0, 2.0].view(), array![2.0, 4.0].view()) - 1.0).abs() < 1e-12);
        assert_eq!(cosine(array![1.0, 0.0].view(), array![0.0, 3.0].view()), 0.0);
        assert_eq!(cosine(array![0.0, 0.0].view(), array![1.0, 3.0].view()), 0.0);
    }

    #[test]
    fn top_words_descending_with_stable_ties() {
        let t = TokenizedParagraph {
            tokens: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            token_ids: vec![0; 4],
            visual_mask: vec![0, 1, 1, 0],
        };
        let h = array![[0.1, 0.4, 0.1, 0.4], [0.3, 0.2, 0.3, 0.2]];
        let top = top_words(&t, &h, 3);
        let words: Vec<_> = top.iter().map(|w| w.0.as_str()).collect();
        assert_eq!(words, ["b", "d", "a"]);
        assert_eq!(top[0], WordScore("b".into(), 0.4, 1));
    }

    #[test]
    fn explanation_covers_every_class_and_view() {
        let f = fixture(6);
        let src = f.source();
        let r = &f.data.manifest.samples[0].image_ref;
        let e = explain(&f.model, r, &src, &f.docs, 3).unwrap();
        assert_eq!(e.classes.len(), f.docs.len());
        for c in e.classes.values() {
            assert_eq!(c.views.len(), 3);
            assert!(c.views.values().all(|v| v.top_words.len() <= 3 && v.cosine.abs() <= 1.0 + 1e-12));
        }
    }
}
