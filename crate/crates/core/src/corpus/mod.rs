//! Documents, visual-word lexicons, dataset manifests and the synthetic
//! data generator used for desk-scale verification.

mod document;
mod lexicon;
mod manifest;
mod synthetic;
mod tokenize;
mod views;

pub use document::{load_documents, save_documents, MultiAttributeDocument};
pub use lexicon::{build_lexicon, VisualWordLexicon};
pub use manifest::{DatasetManifest, Sample, Split};
pub use synthetic::{gen_synthetic_dataset, LatentTable, SyntheticConfig, SyntheticDataset, NOISE_WORDS};
pub use tokenize::{normalize_word, split_words, tokenize, TokenizedParagraph, Vocabulary, UNK_TOKEN};
pub use views::{normalize_view_name, AttributeView, AttributeViewSet};

use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{MadsError, Result};

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| MadsError::io(path, e))
}

static TMP_SEQ: AtomicU64 = AtomicU64::new(0);

/// Writes via a temporary sibling file and a rename so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| MadsError::io(parent, e))?;
        }
    }
    let file_name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let seq = TMP_SEQ.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_file_name(format!(".{file_name}.{}.{seq}.tmp", std::process::id()));
    std::fs::write(&tmp, bytes).map_err(|e| MadsError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| MadsError::io(path, e))
}
