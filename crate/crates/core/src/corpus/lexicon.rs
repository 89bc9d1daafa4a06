use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, split_words, write_atomic};
use crate::error::{MadsError, Result};

/// Set of visual word forms. Multi-word labels contribute each of their words.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VisualWordLexicon {
    entries: BTreeSet<String>,
    pub source_tag: String,
}

impl VisualWordLexicon {
    pub fn from_labels<'a>(labels: impl IntoIterator<Item = &'a str>, source_tag: impl Into<String>) -> Self {
        let mut entries = BTreeSet::new();
        for label in labels {
            entries.extend(split_words(label));
        }
        Self { entries, source_tag: source_tag.into() }
    }

    /// Membership of an already normalized token.
    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains(token)
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes one entry per line with a provenance comment.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("# visual words: {}\n", self.source_tag);
        for e in &self.entries {
            out.push_str(e);
            out.push('\n');
        }
        write_atomic(path, out.as_bytes())
    }
}

/// Union of label files. A file is either one label per line (`#` starts a
/// comment) or a JSON array of strings.
pub fn build_lexicon<P: AsRef<Path>>(label_files: &[P]) -> Result<VisualWordLexicon> {
    let mut labels: Vec<String> = Vec::new();
    let mut tags = Vec::new();
    for path in label_files {
        let path = path.as_ref();
        let text = read_to_string(path)?;
        if text.trim_start().starts_with('[') {
            let list: Vec<String> =
                serde_json::from_str(&text).map_err(|e| MadsError::schema(path.display().to_string(), e))?;
            labels.extend(list);
        } else {
            labels.extend(
                text.lines()
                    .map(|l| l.split('#').next().unwrap_or("").trim())
                    .filter(|l| !l.is_empty())
                    .map(str::to_string),
            );
        }
        tags.push(path.file_name().and_then(|n| n.to_str()).unwrap_or("labels").to_string());
    }
    Ok(VisualWordLexicon::from_labels(labels.iter().map(String::as_str), tags.join("+")))
}
