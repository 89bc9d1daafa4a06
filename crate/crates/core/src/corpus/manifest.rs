use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, write_atomic};
use crate::error::{MadsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    TestSeen,
    TestUnseen,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub image_ref: String,
    pub category_id: u32,
    pub split: Split,
}

/// Seen/unseen class split and the image samples of a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub seen: Vec<u32>,
    pub unseen: Vec<u32>,
    pub samples: Vec<Sample>,
    #[serde(default)]
    pub feature_source: Option<String>,
}

impl DatasetManifest {
    pub fn new(seen: Vec<u32>, unseen: Vec<u32>, samples: Vec<Sample>) -> Result<Self> {
        let m = Self { seen, unseen, samples, feature_source: None };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let seen: BTreeSet<_> = self.seen.iter().copied().collect();
        let unseen: BTreeSet<_> = self.unseen.iter().copied().collect();
        if seen.len() != self.seen.len() || unseen.len() != self.unseen.len() {
            return Err(MadsError::Validation("duplicate class id in seen or unseen list".into()));
        }
        if let Some(c) = seen.intersection(&unseen).next() {
            return Err(MadsError::Validation(format!("class {c} is both seen and unseen")));
        }
        for s in &self.samples {
            let ok = match s.split {
                Split::Train | Split::TestSeen => seen.contains(&s.category_id),
                Split::TestUnseen => unseen.contains(&s.category_id),
            };
            if !ok {
                return Err(MadsError::Validation(format!(
                    "sample {} has class {} which is not allowed in split {:?}",
                    s.image_ref, s.category_id, s.split
                )));
            }
        }
        Ok(())
    }

    /// Seen classes followed by unseen classes.
    pub fn categories(&self) -> Vec<u32> {
        self.seen.iter().chain(self.unseen.iter()).copied().collect()
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Sample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let m: Self = serde_json::from_str(&text).map_err(|e| MadsError::schema(path.display().to_string(), e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| MadsError::schema("manifest", e))?;
        write_atomic(path, json.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(r: &str, c: u32, split: Split) -> Sample {
        Sample { image_ref: r.into(), category_id: c, split }
    }

    #[test]
    fn overlapping_sets_rejected() {
        assert!(DatasetManifest::new(vec![0, 1], vec![1, 2], vec![]).is_err());
    }

    #[test]
    fn train_label_must_be_seen() {
        let err = DatasetManifest::new(vec![0], vec![1], vec![sample("a", 1, Split::Train)]).unwrap_err();
        assert!(err.to_string().contains("a"));
        assert!(DatasetManifest::new(vec![0], vec![1], vec![sample("a", 0, Split::TestUnseen)]).is_err());
    }

    #[test]
    fn split_names_on_the_wire() {
        let m = DatasetManifest::new(
            vec![0],
            vec![1],
            vec![sample("a", 0, Split::Train), sample("b", 0, Split::TestSeen), sample("c", 1, Split::TestUnseen)],
        )
        .unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"train\"") && json.contains("\"test_seen\"") && json.contains("\"test_unseen\""));
        assert!(serde_json::from_str::<DatasetManifest>(&json.replace("test_seen", "validation")).is_err());
    }
}
