use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_to_string, write_atomic, AttributeViewSet};
use crate::error::{MadsError, Result};

/// Per-category description split into one paragraph per attribute view.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiAttributeDocument {
    pub category_id: u32,
    pub category_name: String,
    pub paragraphs: BTreeMap<String, String>,
}

impl MultiAttributeDocument {
    /// Checks that the paragraph keys match `views` exactly and none is empty.
    pub fn validate(&self, views: &AttributeViewSet) -> Result<()> {
        for name in views.names() {
            match self.paragraphs.get(name) {
                None => {
                    return Err(MadsError::Validation(format!(
                        "category {} ({:?}) is missing view {:?}",
                        self.category_id, self.category_name, name
                    )))
                }
                Some(p) if p.trim().is_empty() => {
                    return Err(MadsError::Validation(format!(
                        "category {} ({:?}) has an empty {:?} paragraph",
                        self.category_id, self.category_name, name
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = self.paragraphs.keys().find(|k| views.position(k).is_none()) {
            return Err(MadsError::Validation(format!(
                "category {} ({:?}) has unknown view {:?}",
                self.category_id, self.category_name, extra
            )));
        }
        if self.paragraphs.len() != views.len() {
            return Err(MadsError::Validation(format!(
                "category {} ({:?}) has {} paragraphs for {} views",
                self.category_id,
                self.category_name,
                self.paragraphs.len(),
                views.len()
            )));
        }
        Ok(())
    }

    /// Paragraph for the `i`-th view of `views`.
    pub fn paragraph(&self, views: &AttributeViewSet, i: usize) -> Option<&str> {
        self.paragraphs.get(&views.views()[i].name).map(String::as_str)
    }
}

/// Loads a JSON array of documents and validates each against `views`.
pub fn load_documents(path: &Path, views: &AttributeViewSet) -> Result<Vec<MultiAttributeDocument>> {
    let text = read_to_string(path)?;
    let raw: Vec<serde_json::Value> =
        serde_json::from_str(&text).map_err(|e| MadsError::schema(path.display().to_string(), e))?;
    let mut docs = Vec::with_capacity(raw.len());
    for (i, value) in raw.into_iter().enumerate() {
        let doc: MultiAttributeDocument = serde_json::from_value(value)
            .map_err(|e| MadsError::schema(format!("{} record {i}", path.display()), e))?;
        doc.validate(views)?;
        docs.push(doc);
    }
    let mut ids = std::collections::HashSet::new();
    for d in &docs {
        if !ids.insert(d.category_id) {
            return Err(MadsError::Validation(format!("duplicate category id {}", d.category_id)));
        }
    }
    Ok(docs)
}

pub fn save_documents(path: &Path, docs: &[MultiAttributeDocument]) -> Result<()> {
    let json = serde_json::to_string_pretty(docs).map_err(|e| MadsError::schema("documents", e))?;
    write_atomic(path, json.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn views() -> AttributeViewSet {
        AttributeViewSet::from_names(&["Shape", "Color", "Habitat", "Texture", "Tail"]).unwrap()
    }

    fn doc(id: u32, skip: Option<&str>) -> MultiAttributeDocument {
        let paragraphs = views()
            .names()
            .filter(|n| Some(*n) != skip)
            .map(|n| (n.to_string(), format!("{n} text for {id}")))
            .collect();
        MultiAttributeDocument { category_id: id, category_name: format!("class{id}"), paragraphs }
    }

    #[test]
    fn well_formed_two_categories() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("docs.json");
        save_documents(&p, &[doc(0, None), doc(1, None)]).unwrap();
        let docs = load_documents(&p, &views()).unwrap();
        assert_eq!(docs.len(), 2);
        assert!(docs.iter().all(|d| d.paragraphs.len() == 5));
    }

    #[test]
    fn missing_tail_names_category() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("docs.json");
        save_documents(&p, &[doc(0, None), doc(1, Some("Tail"))]).unwrap();
        let err = load_documents(&p, &views()).unwrap_err().to_string();
        assert!(err.contains("class1") && err.contains("Tail"), "{err}");
    }

    #[test]
    fn schema_error_names_record() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("docs.json");
        std::fs::write(&p, r#"[{"category_id": 0, "category_name": "a", "paragraphs": {}}, {"category_id": "x"}]"#).unwrap();
        let err = load_documents(&p, &views()).unwrap_err();
        // first record fails validation before the second is parsed
        assert!(matches!(err, MadsError::Validation(_)));
        std::fs::write(&p, r#"[{"category_id": "x"}]"#).unwrap();
        let err = load_documents(&p, &views()).unwrap_err();
        assert!(matches!(err, MadsError::Schema { .. }));
        assert!(err.to_string().contains("record 0"));
    }

    #[test]
    fn round_trip_identity() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("docs.json");
        let docs = vec![doc(3, None), doc(7, None)];
        save_documents(&p, &docs).unwrap();
        assert_eq!(load_documents(&p, &views()).unwrap(), docs);
    }
}
