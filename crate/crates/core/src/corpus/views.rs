use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{MadsError, Result};

/// Case-folds and collapses internal whitespace.
pub fn normalize_view_name(name: &str) -> String {
    name.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeView {
    pub name: String,
    #[serde(default)]
    pub explanation: String,
}

/// Ordered, non-empty list of visual attribute views with unique names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttributeView>", into = "Vec<AttributeView>")]
pub struct AttributeViewSet {
    views: Vec<AttributeView>,
}

impl TryFrom<Vec<AttributeView>> for AttributeViewSet {
    type Error = MadsError;

    fn try_from(views: Vec<AttributeView>) -> Result<Self> {
        AttributeViewSet::new(views)
    }
}

impl From<AttributeViewSet> for Vec<AttributeView> {
    fn from(set: AttributeViewSet) -> Self {
        set.views
    }
}

impl AttributeViewSet {
    pub fn new(views: Vec<AttributeView>) -> Result<Self> {
        if views.is_empty() {
            return Err(MadsError::Validation("an attribute view set needs at least one view".into()));
        }
        let mut seen = HashSet::new();
        for v in &views {
            let key = normalize_view_name(&v.name);
            if key.is_empty() {
                return Err(MadsError::Validation("attribute view with an empty name".into()));
            }
            if !seen.insert(key) {
                return Err(MadsError::Validation(format!("duplicate attribute view {:?}", v.name)));
            }
        }
        Ok(Self { views })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(
            names
                .iter()
                .map(|n| AttributeView { name: n.as_ref().to_string(), explanation: String::new() })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn views(&self) -> &[AttributeView] {
        &self.views
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.views.iter().map(|v| v.name.as_str())
    }

    /// Position of a view, matched after name normalization.
    pub fn position(&self, name: &str) -> Option<usize> {
        let key = normalize_view_name(name);
        self.views.iter().position(|v| normalize_view_name(&v.name) == key)
    }

    /// Views shipped for the coarse-grained animal domain.
    pub fn animal() -> Self {
        Self::from_table(&[
            ("Size and Shape", "The overall body size and shape, including head, body, limbs, and tail, are primary indicators of species."),
            ("Color and Patterns", "Attention to coloration, including fur, skin, feather patterns, and unique markings like stripes or spots."),
            ("Physical Features", "Specific anatomical details such as the shape of beak, ears, nose, tail, paws, horns, or antlers, as well as eye color and shape, are significant."),
            ("Fur, Feathers, or Scales Texture", "The type and texture of body covering, whether it's fur, feathers, or scales, help in determining the species."),
            ("Habitat and Environment", "The animal's environment or habitat, evident from the image's background, can provide vital clues."),
        ])
    }

    /// Views shipped for the fine-grained bird domain.
    pub fn bird() -> Self {
        Self::from_table(&[
            ("Size and Shape", "The overall size (small, medium, large) and body shape of the bird. Different families of birds have distinctive shapes."),
            ("Beak Shape and Size", "The size and shape of the bird's beak can give clues about its diet and, consequently, its species."),
            ("Color and Markings", "The color patterns, including any distinctive markings, stripes, or spots. The colors of the head, back, underparts, and wings are particularly important."),
            ("Legs and Feet", "The length and color of the legs and the type of feet."),
            ("Tail", "The shape and length of the tail can be distinctive."),
            ("Wing Shape", "Shape and size of the wings, especially in flight."),
            ("Behavior", "Note distinctive behaviors, such as the way it flies, forages, or interacts with other birds."),
            ("Habitat", "The environment where the bird is found (e.g., woodland, wetland, grassland)."),
        ])
    }

    /// Views shipped for the fine-grained flower domain.
    pub fn flower() -> Self {
        Self::from_table(&[
            ("Petal Characteristics", "This includes color and patterns on the petals, their shape (such as round, elongated, spiky), size, texture, and arrangement (overlapping, spaced, in single or multiple layers)."),
            ("Center of the Flower", "This category encompasses the stamen and pistil, focusing on their color, structure, and any distinct features. This also includes the appearance of pollen and stamens."),
            ("Leaf and Stem Features", "The shape, size, color, arrangement, and pattern of leaves are vital. Stem characteristics, such as length, thickness, color, texture, and presence of hairs, are also included."),
            ("Size and Shape of the Flower", "This includes the overall size of the flower, both individual petals and total diameter, and the general shape."),
            ("Patterns and Markings", "Unique patterns or markings on the petals or leaves aid in identification."),
            ("Habitat and Location", "The environment where the flower is growing (like garden, forest, desert) and its geographical location."),
        ])
    }

    /// Shipped default for a dataset domain (`animal`, `bird`, `flower`).
    pub fn for_domain(domain: &str) -> Option<Self> {
        match domain.trim().to_lowercase().as_str() {
            "animal" => Some(Self::animal()),
            "bird" => Some(Self::bird()),
            "flower" => Some(Self::flower()),
            _ => None,
        }
    }

    fn from_table(rows: &[(&str, &str)]) -> Self {
        Self::new(
            rows.iter()
                .map(|(n, e)| AttributeView { name: n.to_string(), explanation: e.to_string() })
                .collect(),
        )
        .expect("shipped view tables are valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_after_normalization_rejected() {
        let err = AttributeViewSet::from_names(&["Color and Patterns", "  color   AND patterns "]).unwrap_err();
        assert!(matches!(err, MadsError::Validation(_)));
    }

    #[test]
    fn empty_set_rejected() {
        assert!(AttributeViewSet::new(vec![]).is_err());
    }

    #[test]
    fn shipped_tables() {
        assert_eq!(AttributeViewSet::animal().len(), 5);
        assert_eq!(AttributeViewSet::bird().len(), 8);
        assert_eq!(AttributeViewSet::flower().len(), 6);
        assert_eq!(AttributeViewSet::animal().position("habitat and environment"), Some(4));
    }

    #[test]
    fn serde_validates() {
        let json = r#"[{"name":"Tail"},{"name":"tail"}]"#;
        assert!(serde_json::from_str::<AttributeViewSet>(json).is_err());
        let ok: AttributeViewSet = serde_json::from_str(r#"[{"name":"Tail","explanation":"x"}]"#).unwrap();
        assert_eq!(ok.len(), 1);
    }
}
