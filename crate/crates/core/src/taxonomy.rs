//! Two-level visual attribute hierarchy and prompt rendering.
//!
//! A taxonomy is an ordered list of primary attributes (color, material, ...),
//! each holding an ordered list of secondary attributes (black, white, ...).
//! The order is significant: annotation output, dictionary rows and CAS
//! components all follow it.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;

pub const PLACEHOLDER: &str = "{attribute}";
pub const DEFAULT_PROMPT_TEMPLATE: &str = "The photo is {attribute}";

/// Reconstructed default vocabulary: 20 primaries, 322 secondaries.
/// The lists are editable data; nothing downstream depends on them.
const DEFAULT_TAXONOMY_JSON: &str = include_str!("../data/default_taxonomy.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimaryAttribute {
    pub name: String,
    pub secondaries: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeTaxonomy {
    #[serde(default = "default_template")]
    pub prompt_template: String,
    pub primaries: Vec<PrimaryAttribute>,
}

fn default_template() -> String {
    DEFAULT_PROMPT_TEMPLATE.to_string()
}

/// One rendered text prompt, tagged with the attribute it describes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub primary: String,
    pub secondary: String,
    pub text: String,
}

impl Prompt {
    /// Row id used in prompt embedding files: `primary/secondary`.
    pub fn id(&self) -> String {
        attribute_id(&self.primary, &self.secondary)
    }
}

pub fn attribute_id(primary: &str, secondary: &str) -> String {
    format!("{primary}/{secondary}")
}

impl AttributeTaxonomy {
    pub fn new(
        prompt_template: impl Into<String>,
        primaries: Vec<PrimaryAttribute>,
    ) -> Result<Self> {
        let taxonomy = AttributeTaxonomy {
            prompt_template: prompt_template.into(),
            primaries,
        };
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    /// The shipped 20-primary default taxonomy.
    pub fn default_taxonomy() -> Self {
        Self::from_json(DEFAULT_TAXONOMY_JSON).expect("bundled taxonomy is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let taxonomy: AttributeTaxonomy =
            serde_json::from_str(text).map_err(|e| Error::parse("taxonomy", e))?;
        taxonomy.validate()?;
        Ok(taxonomy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable taxonomy")
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, primary) in self.primaries.iter().enumerate() {
            if primary.name.is_empty() {
                return Err(Error::invalid(format!(
                    "primaries[{i}]: empty primary name"
                )));
            }
            if !seen.insert(primary.name.as_str()) {
                return Err(Error::invalid(format!(
                    "{}: duplicate primary attribute",
                    primary.name
                )));
            }
            if primary.secondaries.is_empty() {
                return Err(Error::invalid(format!(
                    "{}: primary attribute has no secondaries",
                    primary.name
                )));
            }
            let mut names = HashSet::new();
            for (j, secondary) in primary.secondaries.iter().enumerate() {
                if secondary.is_empty() {
                    return Err(Error::invalid(format!(
                        "{}/[{j}]: empty secondary name",
                        primary.name
                    )));
                }
                if !names.insert(secondary.as_str()) {
                    return Err(Error::invalid(format!(
                        "{}/{}: duplicate secondary attribute",
                        primary.name, secondary
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn primary_names(&self) -> Vec<&str> {
        self.primaries.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn secondary_count(&self) -> usize {
        self.primaries.iter().map(|p| p.secondaries.len()).sum()
    }

    /// All (primary, secondary) pairs in taxonomy order.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.primaries.iter().flat_map(|p| {
            p.secondaries
                .iter()
                .map(move |s| (p.name.as_str(), s.as_str()))
        })
    }

    /// Hex SHA-256 of the compact JSON encoding. Two taxonomies share a
    /// fingerprint iff template, names and order all agree.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("serializable taxonomy");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn load_taxonomy(path: &Path) -> Result<AttributeTaxonomy> {
    let text = io::read_to_string(path)?;
    AttributeTaxonomy::from_json(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
        other => other,
    })
}

pub fn save_taxonomy(taxonomy: &AttributeTaxonomy, path: &Path) -> Result<()> {
    let mut text = taxonomy.to_json();
    text.push('\n');
    io::write_atomic(path, text.as_bytes())
}

/// One prompt per secondary attribute, in taxonomy order.
pub fn render_prompts(taxonomy: &AttributeTaxonomy) -> Result<Vec<Prompt>> {
    let template = &taxonomy.prompt_template;
    if !template.contains(PLACEHOLDER) {
        return Err(Error::invalid(format!(
            "prompt template {template:?} has no {PLACEHOLDER} placeholder"
        )));
    }
    Ok(taxonomy
        .pairs()
        .map(|(primary, secondary)| Prompt {
            primary: primary.to_string(),
            secondary: secondary.to_string(),
            text: template.replace(PLACEHOLDER, secondary),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> AttributeTaxonomy {
        AttributeTaxonomy::from_json(
            r#"{"prompt_template": "The photo is {attribute}",
                "primaries": [
                    {"name": "color", "secondaries": ["black", "white"]},
                    {"name": "material", "secondaries": ["wood", "metal"]}
                ]}"#,
        )
        .unwrap()
    }

    #[test]
    fn loads_two_primaries() {
        let t = small();
        assert_eq!(t.primaries.len(), 2);
        assert_eq!(t.secondary_count(), 4);
        assert_eq!(t.primary_names(), vec!["color", "material"]);
        assert_eq!(t.primaries[1].secondaries, vec!["wood", "metal"]);
    }

    #[test]
    fn duplicate_secondary_names_path() {
        let err = AttributeTaxonomy::from_json(
            r#"{"primaries": [{"name": "color", "secondaries": ["black", "black"]}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("color/black"), "{err}");
    }

    #[test]
    fn duplicate_primary_rejected() {
        let err = AttributeTaxonomy::from_json(
            r#"{"primaries": [{"name": "color", "secondaries": ["a"]},
                              {"name": "color", "secondaries": ["b"]}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("color"));
    }

    #[test]
    fn empty_secondaries_rejected() {
        let err =
            AttributeTaxonomy::from_json(r#"{"primaries": [{"name": "size", "secondaries": []}]}"#)
                .unwrap_err();
        assert!(err.to_string().contains("size"));
    }

    #[test]
    fn malformed_json_is_parse_error() {
        let err = AttributeTaxonomy::from_json("{not json").unwrap_err();
        assert_eq!(err.kind(), "format");
    }

    #[test]
    fn default_taxonomy_shape() {
        let t = AttributeTaxonomy::default_taxonomy();
        assert_eq!(t.primaries.len(), 20);
        assert!(t.secondary_count() > 300);
        assert!(t.primaries.iter().all(|p| p.secondaries.len() >= 15));
        assert_eq!(t.prompt_template, DEFAULT_PROMPT_TEMPLATE);
    }

    #[test]
    fn default_prompt_text() {
        let t = AttributeTaxonomy::new(
            DEFAULT_PROMPT_TEMPLATE,
            vec![PrimaryAttribute {
                name: "color".into(),
                secondaries: vec!["Brown".into()],
            }],
        )
        .unwrap();
        assert_eq!(render_prompts(&t).unwrap()[0].text, "The photo is Brown");
    }

    #[test]
    fn custom_template() {
        let mut t = small();
        t.prompt_template = "A {attribute} object".into();
        let prompts = render_prompts(&t).unwrap();
        assert_eq!(prompts[3].text, "A metal object");
    }

    #[test]
    fn prompts_follow_taxonomy_order() {
        let prompts = render_prompts(&small()).unwrap();
        let ids: Vec<_> = prompts.iter().map(Prompt::id).collect();
        assert_eq!(
            ids,
            [
                "color/black",
                "color/white",
                "material/wood",
                "material/metal"
            ]
        );
    }

    #[test]
    fn template_without_placeholder() {
        let mut t = small();
        t.prompt_template = "no slot".into();
        assert!(render_prompts(&t).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        let t = AttributeTaxonomy::default_taxonomy();
        save_taxonomy(&t, &path).unwrap();
        let back = load_taxonomy(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.fingerprint(), t.fingerprint());
    }

    #[test]
    fn fingerprint_sensitive_to_order() {
        let a = small();
        let mut b = small();
        b.primaries.swap(0, 1);
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
