//! Relation inventories: entity types, type-directed pair types, named
//! relations, and the chemical-gene interaction hierarchy.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn default_null() -> String {
    "NULL".into()
}

/// An ordered (head type, tail type) combination whose entity pairs are
/// candidates. `hierarchical` pair types take labels of the form
/// `degree^interaction` that are lifted through the interaction hierarchy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairType {
    pub head: String,
    pub tail: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub hierarchical: bool,
}

/// A relation class. `source` is the label used in raw annotations when it
/// differs from `name`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationType {
    pub name: String,
    pub head: String,
    pub tail: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl RelationType {
    pub fn source_label(&self) -> &str {
        self.source.as_deref().unwrap_or(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSchema {
    #[serde(default = "default_null")]
    pub null_label: String,
    pub entity_types: Vec<String>,
    pub pair_types: Vec<PairType>,
    #[serde(default)]
    pub relations: Vec<RelationType>,
    /// Interaction type to its parent interaction type.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub interaction_parents: BTreeMap<String, String>,
}

impl RelationSchema {
    pub fn from_toml(text: &str) -> Result<Self> {
        let schema: RelationSchema =
            toml::from_str(text).map_err(|e| Error::Config(format!("schema: {e}")))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let known = |t: &str| self.entity_types.iter().any(|e| e == t);
        for p in &self.pair_types {
            if !known(&p.head) || !known(&p.tail) {
                return Err(Error::Config(format!(
                    "pair type {}->{} uses an undeclared entity type",
                    p.head, p.tail
                )));
            }
        }
        let mut names = std::collections::BTreeSet::new();
        for r in &self.relations {
            if r.name == self.null_label || !names.insert(&r.name) {
                return Err(Error::Config(format!("duplicate relation name {}", r.name)));
            }
            if !self.is_valid_pair_type(&r.head, &r.tail) {
                return Err(Error::Config(format!(
                    "relation {} has no matching pair type",
                    r.name
                )));
            }
        }
        for start in self.interaction_parents.keys() {
            let mut seen = 0;
            let mut cur = start.as_str();
            while let Some(p) = self.interaction_parents.get(cur) {
                cur = p;
                seen += 1;
                if seen > self.interaction_parents.len() {
                    return Err(Error::Config(format!(
                        "interaction hierarchy has a cycle through {start}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_valid_pair_type(&self, head: &str, tail: &str) -> bool {
        self.pair_type(head, tail).is_some()
    }

    pub fn pair_type(&self, head: &str, tail: &str) -> Option<&PairType> {
        self.pair_types
            .iter()
            .find(|p| p.head == head && p.tail == tail)
    }

    /// Number of classes seen by the model: the null label plus every
    /// relation.
    pub fn num_classes(&self) -> usize {
        self.relations.len() + 1
    }

    /// Class index of a label: 0 is the null label, relations follow in
    /// declaration order.
    pub fn class_index(&self, label: &str) -> Option<usize> {
        if label == self.null_label {
            return Some(0);
        }
        self.relations
            .iter()
            .position(|r| r.name == label)
            .map(|i| i + 1)
    }

    pub fn class_name(&self, class: usize) -> &str {
        if class == 0 {
            &self.null_label
        } else {
            &self.relations[class - 1].name
        }
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.num_classes())
            .map(|c| self.class_name(c).to_string())
            .collect()
    }

    pub fn relation(&self, name: &str) -> Option<&RelationType> {
        self.relations.iter().find(|r| r.name == name)
    }

    /// Resolves a raw annotation label between entities of the given types.
    pub fn resolve(&self, raw: &str, head_type: &str, tail_type: &str) -> Option<&RelationType> {
        self.relations
            .iter()
            .find(|r| r.source_label() == raw && r.head == head_type && r.tail == tail_type)
    }

    /// True when `label` may hold between entities of these types.
    pub fn is_valid_triple(&self, head_type: &str, label: &str, tail_type: &str) -> bool {
        if !self.is_valid_pair_type(head_type, tail_type) {
            return false;
        }
        label == self.null_label
            || self
                .relation(label)
                .is_some_and(|r| r.head == head_type && r.tail == tail_type)
    }

    /// The root ancestor of an interaction type (itself when it has no
    /// parent).
    pub fn top_interaction<'a>(&'a self, interaction: &'a str) -> &'a str {
        let mut cur = interaction;
        while let Some(p) = self.interaction_parents.get(cur) {
            cur = p;
        }
        cur
    }

    /// BIO classes for the tagger: `O`, then `B-t`, `I-t` for each entity
    /// type in order.
    pub fn num_tag_classes(&self) -> usize {
        1 + 2 * self.entity_types.len()
    }

    pub fn entity_type_index(&self, ty: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == ty)
    }
}
