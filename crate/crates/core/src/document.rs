//! Corpus records: documents with entity-linked mentions and labeled pairs.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bpe::pre_tokenize;
use crate::error::{Error, Result};

/// Entity id used by taggers for mentions they could not link.
pub const UNLINKED_ID: &str = "-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A tagged span of the document text. `start..end` are character (not
/// byte) offsets. `entity_id` may list several ids joined by `|` when the
/// tagger linked one span to more than one entity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub start: usize,
    pub end: usize,
    pub text: String,
    pub entity_type: String,
    pub entity_id: String,
}

impl Mention {
    /// The linked entity ids; empty for unlinked mentions.
    pub fn entity_ids(&self) -> impl Iterator<Item = &str> {
        self.entity_id
            .split('|')
            .map(str::trim)
            .filter(|id| !id.is_empty() && *id != UNLINKED_ID)
    }

    pub fn refers_to(&self, entity: &str) -> bool {
        self.entity_ids().any(|id| id == entity)
    }
}

/// A document-level relation annotation between two entity ids.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Relation {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// A candidate entity pair with its label; negatives carry the schema's
/// null label.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabeledPair {
    pub head: String,
    pub tail: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
    pub text: String,
    /// Word-level tokens of `text` (alphanumeric runs and single
    /// punctuation characters).
    #[serde(default)]
    pub tokens: Vec<String>,
    pub mentions: Vec<Mention>,
    #[serde(default)]
    pub relations: Vec<Relation>,
    #[serde(default)]
    pub pairs: Vec<LabeledPair>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>, mentions: Vec<Mention>) -> Self {
        let text = text.into();
        let tokens = word_tokens(&text);
        Document {
            doc_id: doc_id.into(),
            split: None,
            text,
            tokens,
            mentions,
            relations: Vec::new(),
            pairs: Vec::new(),
        }
    }

    /// Entity id to entity type, taken from the first mention of each
    /// entity. Sorted by id.
    pub fn entities(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for m in &self.mentions {
            for id in m.entity_ids() {
                out.entry(id.to_string())
                    .or_insert_with(|| m.entity_type.clone());
            }
        }
        out
    }

    pub fn mentions_of<'a>(&'a self, entity: &'a str) -> impl Iterator<Item = &'a Mention> + 'a {
        self.mentions.iter().filter(move |m| m.refers_to(entity))
    }

    pub fn positive_pairs<'a>(
        &'a self,
        null_label: &'a str,
    ) -> impl Iterator<Item = &'a LabeledPair> {
        self.pairs.iter().filter(move |p| p.label != null_label)
    }

    /// Checks that mention spans lie within the text and every relation
    /// argument has at least one mention.
    pub fn validate(&self) -> Result<()> {
        let len = self.text.chars().count();
        for m in &self.mentions {
            if m.start >= m.end || m.end > len {
                return Err(Error::Data(format!(
                    "document {}: mention {}..{} outside text of length {len}",
                    self.doc_id, m.start, m.end
                )));
            }
        }
        let entities: BTreeSet<String> = self.entities().into_keys().collect();
        for r in &self.relations {
            for id in [&r.head, &r.tail] {
                if !entities.contains(id) {
                    return Err(Error::Data(format!(
                        "document {}: relation argument {id} has no mention",
                        self.doc_id
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn word_tokens(text: &str) -> Vec<String> {
    pre_tokenize(text).into_iter().map(|w| w.text).collect()
}

/// Writes one JSON object per line, in the given order.
pub fn write_jsonl<T: Serialize>(mut out: impl Write, items: &[T]) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<jsonl output>", e))?;
    }
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(
    input: impl BufRead,
    context: &str,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(&line).map_err(|e| Error::parse(context, i + 1, e.to_string()))?;
        out.push(item);
    }
    Ok(out)
}

pub fn save_documents(path: &Path, docs: &[Document]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(&mut w, docs)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_documents(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(std::io::BufReader::new(file), &path.display().to_string())
}
