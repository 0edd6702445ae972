//! Model-ready view of a document: sub-word ids, BIO tag ids, and for each
//! labeled entity pair the token cells to pool over.

use std::collections::BTreeMap;

use docrel_tensor::CellGroup;
use log::warn;

use crate::bpe::{project_mention_labels, BioTag, TokenizedText, Vocab};
use crate::config::{ModelConfig, Pooling};
use crate::dataset::generate_negatives;
use crate::document::{Document, Mention};
use crate::error::{Error, Result};
use crate::schema::RelationSchema;

#[derive(Debug, Clone, PartialEq)]
pub struct PairExample {
    pub head: String,
    pub tail: String,
    /// Class index; 0 is the null class.
    pub label: usize,
    pub cells: CellGroup,
    /// Token spans `[first, last)` of each mention.
    pub head_spans: Vec<(usize, usize)>,
    pub tail_spans: Vec<(usize, usize)>,
}

impl PairExample {
    /// Smallest token distance between a head token and a tail token.
    pub fn distance(&self) -> usize {
        min_span_distance(&self.head_spans, &self.tail_spans)
    }
}

/// Smallest `|i - j|` over tokens `i` of a span in `a` and `j` of a span
/// in `b`; 0 when spans overlap.
pub fn min_span_distance(a: &[(usize, usize)], b: &[(usize, usize)]) -> usize {
    let mut best = usize::MAX;
    for &(s1, e1) in a {
        for &(s2, e2) in b {
            let d = if e1 <= s2 {
                s2 - (e1 - 1)
            } else if e2 <= s1 {
                s1 - (e2 - 1)
            } else {
                0
            };
            best = best.min(d);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub doc_id: String,
    pub token_ids: Vec<usize>,
    /// Tag class per token: 0 = O, `1 + 2k` = B of entity type k,
    /// `2 + 2k` = I of entity type k.
    pub tags: Vec<usize>,
    pub pairs: Vec<PairExample>,
}

impl Example {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn cell_groups(&self) -> Vec<CellGroup> {
        self.pairs.iter().map(|p| p.cells.clone()).collect()
    }
}

pub fn tag_index(tag: &BioTag, schema: &RelationSchema) -> Option<usize> {
    match tag {
        BioTag::O => Some(0),
        BioTag::B(t) => schema.entity_type_index(t).map(|k| 1 + 2 * k),
        BioTag::I(t) => schema.entity_type_index(t).map(|k| 2 + 2 * k),
    }
}

pub fn tag_from_index(index: usize, schema: &RelationSchema) -> BioTag {
    if index == 0 {
        return BioTag::O;
    }
    let ty = schema.entity_types[(index - 1) / 2].clone();
    if index % 2 == 1 {
        BioTag::B(ty)
    } else {
        BioTag::I(ty)
    }
}

/// Projects tags, dropping later mentions that collide with earlier ones
/// when the full set cannot be tagged consistently.
fn robust_tags(doc_id: &str, mentions: &[Mention], tokens: &TokenizedText) -> Vec<BioTag> {
    match project_mention_labels(mentions, tokens) {
        Ok(t) => t,
        Err(e) => {
            warn!("document {doc_id}: {e}; tagging non-overlapping mentions only");
            let mut taken = vec![false; tokens.len()];
            let mut order: Vec<&Mention> = mentions.iter().collect();
            order.sort_by_key(|m| (m.start, std::cmp::Reverse(m.end)));
            let kept: Vec<Mention> = order
                .into_iter()
                .filter(|m| match tokens.token_span(m.start, m.end) {
                    Some((a, b, _)) if !taken[a..b].iter().any(|&x| x) => {
                        taken[a..b].iter_mut().for_each(|x| *x = true);
                        true
                    }
                    _ => false,
                })
                .cloned()
                .collect();
            project_mention_labels(&kept, tokens).expect("non-overlapping mentions project")
        }
    }
}

pub fn build_example(
    doc: &Document,
    vocab: &Vocab,
    schema: &RelationSchema,
    config: &ModelConfig,
) -> Result<Example> {
    let mut tokens = vocab.encode(&doc.text);
    if config.max_tokens > 0 && tokens.len() > config.max_tokens {
        let n = config.max_tokens;
        tokens.token_ids.truncate(n);
        tokens.char_offsets.truncate(n);
        tokens.word_index.truncate(n);
    }
    let limit = tokens.len();
    if limit == 0 {
        return Err(Error::Data(format!(
            "document {} has no tokens",
            doc.doc_id
        )));
    }
    let typed: Vec<Mention> = doc
        .mentions
        .iter()
        .filter(|m| schema.entity_type_index(&m.entity_type).is_some())
        .cloned()
        .collect();
    let tags = robust_tags(&doc.doc_id, &typed, &tokens)
        .iter()
        .map(|t| tag_index(t, schema).expect("typed mentions only"))
        .collect();

    let truncated_end = tokens.char_offsets.last().map_or(0, |&(_, e)| e);
    let mut spans: BTreeMap<&str, Vec<(usize, usize)>> = BTreeMap::new();
    for m in &doc.mentions {
        let Some((first, last, _)) = tokens.token_span(m.start, m.end) else {
            continue;
        };
        if m.end > truncated_end {
            warn!(
                "document {}: mention {:?} crosses the truncation boundary, dropped",
                doc.doc_id, m.text
            );
            continue;
        }
        debug_assert!(last <= limit);
        for id in m.entity_ids() {
            spans.entry(id).or_default().push((first, last));
        }
    }
    for v in spans.values_mut() {
        v.sort_unstable();
        v.dedup();
    }

    let labeled = if doc.pairs.is_empty() && !doc.relations.is_empty() {
        generate_negatives(doc, schema)
    } else {
        doc.pairs.clone()
    };
    let cells_of = |s: &[(usize, usize)]| -> Vec<usize> {
        match config.pooling {
            Pooling::AllCells => s.iter().flat_map(|&(a, b)| a..b).collect(),
            Pooling::FirstToken => s.iter().map(|&(a, _)| a).collect(),
        }
    };
    let mut pairs = Vec::with_capacity(labeled.len());
    for p in labeled {
        if p.head == p.tail {
            continue;
        }
        let label = schema.class_index(&p.label).ok_or_else(|| {
            Error::Data(format!(
                "document {}: label {} is not in the schema",
                doc.doc_id, p.label
            ))
        })?;
        let (Some(h), Some(t)) = (spans.get(p.head.as_str()), spans.get(p.tail.as_str())) else {
            warn!(
                "document {}: pair {} {} has an entity without usable mentions, skipped",
                doc.doc_id, p.head, p.tail
            );
            continue;
        };
        pairs.push(PairExample {
            head: p.head.clone(),
            tail: p.tail.clone(),
            label,
            cells: CellGroup::new(cells_of(h), cells_of(t)),
            head_spans: h.clone(),
            tail_spans: t.clone(),
        });
    }
    Ok(Example {
        doc_id: doc.doc_id.clone(),
        token_ids: tokens.token_ids,
        tags,
        pairs,
    })
}

pub fn build_examples(
    docs: &[Document],
    vocab: &Vocab,
    schema: &RelationSchema,
    config: &ModelConfig,
) -> Result<Vec<Example>> {
    docs.iter()
        .map(|d| build_example(d, vocab, schema, config))
        .collect()
}
