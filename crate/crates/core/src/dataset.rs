//! Turning annotated documents into labeled entity pairs: label
//! resolution, null negatives, hypernym filtering, and split assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::document::{Document, LabeledPair, Relation, Split};
use crate::mesh::MeshTree;
use crate::schema::RelationSchema;

/// Rewrites raw relation labels to schema relation names. Relations the
/// schema cannot type are dropped; returns how many.
pub fn resolve_relations(doc: &mut Document, schema: &RelationSchema) -> usize {
    let entities = doc.entities();
    let before = doc.relations.len();
    let mut kept = Vec::with_capacity(before);
    for r in doc.relations.drain(..) {
        let (Some(ht), Some(tt)) = (entities.get(&r.head), entities.get(&r.tail)) else {
            continue;
        };
        match schema.resolve(&r.relation, ht, tt) {
            Some(rel) => kept.push(Relation {
                head: r.head,
                relation: rel.name.clone(),
                tail: r.tail,
            }),
            None => warn!(
                "document {}: relation {} between {ht} and {tt} is not in the schema",
                doc.doc_id, r.relation
            ),
        }
    }
    kept.sort();
    kept.dedup();
    doc.relations = kept;
    before - doc.relations.len()
}

/// Labeled pairs for a document: one positive per annotated relation
/// (already resolved to schema names) and a null-labeled pair for every
/// other type-valid ordered pair of distinct entities. Sorted.
pub fn generate_negatives(doc: &Document, schema: &RelationSchema) -> Vec<LabeledPair> {
    let entities = doc.entities();
    let mut pairs = BTreeSet::new();
    let mut annotated = BTreeSet::new();
    for r in &doc.relations {
        let valid = match (entities.get(&r.head), entities.get(&r.tail)) {
            (Some(h), Some(t)) => schema.is_valid_triple(h, &r.relation, t),
            _ => false,
        };
        if !valid {
            warn!(
                "document {}: skipping schema-invalid relation {} {} {}",
                doc.doc_id, r.head, r.relation, r.tail
            );
            continue;
        }
        annotated.insert((r.head.as_str(), r.tail.as_str()));
        pairs.insert(LabeledPair {
            head: r.head.clone(),
            tail: r.tail.clone(),
            label: r.relation.clone(),
        });
    }
    for (h, ht) in &entities {
        for (t, tt) in &entities {
            if h == t || !schema.is_valid_pair_type(ht, tt) {
                continue;
            }
            if !annotated.contains(&(h.as_str(), t.as_str())) {
                pairs.insert(LabeledPair {
                    head: h.clone(),
                    tail: t.clone(),
                    label: schema.null_label.clone(),
                });
            }
        }
    }
    pairs.into_iter().collect()
}

/// Drops a null-labeled pair `(h, t)` when the document also pairs `h` with
/// a strict descendant of `t`. Annotated positives are never dropped.
/// Returns the filtered document and the removed pairs.
pub fn filter_hypernyms(
    doc: &Document,
    mesh: &MeshTree,
    null_label: &str,
) -> (Document, Vec<LabeledPair>) {
    let mut tails_by_head: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for p in &doc.pairs {
        tails_by_head.entry(&p.head).or_default().insert(&p.tail);
    }
    let mut ancestors: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    for tails in tails_by_head.values() {
        for &t in tails {
            ancestors.entry(t).or_insert_with(|| {
                if !mesh.contains(t) {
                    warn!("document {}: {t} is not in the hierarchy", doc.doc_id);
                }
                mesh.ancestors(t)
            });
        }
    }
    let mut kept = Vec::with_capacity(doc.pairs.len());
    let mut removed = Vec::new();
    for p in &doc.pairs {
        let has_descendant = p.label == null_label
            && tails_by_head[p.head.as_str()]
                .iter()
                .any(|&other| other != p.tail && ancestors[other].contains(&p.tail));
        if has_descendant {
            removed.push(p.clone());
        } else {
            kept.push(p.clone());
        }
    }
    let mut out = doc.clone();
    out.pairs = kept;
    (out, removed)
}

/// Deterministic 80/10/10 assignment from the SHA-256 of the document id.
pub fn hash_split(doc_id: &str) -> Split {
    let digest = Sha256::digest(doc_id.as_bytes());
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    match u64::from_be_bytes(head) % 10 {
        0..=7 => Split::Train,
        8 => Split::Dev,
        _ => Split::Test,
    }
}

/// Pools documents and reassigns `n_train` of them (chosen by a seeded
/// shuffle) to train and the rest to dev. Output is sorted by document id
/// within each split.
pub fn resplit_train_dev(mut docs: Vec<Document>, n_train: usize, seed: u64) -> Vec<Document> {
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    docs.shuffle(&mut rng);
    for (i, d) in docs.iter_mut().enumerate() {
        d.split = Some(if i < n_train {
            Split::Train
        } else {
            Split::Dev
        });
    }
    docs.sort_by(|a, b| (a.split, &a.doc_id).cmp(&(b.split, &b.doc_id)));
    docs
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SplitCounts {
    pub docs: usize,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Debug, Default, Clone)]
pub struct CdrReport {
    pub per_split: BTreeMap<Split, SplitCounts>,
    pub dropped_relations: usize,
    pub hypernym_removals: Vec<(String, LabeledPair)>,
}

impl CdrReport {
    /// Docs / positives / negatives per split.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "split\tdocs\tpos\tneg");
        for (split, c) in &self.per_split {
            let _ = writeln!(s, "{split}\t{}\t{}\t{}", c.docs, c.positives, c.negatives);
        }
        let _ = writeln!(s, "hypernym_filtered\t{}", self.hypernym_removals.len());
        for (doc, p) in &self.hypernym_removals {
            let _ = writeln!(s, "  {doc}\t{}\t{}", p.head, p.tail);
        }
        let _ = writeln!(s, "dropped_relations\t{}", self.dropped_relations);
        s
    }
}

/// Relation labeling for gold-annotated corpora: resolve labels, add null
/// negatives, then remove hypernym pairs.
pub fn preprocess_cdr(
    docs: Vec<Document>,
    schema: &RelationSchema,
    mesh: &MeshTree,
) -> (Vec<Document>, CdrReport) {
    let mut report = CdrReport::default();
    let mut out = Vec::with_capacity(docs.len());
    for mut doc in docs {
        report.dropped_relations += resolve_relations(&mut doc, schema);
        doc.pairs = generate_negatives(&doc, schema);
        let (filtered, removed) = filter_hypernyms(&doc, mesh, &schema.null_label);
        for p in removed {
            report.hypernym_removals.push((filtered.doc_id.clone(), p));
        }
        let c = report
            .per_split
            .entry(filtered.split.unwrap_or(Split::Train))
            .or_default();
        c.docs += 1;
        let pos = filtered.positive_pairs(&schema.null_label).count();
        c.positives += pos;
        c.negatives += filtered.pairs.len() - pos;
        out.push(filtered);
    }
    (out, report)
}
