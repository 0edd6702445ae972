//! Document-level dataset construction from curated relation tables.
//!
//! A curated relation becomes a positive for its source abstract when both
//! entities were tagged in that abstract. Chemical-gene interactions
//! (`degree^interaction`, several joined by `|`) are first lifted to the
//! root of the interaction hierarchy, then each `affects/increases/decreases`
//! group is collapsed by frequency.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use log::warn;

use crate::dataset::hash_split;
use crate::document::{Document, LabeledPair, Split};
use crate::error::{Error, Result};
use crate::schema::{RelationSchema, RelationType};

pub const DEFAULT_MAX_TOKENS: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CuratedRelation {
    /// Source article; `None` for inferred relations.
    pub pmid: Option<String>,
    pub head: String,
    pub relation: String,
    pub tail: String,
}

/// Reads `pmid TAB head TAB relation TAB tail` rows. `#` lines are comments.
pub fn parse_curated(input: impl BufRead, context: &str) -> Result<Vec<CuratedRelation>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(Error::parse(
                context,
                i + 1,
                "expected 4 tab-separated fields",
            ));
        }
        let pmid = f[0].trim();
        out.push(CuratedRelation {
            pmid: (!pmid.is_empty()).then(|| pmid.to_string()),
            head: f[1].trim().to_string(),
            relation: f[2].trim().to_string(),
            tail: f[3].trim().to_string(),
        });
    }
    Ok(out)
}

fn normalize_degree(degree: &str) -> &str {
    match degree {
        "increases" | "increase" => "increase",
        "decreases" | "decrease" => "decrease",
        "affects" | "affect" => "affects",
        other => other,
    }
}

/// Lifts `degree^interaction` to `degree_root` where `root` is the top of
/// the interaction hierarchy. `None` when the label has no `^`.
pub fn lift_interaction(raw: &str, schema: &RelationSchema) -> Option<String> {
    let (degree, interaction) = raw.split_once('^')?;
    let top = schema.top_interaction(interaction.trim());
    Some(format!(
        "{}_{}",
        normalize_degree(degree.trim()),
        top.replace(' ', "_")
    ))
}

fn split_label(label: &str) -> Option<(&str, &str)> {
    label.split_once('_')
}

/// Per interaction group `{affects_X, increase_X, decrease_X}`: when
/// `affects_X` is strictly more frequent than each directed variant all
/// three map to `affects_X`; otherwise `affects_X` is dropped (`None`) and
/// the directed variants are kept. Groups without an `affects` variant map
/// to themselves.
pub fn collapse_chemgene_hierarchy(
    counts: &BTreeMap<String, usize>,
) -> BTreeMap<String, Option<String>> {
    let mut groups: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (label, &c) in counts {
        match split_label(label) {
            Some((deg, group)) => {
                groups.entry(group).or_default().insert(deg, c);
            }
            None => {
                groups.entry(label.as_str()).or_default().insert("", c);
            }
        }
    }
    let mut out = BTreeMap::new();
    for (group, degrees) in groups {
        let name = |deg: &str| {
            if deg.is_empty() {
                group.to_string()
            } else {
                format!("{deg}_{group}")
            }
        };
        let affects = degrees.get("affects").copied();
        let directed_max = degrees
            .iter()
            .filter(|(d, _)| **d != "affects")
            .map(|(_, &c)| c)
            .max();
        for deg in degrees.keys() {
            let target = match (affects, directed_max) {
                (None, _) => Some(name(deg)),
                (Some(a), m) if m.is_none_or(|m| a > m) => Some(name("affects")),
                _ if *deg == "affects" => None,
                _ => Some(name(deg)),
            };
            out.insert(name(deg), target);
        }
    }
    out
}

#[derive(Debug, Default, Clone)]
pub struct CtdReport {
    pub inferred_dropped: usize,
    pub missing_abstract: usize,
    pub unrecovered: usize,
    pub untyped: usize,
    pub affects_dropped: usize,
    pub abstracts_without_relations: usize,
    pub abstracts_too_long: usize,
    pub lifted_counts: BTreeMap<String, usize>,
    pub collapse: BTreeMap<String, Option<String>>,
    pub max_tokens: usize,
}

pub struct CtdDataset {
    pub documents: Vec<Document>,
    pub schema: RelationSchema,
    pub report: CtdReport,
}

/// Builds the dataset. `abstracts` carry tagged, entity-linked mentions;
/// their relation annotations are ignored. Output documents are sorted by
/// id and their pairs by (head, tail, label).
pub fn build_ctd_dataset(
    curated: &[CuratedRelation],
    abstracts: &[Document],
    schema: &RelationSchema,
    max_tokens: usize,
) -> Result<CtdDataset> {
    let hierarchical: Vec<_> = schema
        .pair_types
        .iter()
        .filter(|p| p.hierarchical)
        .collect();
    if hierarchical.len() > 1 {
        return Err(Error::Config(
            "at most one hierarchical pair type is supported".into(),
        ));
    }
    let mut report = CtdReport {
        max_tokens,
        ..Default::default()
    };

    for r in curated.iter().filter(|r| r.pmid.is_some()) {
        for raw in r.relation.split('|') {
            if let Some(l) = lift_interaction(raw, schema) {
                *report.lifted_counts.entry(l).or_insert(0) += 1;
            }
        }
    }
    report.collapse = collapse_chemgene_hierarchy(&report.lifted_counts);

    let by_id: BTreeMap<&str, &Document> =
        abstracts.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut entity_types: BTreeMap<&str, BTreeMap<String, String>> = BTreeMap::new();
    // Positives per abstract, and pairs whose only evidence was dropped.
    let mut positives: BTreeMap<&str, BTreeSet<LabeledPair>> = BTreeMap::new();
    let mut excluded: BTreeMap<&str, BTreeSet<(String, String)>> = BTreeMap::new();

    for r in curated {
        let Some(pmid) = r.pmid.as_deref() else {
            report.inferred_dropped += 1;
            continue;
        };
        let Some(doc) = by_id.get(pmid) else {
            report.missing_abstract += 1;
            continue;
        };
        let ents = entity_types.entry(pmid).or_insert_with(|| doc.entities());
        let (Some(ht), Some(tt)) = (ents.get(&r.head), ents.get(&r.tail)) else {
            report.unrecovered += 1;
            continue;
        };
        let Some(pair_type) = schema.pair_type(ht, tt) else {
            report.untyped += 1;
            continue;
        };
        for raw in r.relation.split('|') {
            let label = if pair_type.hierarchical {
                match lift_interaction(raw, schema)
                    .map(|l| report.collapse.get(&l).cloned().flatten())
                {
                    Some(Some(l)) => l,
                    Some(None) => {
                        report.affects_dropped += 1;
                        excluded
                            .entry(pmid)
                            .or_default()
                            .insert((r.head.clone(), r.tail.clone()));
                        continue;
                    }
                    None => {
                        warn!("{pmid}: interaction {raw:?} has no degree^type form");
                        report.untyped += 1;
                        continue;
                    }
                }
            } else {
                match schema.resolve(raw.trim(), ht, tt) {
                    Some(rel) => rel.name.clone(),
                    None => {
                        report.untyped += 1;
                        continue;
                    }
                }
            };
            positives.entry(pmid).or_default().insert(LabeledPair {
                head: r.head.clone(),
                tail: r.tail.clone(),
                label,
            });
        }
    }

    let mut out_schema = schema.clone();
    if let Some(pt) = hierarchical.first() {
        let kept: BTreeSet<&String> = report.collapse.values().flatten().collect();
        for name in kept {
            out_schema.relations.push(RelationType {
                name: name.clone(),
                head: pt.head.clone(),
                tail: pt.tail.clone(),
                source: None,
            });
        }
    }
    out_schema.validate()?;

    let mut documents = Vec::new();
    let mut doc_ids: BTreeSet<&str> = positives.keys().copied().collect();
    for pmid in excluded.keys() {
        if !positives.contains_key(pmid) {
            report.abstracts_without_relations += 1;
        }
    }
    for d in abstracts {
        if !positives.contains_key(d.doc_id.as_str()) && !excluded.contains_key(d.doc_id.as_str()) {
            report.abstracts_without_relations += 1;
        }
    }
    doc_ids.retain(|id| {
        let n = by_id[id].tokens.len();
        if n > max_tokens {
            report.abstracts_too_long += 1;
            false
        } else {
            true
        }
    });

    for pmid in doc_ids {
        let src = by_id[pmid];
        let pos = &positives[pmid];
        let skip = excluded.get(pmid);
        let annotated: BTreeSet<(&str, &str)> = pos
            .iter()
            .map(|p| (p.head.as_str(), p.tail.as_str()))
            .collect();
        let mut pairs: BTreeSet<LabeledPair> = pos.clone();
        let ents = src.entities();
        for (h, ht) in &ents {
            for (t, tt) in &ents {
                if h == t || !schema.is_valid_pair_type(ht, tt) {
                    continue;
                }
                if annotated.contains(&(h.as_str(), t.as_str()))
                    || skip.is_some_and(|s| s.contains(&(h.clone(), t.clone())))
                {
                    continue;
                }
                pairs.insert(LabeledPair {
                    head: h.clone(),
                    tail: t.clone(),
                    label: schema.null_label.clone(),
                });
            }
        }
        let mut doc = src.clone();
        doc.relations.clear();
        doc.pairs = pairs.into_iter().collect();
        doc.split = Some(hash_split(&doc.doc_id));
        documents.push(doc);
    }
    Ok(CtdDataset {
        documents,
        schema: out_schema,
        report,
    })
}

/// Dataset statistics laid out as overall and per-pair-type totals, then
/// per-relation positives by split, followed by build counters.
pub fn render_stats(ds: &CtdDataset) -> String {
    let schema = &ds.schema;
    let null = schema.null_label.as_str();
    let mut s = String::new();
    let type_of = |doc: &Document| doc.entities();

    #[derive(Default)]
    struct Row {
        docs: usize,
        pos: usize,
        neg: usize,
    }
    let mut total = Row::default();
    let mut by_type: BTreeMap<(String, String), Row> = BTreeMap::new();
    let mut by_relation: BTreeMap<&str, BTreeMap<Split, usize>> = BTreeMap::new();
    let mut docs_by_split: BTreeMap<Split, usize> = BTreeMap::new();
    for d in &ds.documents {
        let ents = type_of(d);
        total.docs += 1;
        *docs_by_split
            .entry(d.split.unwrap_or(Split::Train))
            .or_insert(0) += 1;
        let mut seen_types = BTreeSet::new();
        for p in &d.pairs {
            let key = (ents[&p.head].clone(), ents[&p.tail].clone());
            let row = by_type.entry(key.clone()).or_default();
            if p.label == null {
                total.neg += 1;
                row.neg += 1;
            } else {
                total.pos += 1;
                row.pos += 1;
                seen_types.insert(key);
                *by_relation
                    .entry(&p.label)
                    .or_default()
                    .entry(d.split.unwrap_or(Split::Train))
                    .or_insert(0) += 1;
            }
        }
        for key in seen_types {
            by_type.get_mut(&key).expect("row exists").docs += 1;
        }
    }

    let _ = writeln!(s, "types\tdocs\tpos\tneg");
    let _ = writeln!(s, "Total\t{}\t{}\t{}", total.docs, total.pos, total.neg);
    for ((h, t), r) in &by_type {
        let _ = writeln!(s, "{h}/{t}\t{}\t{}\t{}", r.docs, r.pos, r.neg);
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "relation\ttrain\tdev\ttest");
    let split_count = |m: &BTreeMap<Split, usize>, sp| m.get(&sp).copied().unwrap_or(0);
    let _ = writeln!(
        s,
        "Total docs\t{}\t{}\t{}",
        split_count(&docs_by_split, Split::Train),
        split_count(&docs_by_split, Split::Dev),
        split_count(&docs_by_split, Split::Test)
    );
    for rel in &schema.relations {
        let m = by_relation
            .get(rel.name.as_str())
            .cloned()
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{}/{}:{}\t{}\t{}\t{}",
            rel.head,
            rel.tail,
            rel.name,
            split_count(&m, Split::Train),
            split_count(&m, Split::Dev),
            split_count(&m, Split::Test)
        );
    }
    let r = &ds.report;
    let _ = writeln!(s);
    let _ = writeln!(s, "inferred_relations_dropped\t{}", r.inferred_dropped);
    let _ = writeln!(s, "relations_missing_abstract\t{}", r.missing_abstract);
    let _ = writeln!(s, "relations_not_recovered\t{}", r.unrecovered);
    let _ = writeln!(s, "relations_untyped\t{}", r.untyped);
    let _ = writeln!(s, "affects_relations_dropped\t{}", r.affects_dropped);
    let _ = writeln!(
        s,
        "abstracts_without_relations\t{}",
        r.abstracts_without_relations
    );
    let _ = writeln!(
        s,
        "abstracts_over_{}_tokens\t{}",
        r.max_tokens, r.abstracts_too_long
    );
    let _ = writeln!(s, "lifted_interaction_types\t{}", r.lifted_counts.len());
    for (from, to) in &r.collapse {
        let to = to.as_deref().unwrap_or("(dropped)");
        let _ = writeln!(s, "  {from}\t{}\t-> {to}", r.lifted_counts[from]);
    }
    let _ = writeln!(s, "note\ttoken counts use word-level pre-tokenization (alphanumeric runs and single punctuation marks)");
    let _ = writeln!(
        s,
        "note\tsplits are assigned by sha256(doc_id) mod 10: 0-7 train, 8 dev, 9 test"
    );
    s
}
