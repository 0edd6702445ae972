//! Reader for PubTator-style annotated abstracts.
//!
//! ```text
//! 6794356|t|Tricuspid valve regurgitation and lithium carbonate toxicity.
//! 6794356|a|Lithium carbonate ...
//! 6794356	0	29	Tricuspid valve regurgitation	Disease	D014262
//! 6794356	CID	D016651	D014262
//! ```
//!
//! The document text is the title, a space, then the abstract; mention
//! offsets index characters of that text.

#![allow(clippy::tabs_in_doc_comments)]

use std::io::BufRead;

use log::warn;

use crate::document::{Document, Mention, Relation};
use crate::error::{Error, Result};

#[derive(Debug, Default)]
pub struct ParseReport {
    pub documents: Vec<Document>,
    /// Records dropped because a line was malformed or a mention span was
    /// invalid.
    pub skipped_records: usize,
    /// Relations dropped because an argument had no mention.
    pub dropped_relations: usize,
    pub errors: Vec<String>,
}

#[derive(Default)]
struct Pending {
    id: String,
    title: Option<String>,
    abstract_text: Option<String>,
    mentions: Vec<Mention>,
    relations: Vec<Relation>,
    error: Option<String>,
}

impl Pending {
    fn fail(&mut self, line: usize, msg: impl Into<String>) {
        if self.error.is_none() {
            self.error = Some(format!("line {line}: {}", msg.into()));
        }
    }
}

fn finish(p: Pending, report: &mut ParseReport) {
    if p.id.is_empty() {
        return;
    }
    if let Some(e) = p.error {
        report.skipped_records += 1;
        report.errors.push(format!("record {}: {e}", p.id));
        return;
    }
    let title = p.title.unwrap_or_default();
    let text = match p.abstract_text {
        Some(a) if !a.is_empty() => format!("{title} {a}"),
        _ => title,
    };
    let chars: Vec<char> = text.chars().collect();
    for m in &p.mentions {
        if m.start >= m.end || m.end > chars.len() {
            report.skipped_records += 1;
            report.errors.push(format!(
                "record {}: mention {}..{} outside text of length {}",
                p.id,
                m.start,
                m.end,
                chars.len()
            ));
            return;
        }
        let span: String = chars[m.start..m.end].iter().collect();
        if span != m.text {
            warn!(
                "record {}: mention text {:?} differs from span text {:?}",
                p.id, m.text, span
            );
        }
    }
    let mut doc = Document::new(p.id, text, p.mentions);
    let entities = doc.entities();
    for r in p.relations {
        if entities.contains_key(&r.head) && entities.contains_key(&r.tail) {
            doc.relations.push(r);
        } else {
            report.dropped_relations += 1;
            warn!(
                "record {}: relation {} {} {} has an argument without mentions",
                doc.doc_id, r.head, r.relation, r.tail
            );
        }
    }
    report.documents.push(doc);
}

/// Parses every record. Per-record problems are counted and the record is
/// skipped; only read failures are fatal.
pub fn parse_pubtator(input: impl BufRead, context: &str) -> Result<ParseReport> {
    let mut report = ParseReport::default();
    let mut cur = Pending::default();
    for (i, line) in input.lines().enumerate() {
        let n = i + 1;
        let line = line.map_err(|e| Error::io(context, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            finish(std::mem::take(&mut cur), &mut report);
            continue;
        }
        let (id, kind, rest) = if let Some((id, rest)) = line.split_once("|t|") {
            (id, Some('t'), rest)
        } else if let Some((id, rest)) = line.split_once("|a|") {
            (id, Some('a'), rest)
        } else {
            (line.split('\t').next().unwrap_or(""), None, "")
        };
        if id != cur.id {
            finish(std::mem::take(&mut cur), &mut report);
            cur.id = id.to_string();
        }
        match kind {
            Some('t') => cur.title = Some(rest.to_string()),
            Some(_) => cur.abstract_text = Some(rest.to_string()),
            None => parse_annotation(line, n, &mut cur),
        }
    }
    finish(cur, &mut report);
    Ok(report)
}

fn parse_annotation(line: &str, n: usize, cur: &mut Pending) {
    let fields: Vec<&str> = line.split('\t').collect();
    let numeric = |s: &str| s.parse::<usize>().ok();
    match fields.len() {
        len if len >= 6 && numeric(fields[1]).is_some() => {
            let (Some(start), Some(end)) = (numeric(fields[1]), numeric(fields[2])) else {
                cur.fail(n, "bad mention offsets");
                return;
            };
            cur.mentions.push(Mention {
                start,
                end,
                text: fields[3].to_string(),
                entity_type: fields[4].to_string(),
                entity_id: fields[5].to_string(),
            });
        }
        4 if numeric(fields[1]).is_none() => cur.relations.push(Relation {
            head: fields[2].to_string(),
            relation: fields[1].to_string(),
            tail: fields[3].to_string(),
        }),
        5 if numeric(fields[1]).is_some() => {
            // Mention without an entity id: kept for tagging only.
            let (Some(start), Some(end)) = (numeric(fields[1]), numeric(fields[2])) else {
                cur.fail(n, "bad mention offsets");
                return;
            };
            cur.mentions.push(Mention {
                start,
                end,
                text: fields[3].to_string(),
                entity_type: fields[4].to_string(),
                entity_id: crate::document::UNLINKED_ID.to_string(),
            });
        }
        _ => cur.fail(
            n,
            format!("unrecognized annotation with {} fields", fields.len()),
        ),
    }
}

pub fn parse_pubtator_file(path: &std::path::Path) -> Result<ParseReport> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_pubtator(std::io::BufReader::new(file), &path.display().to_string())
}
