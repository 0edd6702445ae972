//! Templated toy abstracts with known relations, used to exercise the full
//! pipeline on CPU.
//!
//! Three entity types carry type-specific name suffixes so the tagger can
//! learn them. Each document states one or two relations inside a sentence
//! and usually one more across sentences, each of a different type. A
//! cross-sentence relation has a cue sentence for each argument, separated
//! by a long filler sentence. Some within-sentence relations also mention
//! their entities again in neutral sentences, so only one mention pair
//! expresses the relation.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::generate_negatives;
use crate::document::{Document, LabeledPair, Mention, Relation, Split};
use crate::eval::PairKey;
use crate::schema::RelationSchema;

pub const SCHEMA_TOML: &str = r#"
entity_types = ["Chemical", "Gene", "Disease"]
pair_types = [
  { head = "Chemical", tail = "Disease" },
  { head = "Chemical", tail = "Gene" },
  { head = "Gene", tail = "Disease" },
]
relations = [
  { name = "treats", head = "Chemical", tail = "Disease" },
  { name = "causes", head = "Chemical", tail = "Disease" },
  { name = "inhibits", head = "Chemical", tail = "Gene" },
  { name = "marker", head = "Gene", tail = "Disease" },
]
"#;

pub fn schema() -> RelationSchema {
    RelationSchema::from_toml(SCHEMA_TOML).expect("built-in schema is valid")
}

const CHEM_PREFIX: &[&str] = &[
    "halo", "meta", "cyclo", "benzo", "fluo", "chlo", "pyra", "oxa", "tetra", "amino",
];
const CHEM_MID: &[&str] = &["zan", "dor", "mil", "ven", "lux", "tor", "bel", "rin"];
const CHEM_SUFFIX: &[&str] = &["azole", "amine", "oxin", "idine"];
const GENE_PREFIX: &[&str] = &["BR", "KR", "TP", "MY", "EG", "CD", "ST", "PX", "LR", "NF"];
const GENE_MID: &[&str] = &["A", "C", "K", "T", "F"];
const GENE_SUFFIX: &[&str] = &["1", "2", "3", "4", "7", "9"];
const DIS_PREFIX: &[&str] = &[
    "cardio", "neuro", "hepato", "nephro", "dermo", "gastro", "osteo", "myo",
];
const DIS_MID: &[&str] = &["path", "scler", "trop", "lys", "gen", "fibr"];
const DIS_SUFFIX: &[&str] = &["itis", "osis", "emia", "algia"];

const RELATIONS: [(&str, &str, &str); 4] = [
    ("treats", "Chemical", "Disease"),
    ("causes", "Chemical", "Disease"),
    ("inhibits", "Chemical", "Gene"),
    ("marker", "Gene", "Disease"),
];

/// Within-sentence phrasings per relation; `{h}` and `{t}` are the
/// arguments.
const WITHIN: [[&str; 2]; 4] = [
    [
        "{h} effectively treats {t} in adults.",
        "Patients with {t} improved after {h} therapy.",
    ],
    [
        "{h} induced severe {t} in several patients.",
        "{t} developed shortly after exposure to {h}.",
    ],
    [
        "{h} strongly inhibits {t} expression.",
        "{t} activity was blocked by {h}.",
    ],
    [
        "Elevated {h} levels mark {t} progression.",
        "{t} is characterized by high {h} levels.",
    ],
];

/// Cross-sentence cue sentences per relation: one for the head, one for
/// the tail.
const CROSS: [(&str, &str); 4] = [
    (
        "The cohort received {h} daily.",
        "Their {t} resolved within weeks.",
    ),
    (
        "The cohort was exposed to {h}.",
        "Many later developed {t}.",
    ),
    (
        "Cultured cells were incubated with {h}.",
        "Afterwards {t} signaling fell sharply.",
    ),
    (
        "Serum {h} was measured in every subject.",
        "Those values predicted {t} onset.",
    ),
];

const NEUTRAL: &[&str] = &[
    "{e} was also examined.",
    "{e} was well tolerated.",
    "Little is known about {e}.",
    "{e} was recorded at baseline.",
];

const HARD_NEGATIVE: &str = "No association between {h} and {t} was observed.";

const FILLER: &[&str] = &[
    "The study enrolled many participants from several regional hospitals over three consecutive years.",
    "All procedures followed the institutional guidelines and every participant provided written informed consent beforehand.",
    "Baseline characteristics were broadly similar across the groups and no major protocol deviations were reported.",
    "Follow up visits were scheduled every month and standard laboratory measurements were collected at each visit.",
];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    pub docs: usize,
    pub seed: u64,
    /// Probability a document contains a cross-sentence relation.
    pub cross_prob: f64,
    /// Probability a within-sentence relation gets extra neutral mentions.
    pub multi_instance_prob: f64,
    pub train_docs: usize,
    pub dev_docs: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            docs: 200,
            seed: 1,
            cross_prob: 0.85,
            multi_instance_prob: 0.5,
            train_docs: 150,
            dev_docs: 25,
        }
    }
}

/// A relation with several mention pairs of which one expresses it.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressingPair {
    pub key: PairKey,
    pub relation: String,
    /// Character spans of the expressing head and tail mentions.
    pub head_span: (usize, usize),
    pub tail_span: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub schema: RelationSchema,
    pub cross_sentence: BTreeSet<PairKey>,
    pub multi_instance: Vec<ExpressingPair>,
}

impl SyntheticCorpus {
    pub fn split(&self, split: Split) -> Vec<Document> {
        self.documents
            .iter()
            .filter(|d| d.split == Some(split))
            .cloned()
            .collect()
    }

    pub fn positive_count(&self) -> usize {
        self.documents.iter().map(|d| d.relations.len()).sum()
    }
}

struct DocBuilder {
    text: String,
    mentions: Vec<Mention>,
}

/// Entity slot in a template, already resolved to a name and type.
struct Filled<'a> {
    name: &'a str,
    id: &'a str,
    ty: &'a str,
}

impl DocBuilder {
    /// Appends a sentence, returning the character span of each filled slot
    /// in order of appearance of `{h}`, `{t}`, `{e}`.
    fn sentence(&mut self, template: &str, slots: &[(&str, Filled)]) -> Vec<(usize, usize)> {
        if !self.text.is_empty() {
            self.text.push(' ');
        }
        let mut spans = vec![(0, 0); slots.len()];
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            let close = open + rest[open..].find('}').expect("balanced template");
            self.text.push_str(&rest[..open]);
            let key = &rest[open + 1..close];
            let (i, (_, f)) = slots
                .iter()
                .enumerate()
                .find(|(_, (k, _))| *k == key)
                .expect("template slot is filled");
            let start = self.text.chars().count();
            self.text.push_str(f.name);
            let end = self.text.chars().count();
            spans[i] = (start, end);
            self.mentions.push(Mention {
                start,
                end,
                text: f.name.to_string(),
                entity_type: f.ty.to_string(),
                entity_id: f.id.to_string(),
            });
            rest = &rest[close + 1..];
        }
        self.text.push_str(rest);
        spans
    }
}

fn entity_name(ty: &str, rng: &mut impl Rng) -> String {
    let pick =
        |xs: &[&'static str], rng: &mut dyn rand::RngCore| *xs.choose(rng).expect("nonempty");
    match ty {
        "Chemical" => format!(
            "{}{}{}",
            pick(CHEM_PREFIX, rng),
            pick(CHEM_MID, rng),
            pick(CHEM_SUFFIX, rng)
        ),
        "Gene" => format!(
            "{}{}{}",
            pick(GENE_PREFIX, rng),
            pick(GENE_MID, rng),
            pick(GENE_SUFFIX, rng)
        ),
        _ => format!(
            "{}{}{}",
            pick(DIS_PREFIX, rng),
            pick(DIS_MID, rng),
            pick(DIS_SUFFIX, rng)
        ),
    }
}

struct Entity {
    name: String,
    id: String,
    ty: &'static str,
}

struct Plan {
    template: String,
    slots: Vec<(&'static str, usize)>,
    /// Marks the expressing sentence of a relation, by relation index.
    expresses: Option<usize>,
}

pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let schema = schema();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut documents = Vec::with_capacity(config.docs);
    let mut cross_sentence = BTreeSet::new();
    let mut multi_instance = Vec::new();

    for n in 0..config.docs {
        let doc_id = format!("syn{n:04}");
        let mut entities: Vec<Entity> = Vec::new();
        let mut used = BTreeSet::new();
        let mut new_entity =
            |ty: &'static str, rng: &mut ChaCha8Rng, entities: &mut Vec<Entity>| -> usize {
                loop {
                    let name = entity_name(ty, rng);
                    if used.insert(name.clone()) {
                        entities.push(Entity {
                            id: format!("{}:{name}", &ty[..1]),
                            name,
                            ty,
                        });
                        return entities.len() - 1;
                    }
                }
            };
        let mut relations: Vec<(usize, usize, usize, bool)> = Vec::new(); // (rel, head, tail, cross)
        let mut plans: Vec<Plan> = Vec::new();
        let mut multi: Vec<usize> = Vec::new(); // relation positions with extra mentions

        // Each relation type appears at most once per document.
        let mut types: Vec<usize> = (0..RELATIONS.len()).collect();
        types.shuffle(&mut rng);
        let mut types = types.into_iter();
        for _ in 0..rng.random_range(1..=2) {
            let r = types.next().expect("four relation types");
            let h = new_entity(RELATIONS[r].1, &mut rng, &mut entities);
            let t = new_entity(RELATIONS[r].2, &mut rng, &mut entities);
            relations.push((r, h, t, false));
            let template = *WITHIN[r].choose(&mut rng).expect("nonempty");
            plans.push(Plan {
                template: template.to_string(),
                slots: vec![("h", h), ("t", t)],
                expresses: Some(relations.len() - 1),
            });
            if rng.random::<f64>() < config.multi_instance_prob {
                multi.push(relations.len() - 1);
                for e in [h, t] {
                    let template = *NEUTRAL.choose(&mut rng).expect("nonempty");
                    plans.push(Plan {
                        template: template.to_string(),
                        slots: vec![("e", e)],
                        expresses: None,
                    });
                }
            }
        }
        for _ in 0..rng.random_range(1..=2) {
            let ty = *["Chemical", "Gene", "Disease"]
                .choose(&mut rng)
                .expect("nonempty");
            let e = new_entity(ty, &mut rng, &mut entities);
            let template = *NEUTRAL.choose(&mut rng).expect("nonempty");
            plans.push(Plan {
                template: template.to_string(),
                slots: vec![("e", e)],
                expresses: None,
            });
        }
        if rng.random::<f64>() < 0.3 {
            let (_, ht, tt) = RELATIONS[rng.random_range(0..RELATIONS.len())];
            let h = new_entity(ht, &mut rng, &mut entities);
            let t = new_entity(tt, &mut rng, &mut entities);
            plans.push(Plan {
                template: HARD_NEGATIVE.to_string(),
                slots: vec![("h", h), ("t", t)],
                expresses: None,
            });
        }
        plans.shuffle(&mut rng);

        if rng.random::<f64>() < config.cross_prob {
            let r = types.next().expect("four relation types");
            let h = new_entity(RELATIONS[r].1, &mut rng, &mut entities);
            let t = new_entity(RELATIONS[r].2, &mut rng, &mut entities);
            relations.push((r, h, t, true));
            let (head_s, tail_s) = CROSS[r];
            let i = rng.random_range(0..=plans.len());
            let filler = *FILLER.choose(&mut rng).expect("nonempty");
            let j = rng.random_range(i + 2..=plans.len() + 2);
            plans.insert(
                i,
                Plan {
                    template: head_s.to_string(),
                    slots: vec![("h", h)],
                    expresses: None,
                },
            );
            plans.insert(
                i + 1,
                Plan {
                    template: filler.to_string(),
                    slots: vec![],
                    expresses: None,
                },
            );
            plans.insert(
                j,
                Plan {
                    template: tail_s.to_string(),
                    slots: vec![("t", t)],
                    expresses: None,
                },
            );
        }
        if rng.random::<f64>() < 0.5 {
            let filler = *FILLER.choose(&mut rng).expect("nonempty");
            let at = rng.random_range(0..=plans.len());
            plans.insert(
                at,
                Plan {
                    template: filler.to_string(),
                    slots: vec![],
                    expresses: None,
                },
            );
        }

        let mut b = DocBuilder {
            text: String::new(),
            mentions: Vec::new(),
        };
        let mut expressing_spans = vec![None; relations.len()];
        for plan in &plans {
            let slots: Vec<(&str, Filled)> = plan
                .slots
                .iter()
                .map(|&(k, e)| {
                    let ent = &entities[e];
                    (
                        k,
                        Filled {
                            name: &ent.name,
                            id: &ent.id,
                            ty: ent.ty,
                        },
                    )
                })
                .collect();
            let spans = b.sentence(&plan.template, &slots);
            if let Some(ri) = plan.expresses {
                expressing_spans[ri] = Some((spans[0], spans[1]));
            }
        }
        let mut doc = Document::new(doc_id.clone(), b.text, b.mentions);
        doc.relations = relations
            .iter()
            .map(|&(r, h, t, _)| Relation {
                head: entities[h].id.clone(),
                relation: RELATIONS[r].0.to_string(),
                tail: entities[t].id.clone(),
            })
            .collect();
        doc.relations.sort();
        doc.pairs = generate_negatives(&doc, &schema);
        for (ri, &(r, h, t, cross)) in relations.iter().enumerate() {
            let key = PairKey {
                doc_id: doc_id.clone(),
                head: entities[h].id.clone(),
                tail: entities[t].id.clone(),
            };
            if cross {
                cross_sentence.insert(key.clone());
            }
            if multi.contains(&ri) {
                let (head_span, tail_span) =
                    expressing_spans[ri].expect("within relations have a sentence");
                multi_instance.push(ExpressingPair {
                    key,
                    relation: RELATIONS[r].0.to_string(),
                    head_span,
                    tail_span,
                });
            }
        }
        doc.split = Some(if n < config.train_docs {
            Split::Train
        } else if n < config.train_docs + config.dev_docs {
            Split::Dev
        } else {
            Split::Test
        });
        debug_assert!(doc.pairs.iter().all(|p: &LabeledPair| p.head != p.tail));
        documents.push(doc);
    }
    SyntheticCorpus {
        documents,
        schema,
        cross_sentence,
        multi_instance,
    }
}
