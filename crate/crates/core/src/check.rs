//! Finite-difference check of the full training objective: every
//! parameter, relation and tagging losses together, no dropout.

use std::cell::RefCell;

use docrel_tensor::{
    grad_check_with, GradCheckConfig, GradCheckReport, Graph, NodeId, Stencil, TensorError,
};

use crate::bpe::{train_bpe, Vocab};
use crate::config::Config;
use crate::document::{Document, Mention, Relation};
use crate::error::{Error, Result};
use crate::example::{build_examples, Example};
use crate::model::{Model, ModelDims};
use crate::schema::RelationSchema;
use crate::scorer::forward;
use crate::train::{ner_loss, relation_loss};

pub const TOY_SCHEMA_TOML: &str = r#"
entity_types = ["Chemical", "Gene", "Disease"]
pair_types = [
  { head = "Chemical", tail = "Disease" },
  { head = "Chemical", tail = "Gene" },
  { head = "Gene", tail = "Disease" },
]
relations = [
  { name = "treats", head = "Chemical", tail = "Disease" },
  { name = "inhibits", head = "Chemical", tail = "Gene" },
  { name = "marker", head = "Gene", tail = "Disease" },
]
"#;

fn toy_document(
    id: &str,
    text: &str,
    mentions: &[(&str, &str, &str)],
    relations: &[(&str, &str, &str)],
) -> Document {
    let mut cursor = 0;
    let mentions = mentions
        .iter()
        .map(|&(surface, ty, entity)| {
            let byte = cursor
                + text[cursor..]
                    .find(surface)
                    .expect("mention occurs in text");
            cursor = byte + surface.len();
            let start = text[..byte].chars().count();
            Mention {
                start,
                end: start + surface.chars().count(),
                text: surface.to_string(),
                entity_type: ty.to_string(),
                entity_id: entity.to_string(),
            }
        })
        .collect();
    let mut doc = Document::new(id, text, mentions);
    doc.relations = relations
        .iter()
        .map(|&(h, r, t)| Relation {
            head: h.into(),
            relation: r.into(),
            tail: t.into(),
        })
        .collect();
    doc
}

/// Two short documents over three relation types, with a vocabulary
/// trained on them.
pub fn toy_problem() -> (Vec<Document>, RelationSchema, Vocab) {
    let schema = RelationSchema::from_toml(TOY_SCHEMA_TOML).expect("toy schema is valid");
    let docs = vec![
        toy_document(
            "toy1",
            "Zorafen treats kelitis. Zorafen blocks KRT9. KRT9 marks kelitis.",
            &[
                ("Zorafen", "Chemical", "C1"),
                ("kelitis", "Disease", "D1"),
                ("Zorafen", "Chemical", "C1"),
                ("KRT9", "Gene", "G1"),
                ("KRT9", "Gene", "G1"),
                ("kelitis", "Disease", "D1"),
            ],
            &[
                ("C1", "treats", "D1"),
                ("C1", "inhibits", "G1"),
                ("G1", "marker", "D1"),
            ],
        ),
        toy_document(
            "toy2",
            "Mivadine was given. Patients with dravosis had high TMX2 levels.",
            &[
                ("Mivadine", "Chemical", "C2"),
                ("dravosis", "Disease", "D2"),
                ("TMX2", "Gene", "G2"),
            ],
            &[("G2", "marker", "D2")],
        ),
    ];
    let vocab = train_bpe(docs.iter().map(|d| d.text.as_str()), 40, 1).expect("toy vocabulary");
    (docs, schema, vocab)
}

/// Relation loss over every labeled pair plus `ner_weight` times the
/// tagging loss over every token, summed over documents and normalized by
/// the pair and token totals.
pub fn joint_loss(
    g: &mut Graph,
    model: &Model,
    examples: &[Example],
    ner_weight: f64,
) -> Result<NodeId> {
    let pairs: usize = examples.iter().map(|e| e.pairs.len()).sum();
    let tokens: usize = examples.iter().map(Example::len).sum();
    let mut total: Option<NodeId> = None;
    for ex in examples {
        let f = forward(
            g,
            model,
            &ex.token_ids,
            &vec![true; ex.len()],
            ex.cell_groups(),
            None,
        )?;
        let mut loss = None;
        if let Some(pooled) = f.pooled {
            let labels: Vec<usize> = ex.pairs.iter().map(|p| p.label).collect();
            loss = Some(relation_loss(g, pooled, &labels, pairs as f64)?);
        }
        if ner_weight > 0.0 {
            let tags: Vec<Option<usize>> = ex.tags.iter().map(|&t| Some(t)).collect();
            let ner = ner_loss(g, f.ner_logits, &tags, tokens as f64)?;
            let ner = g.scale(ner, ner_weight)?;
            loss = Some(match loss {
                Some(l) => g.add(l, ner)?,
                None => ner,
            });
        }
        if let Some(l) = loss {
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
    }
    total
        .ok_or_else(|| Error::Data("nothing to differentiate: no pairs and no tagging loss".into()))
}

/// Central differences against reverse mode for the joint objective.
pub fn check_model_gradients(
    model: &Model,
    examples: &[Example],
    ner_weight: f64,
    config: &GradCheckConfig,
) -> Result<GradCheckReport> {
    // The checker only speaks tensor errors; anything else is parked here.
    let other = RefCell::new(None);
    let report = grad_check_with(
        |g| {
            joint_loss(g, model, examples, ner_weight).map_err(|e| match e {
                Error::Tensor(t) => t,
                e => {
                    other.replace(Some(e));
                    TensorError::EmptyInput { op: "joint loss" }
                }
            })
        },
        &model.store,
        config,
    );
    match (other.into_inner(), report) {
        (Some(e), _) => Err(e),
        (None, r) => Ok(r?),
    }
}

/// The toy model for the gradient check: width 8, one block, two heads.
pub fn toy_config() -> Config {
    Config {
        d: 8,
        blocks: 1,
        heads: 2,
        max_positions: 64,
        conv_multiplier: 2,
        ..Config::default()
    }
}

/// Every coordinate, fourth-order differences with step 1e-3. Near a ReLU
/// kink the one-sided formula on the base side is used, and failing that
/// the step is halved up to 12 times.
pub fn full_check_config() -> GradCheckConfig {
    GradCheckConfig {
        eps: 1e-3,
        stencil: Stencil::FivePoint,
        max_coords_per_param: None,
        seed: 0,
        kink_retries: 12,
        one_sided: true,
    }
}

/// Builds the toy problem with a model seeded by `config.seed` and checks
/// it.
pub fn check_toy_model(config: &Config, check: &GradCheckConfig) -> Result<GradCheckReport> {
    let (docs, schema, vocab) = toy_problem();
    let examples = build_examples(&docs, &vocab, &schema, &config.model())?;
    let model = Model::init(config.model(), ModelDims::new(&vocab, &schema), config.seed)?;
    check_model_gradients(&model, &examples, config.ner_weight, check)
}
