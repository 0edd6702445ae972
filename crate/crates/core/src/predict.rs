//! Inference over prepared examples with frozen parameters.

use std::collections::BTreeSet;

use docrel_tensor::Graph;
use rayon::prelude::*;

use crate::bpe::BioTag;
use crate::error::{Error, Result};
use crate::eval::{PairKey, PairPrediction};
use crate::example::{tag_from_index, Example};
use crate::model::Model;
use crate::schema::RelationSchema;
use crate::scorer::{forward, softmax_rows_of};

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentPrediction {
    pub pairs: Vec<PairPrediction>,
    /// Most probable tag class per token.
    pub tags: Vec<usize>,
}

/// One prediction per entity pair; a pair labeled with several relations
/// appears once.
pub fn predict_example(model: &Model, ex: &Example) -> Result<DocumentPrediction> {
    let mut g = Graph::new(&model.store);
    let mask = vec![true; ex.len()];
    let f = forward(&mut g, model, &ex.token_ids, &mask, ex.cell_groups(), None)?;
    let mut seen = BTreeSet::new();
    let pairs = match f.pooled {
        Some(pooled) => softmax_rows_of(g.value(pooled))?
            .into_iter()
            .zip(&ex.pairs)
            .map(|(s, p)| PairPrediction {
                key: PairKey {
                    doc_id: ex.doc_id.clone(),
                    head: p.head.clone(),
                    tail: p.tail.clone(),
                },
                scores: s.scores,
                probs: s.probs,
            })
            .filter(|p| seen.insert(p.key.clone()))
            .collect(),
        None => Vec::new(),
    };
    let logits = g.value(f.ner_logits);
    let tags = (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b })
        })
        .collect();
    Ok(DocumentPrediction { pairs, tags })
}

/// Predictions in example order. Documents are scored in parallel; the
/// result does not depend on the number of threads.
pub fn predict_examples(model: &Model, examples: &[Example]) -> Result<Vec<DocumentPrediction>> {
    examples
        .par_iter()
        .map(|ex| predict_example(model, ex))
        .collect()
}

/// How the pooled score of `pair` for `class` splits over its mention-pair
/// cells: a softmax over the cells' bi-affine scores, which is also the
/// gradient of the pooled score with respect to each cell. Returns
/// `(head token, tail token, weight)`.
pub fn cell_weights(
    model: &Model,
    ex: &Example,
    pair: usize,
    class: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    let p = ex
        .pairs
        .get(pair)
        .ok_or_else(|| Error::Data(format!("document {} has no pair {pair}", ex.doc_id)))?;
    let mut g = Graph::new(&model.store);
    let f = forward(
        &mut g,
        model,
        &ex.token_ids,
        &vec![true; ex.len()],
        Vec::new(),
        None,
    )?;
    let scores = g.value(f.scores);
    let (n, classes) = (scores.shape()[0], scores.shape()[1]);
    if class >= classes {
        return Err(Error::Data(format!(
            "class {class} out of range for {classes} classes"
        )));
    }
    let cells: Vec<(usize, usize, f64)> = p
        .cells
        .rows
        .iter()
        .flat_map(|&i| p.cells.cols.iter().map(move |&j| (i, j)))
        .map(|(i, j)| (i, j, scores.data()[(i * classes + class) * n + j]))
        .collect();
    let max = cells.iter().map(|c| c.2).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = cells.iter().map(|c| (c.2 - max).exp()).sum();
    Ok(cells
        .into_iter()
        .map(|(i, j, s)| (i, j, (s - max).exp() / total))
        .collect())
}

pub fn flatten_pairs(preds: &[DocumentPrediction]) -> Vec<PairPrediction> {
    preds.iter().flat_map(|p| p.pairs.iter().cloned()).collect()
}

pub fn tags_to_bio(tags: &[usize], schema: &RelationSchema) -> Vec<BioTag> {
    tags.iter().map(|&t| tag_from_index(t, schema)).collect()
}
