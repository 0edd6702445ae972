//! Head/tail projections, the bi-affine `[N, L, N]` score tensor,
//! LogSumExp pooling into entity-pair scores, and the token tagger.

use docrel_tensor::{ops, CellGroup, Graph, NodeId, Tensor};

use crate::encoder::{encode_document, Dropout};
use crate::error::{Error, Result};
use crate::model::{MlpIds, Model};

fn mlp(g: &mut Graph, ids: &MlpIds, x: NodeId) -> Result<NodeId> {
    let w0 = g.param(ids.w0);
    let b0 = g.param(ids.b0);
    let w1 = g.param(ids.w1);
    let b1 = g.param(ids.b1);
    let h = g.matmul(x, w0)?;
    let h = g.add_bias(h, b0)?;
    let h = g.relu(h)?;
    let o = g.matmul(h, w1)?;
    Ok(g.add_bias(o, b1)?)
}

/// `e_head = W1 ReLU(W0 b)` and likewise for the tail, with separate
/// parameters.
pub fn project_head_tail(g: &mut Graph, model: &Model, states: NodeId) -> Result<(NodeId, NodeId)> {
    let head = mlp(g, &model.ids.head, states)?;
    let tail = mlp(g, &model.ids.tail, states)?;
    Ok((head, tail))
}

/// `A[i, l, j] = e_head[i] · L_l · e_tail[j]` for all `i, l, j` in one
/// contraction. `relation` is `[d, L*d]`.
pub fn biaffine_scores(
    g: &mut Graph,
    e_head: NodeId,
    e_tail: NodeId,
    relation: NodeId,
) -> Result<NodeId> {
    let n = g.shape(e_head)[0];
    let d = g.shape(e_head)[1];
    let classes = g.shape(relation)[1] / d;
    let hl = g.matmul(e_head, relation)?; // [N, L*d]
    let hl = g.reshape(hl, &[n * classes, d])?;
    let tt = g.transpose(e_tail)?; // [d, N]
    let a = g.matmul(hl, tt)?; // [N*L, N]
    Ok(g.reshape(a, &[n, classes, n])?)
}

/// One LogSumExp per relation over each group's cells: `[E, L]`.
pub fn pool_entity_pair(g: &mut Graph, scores: NodeId, groups: Vec<CellGroup>) -> Result<NodeId> {
    if let Some(i) = groups
        .iter()
        .position(|c| c.rows.is_empty() || c.cols.is_empty())
    {
        return Err(Error::Data(format!(
            "entity pair {i} has an entity without mentions"
        )));
    }
    Ok(g.pool_lse(scores, groups)?)
}

/// `c_i = W3 b_i`: `[N, tags]`.
pub fn ner_logits(g: &mut Graph, model: &Model, states: NodeId) -> Result<NodeId> {
    let w = g.param(model.ids.ner);
    Ok(g.matmul(states, w)?)
}

pub struct Forward {
    pub states: NodeId,
    pub e_head: NodeId,
    pub e_tail: NodeId,
    pub scores: NodeId,
    /// `[E, L]`, absent when no pairs were requested.
    pub pooled: Option<NodeId>,
    pub ner_logits: NodeId,
    pub attention: Vec<Vec<NodeId>>,
}

/// Full forward pass over one document.
pub fn forward(
    g: &mut Graph,
    model: &Model,
    token_ids: &[usize],
    mask: &[bool],
    groups: Vec<CellGroup>,
    mut dropout: Option<&mut Dropout>,
) -> Result<Forward> {
    let enc = encode_document(g, model, token_ids, mask, dropout.as_deref_mut())?;
    let (mut e_head, mut e_tail) = project_head_tail(g, model, enc.states)?;
    if let Some(d) = dropout {
        let keep = d.final_keep;
        e_head = d.apply(g, e_head, keep)?;
        e_tail = d.apply(g, e_tail, keep)?;
    }
    let relation = g.param(model.ids.relation);
    let scores = biaffine_scores(g, e_head, e_tail, relation)?;
    let pooled = if groups.is_empty() {
        None
    } else {
        Some(pool_entity_pair(g, scores, groups)?)
    };
    let ner_logits = ner_logits(g, model, enc.states)?;
    Ok(Forward {
        states: enc.states,
        e_head,
        e_tail,
        scores,
        pooled,
        ner_logits,
        attention: enc.attention,
    })
}

/// Per-pair pooled scores and class probabilities for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

pub fn softmax_rows_of(t: &Tensor) -> Result<Vec<PairScores>> {
    let probs = ops::softmax(t, 1)?;
    Ok((0..t.rows())
        .map(|r| PairScores {
            scores: t.row(r).to_vec(),
            probs: probs.row(r).to_vec(),
        })
        .collect())
}
