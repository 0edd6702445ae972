//! Token encoder: embeddings plus `B` blocks of multi-head self-attention
//! followed by a width 1/5/1 convolution stack, each block added back to
//! its input.
//!
//! Padding rows (`mask[i] == false`) are excluded from attention and their
//! states are zeroed after every sub-layer, so appending padding leaves the
//! real rows unchanged.

use docrel_tensor::{Graph, NodeId, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bpe::UNK_ID;
use crate::config::AttentionScale;
use crate::error::Result;
use crate::model::{AttentionIds, BlockIds, ConvIds, Model};

/// Keep probabilities and the random stream for one forward pass.
#[derive(Debug, Clone)]
pub struct Dropout {
    rng: ChaCha8Rng,
    pub word_keep: f64,
    pub interior_keep: f64,
    pub final_keep: f64,
}

impl Dropout {
    pub fn new(seed: u64, word_keep: f64, interior_keep: f64, final_keep: f64) -> Self {
        Dropout {
            rng: ChaCha8Rng::seed_from_u64(seed),
            word_keep,
            interior_keep,
            final_keep,
        }
    }

    /// Inverted dropout: surviving entries are scaled by `1 / keep`.
    pub fn apply(&mut self, g: &mut Graph, x: NodeId, keep: f64) -> Result<NodeId> {
        if keep >= 1.0 {
            return Ok(x);
        }
        let shape = g.shape(x).to_vec();
        let scale = 1.0 / keep;
        let rng = &mut self.rng;
        let factor = Tensor::from_fn(&shape, |_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        });
        Ok(g.mul_const(x, factor)?)
    }

    /// Replaces real tokens with the unknown token at rate `1 - word_keep`.
    pub fn drop_words(&mut self, ids: &[usize], mask: &[bool]) -> Vec<usize> {
        if self.word_keep >= 1.0 {
            return ids.to_vec();
        }
        ids.iter()
            .zip(mask)
            .map(|(&id, &real)| {
                if real && self.rng.random::<f64>() >= self.word_keep {
                    UNK_ID
                } else {
                    id
                }
            })
            .collect()
    }
}

fn mask_factors(mask: &[bool]) -> Vec<f64> {
    mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()
}

fn interior(g: &mut Graph, dropout: &mut Option<&mut Dropout>, x: NodeId) -> Result<NodeId> {
    match dropout {
        Some(d) => {
            let keep = d.interior_keep;
            d.apply(g, x, keep)
        }
        None => Ok(x),
    }
}

/// `x_i = s_i + p_i`, with positions at or beyond the table size sharing
/// the fallback vector.
pub fn embed(g: &mut Graph, model: &Model, token_ids: &[usize]) -> Result<NodeId> {
    let table = g.param(model.ids.token);
    let s = g.gather_rows(table, token_ids)?;
    let positions = g.param(model.ids.position);
    let fallback = g.param(model.ids.position_fallback);
    let extended = g.concat_rows(&[positions, fallback])?;
    let m = model.config.max_positions;
    let idx: Vec<usize> = (0..token_ids.len()).map(|i| i.min(m)).collect();
    let p = g.gather_rows(extended, &idx)?;
    Ok(g.add(s, p)?)
}

fn affine(
    g: &mut Graph,
    x: NodeId,
    w: docrel_tensor::ParamId,
    b: docrel_tensor::ParamId,
) -> Result<NodeId> {
    let w = g.param(w);
    let b = g.param(b);
    let xw = g.matmul(x, w)?;
    Ok(g.add_bias(xw, b)?)
}

pub struct AttentionOutput {
    /// `LN(x + o)`, padding rows zeroed.
    pub states: NodeId,
    /// One `[N, N]` weight matrix per head.
    pub weights: Vec<NodeId>,
}

pub fn multi_head_attention(
    g: &mut Graph,
    model: &Model,
    ids: &AttentionIds,
    x: NodeId,
    mask: &[bool],
    mut dropout: Option<&mut Dropout>,
) -> Result<AttentionOutput> {
    let cfg = &model.config;
    let q = affine(g, x, ids.q_w, ids.q_b)?;
    let q = g.relu(q)?;
    let k = affine(g, x, ids.k_w, ids.k_b)?;
    let k = g.relu(k)?;
    let v = affine(g, x, ids.v_w, ids.v_b)?;
    let v = g.relu(v)?;
    let dh = cfg.head_dim();
    let scale = match cfg.attention_scale {
        AttentionScale::Model => 1.0 / (cfg.d as f64).sqrt(),
        AttentionScale::Head => 1.0 / (dh as f64).sqrt(),
    };
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut weights = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let a = g.softmax_rows(scores, Some(mask))?;
        weights.push(a);
        heads.push(g.matmul(a, vh)?);
    }
    let o = g.concat_cols(&heads)?;
    let o = interior(g, &mut dropout, o)?;
    let sum = g.add(x, o)?;
    let gain = g.param(ids.ln_gain);
    let bias = g.param(ids.ln_bias);
    let m = g.layer_norm(sum, gain, bias)?;
    let states = g.scale_rows(m, &mask_factors(mask))?;
    Ok(AttentionOutput { states, weights })
}

/// `t0 = ReLU(C1(m))`, `t1 = ReLU(C5(t0))`, `t2 = C1(t1)`.
pub fn conv_block(
    g: &mut Graph,
    ids: &ConvIds,
    m: NodeId,
    mask: &[bool],
    mut dropout: Option<&mut Dropout>,
) -> Result<NodeId> {
    let keep = mask_factors(mask);
    let conv = |g: &mut Graph, x, k, b| -> Result<NodeId> {
        let k = g.param(k);
        let b = g.param(b);
        Ok(g.conv1d(x, k, b)?)
    };
    let t0 = conv(g, m, ids.kernel0, ids.bias0)?;
    let t0 = g.relu(t0)?;
    let t0 = interior(g, &mut dropout, t0)?;
    let t0 = g.scale_rows(t0, &keep)?;
    let t1 = conv(g, t0, ids.kernel1, ids.bias1)?;
    let t1 = g.relu(t1)?;
    let t1 = interior(g, &mut dropout, t1)?;
    let t2 = conv(g, t1, ids.kernel2, ids.bias2)?;
    Ok(g.scale_rows(t2, &keep)?)
}

pub struct BlockOutput {
    pub states: NodeId,
    pub attention: Vec<NodeId>,
}

/// `b_k = b_{k-1} + t2`, optionally followed by layer normalization.
pub fn block(
    g: &mut Graph,
    model: &Model,
    ids: &BlockIds,
    b: NodeId,
    mask: &[bool],
    mut dropout: Option<&mut Dropout>,
) -> Result<BlockOutput> {
    let att = multi_head_attention(g, model, &ids.attention, b, mask, dropout.as_deref_mut())?;
    let t2 = conv_block(g, &ids.conv, att.states, mask, dropout)?;
    let mut out = g.add(b, t2)?;
    if let Some((gain, bias)) = ids.post_norm {
        let gain = g.param(gain);
        let bias = g.param(bias);
        let n = g.layer_norm(out, gain, bias)?;
        out = g.scale_rows(n, &mask_factors(mask))?;
    }
    Ok(BlockOutput {
        states: out,
        attention: att.weights,
    })
}

pub struct EncodedDocument {
    /// `[N, d]` final states; padding rows are zero.
    pub states: NodeId,
    /// Attention weights per block, per head.
    pub attention: Vec<Vec<NodeId>>,
}

pub fn encode_document(
    g: &mut Graph,
    model: &Model,
    token_ids: &[usize],
    mask: &[bool],
    mut dropout: Option<&mut Dropout>,
) -> Result<EncodedDocument> {
    assert_eq!(token_ids.len(), mask.len(), "token and mask lengths differ");
    let ids = match dropout.as_deref_mut() {
        Some(d) => d.drop_words(token_ids, mask),
        None => token_ids.to_vec(),
    };
    let x = embed(g, model, &ids)?;
    let x = interior(g, &mut dropout, x)?;
    let mut b = g.scale_rows(x, &mask_factors(mask))?;
    let mut attention = Vec::with_capacity(model.config.blocks);
    for block_ids in &model.ids.blocks {
        let out = block(g, model, block_ids, b, mask, dropout.as_deref_mut())?;
        b = out.states;
        attention.push(out.attention);
    }
    Ok(EncodedDocument {
        states: b,
        attention,
    })
}
