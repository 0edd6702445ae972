//! Joint relation and entity-tag training: balanced pair sampling,
//! Adam updates with clipping and annealed gradient noise, and early
//! stopping on dev micro-F1.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use docrel_tensor::{Gradients, Graph, NodeId, ParamStore, Tensor};
use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::encoder::Dropout;
use crate::error::{Error, Result};
use crate::eval::{argmax_thresholds, predicted_labels, prf1, tune_thresholds, PairKey};
use crate::example::Example;
use crate::model::{read_container, write_container, Model, ModelDims};
use crate::predict::{flatten_pairs, predict_examples};
use crate::scorer::forward;

/// Mixes several integers into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

const STREAM_SAMPLE: u64 = 1;
const STREAM_DROPOUT: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Mean negative log-likelihood of `labels` under a softmax over each row
/// of `pooled`, divided by `normalizer`.
pub fn relation_loss(
    g: &mut Graph,
    pooled: NodeId,
    labels: &[usize],
    normalizer: f64,
) -> Result<NodeId> {
    let classes = g.shape(pooled)[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!(
            "relation label {bad} outside {classes} classes"
        )));
    }
    let targets: Vec<Option<usize>> = labels.iter().map(|&l| Some(l)).collect();
    Ok(g.cross_entropy(pooled, &targets, normalizer)?)
}

/// Token-level tag NLL; `None` tags (padding) are skipped.
pub fn ner_loss(
    g: &mut Graph,
    logits: NodeId,
    tags: &[Option<usize>],
    normalizer: f64,
) -> Result<NodeId> {
    let shape = g.shape(logits);
    if shape[0] != tags.len() {
        return Err(Error::Data(format!(
            "{} tags for {} tokens",
            tags.len(),
            shape[0]
        )));
    }
    if let Some(bad) = tags.iter().flatten().find(|&&t| t >= shape[1]) {
        return Err(Error::Data(format!(
            "tag {bad} outside {} classes",
            shape[1]
        )));
    }
    Ok(g.cross_entropy(logits, tags, normalizer)?)
}

/// `(example, pair)` positions split by whether the pair is labeled null.
#[derive(Debug, Clone)]
pub struct PairIndex {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
}

impl PairIndex {
    pub fn new(examples: &[Example]) -> Self {
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (d, ex) in examples.iter().enumerate() {
            for (p, pair) in ex.pairs.iter().enumerate() {
                if pair.label == 0 {
                    negatives.push((d, p));
                } else {
                    positives.push((d, p));
                }
            }
        }
        PairIndex {
            positives,
            negatives,
        }
    }

    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub positive: bool,
    /// Example index to the selected pair indices.
    pub docs: BTreeMap<usize, Vec<usize>>,
}

impl Batch {
    pub fn num_pairs(&self) -> usize {
        self.docs.values().map(Vec::len).sum()
    }
}

fn by_document(pairs: &[(usize, usize)]) -> Vec<(usize, Vec<usize>)> {
    let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
    for &(d, p) in pairs {
        match out.last_mut() {
            Some((last, v)) if *last == d => v.push(p),
            _ => out.push((d, vec![p])),
        }
    }
    out
}

/// Flips a coin with `positive_prob` to pick the positive or null stratum,
/// then fills the batch with documents drawn uniformly without
/// replacement, each contributing its pairs from that stratum (in random
/// order) until `batch_size` pairs are taken or documents run out. An
/// empty stratum falls back to the other.
pub fn sample_minibatch(
    index: &PairIndex,
    batch_size: usize,
    positive_prob: f64,
    rng: &mut impl Rng,
) -> Result<Batch> {
    if index.is_empty() {
        return Err(Error::Data("no training pairs".into()));
    }
    let mut positive = rng.random::<f64>() < positive_prob;
    if positive && index.positives.is_empty() {
        warn!("no positive pairs; sampling a null batch");
        positive = false;
    } else if !positive && index.negatives.is_empty() {
        warn!("no null pairs; sampling a positive batch");
        positive = true;
    }
    let groups = by_document(if positive {
        &index.positives
    } else {
        &index.negatives
    });
    let order = rand::seq::index::sample(rng, groups.len(), groups.len());
    let mut docs: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut taken = 0;
    for g in order {
        if taken >= batch_size {
            break;
        }
        let (d, pairs) = &groups[g];
        let mut pairs = pairs.clone();
        pairs.shuffle(rng);
        pairs.truncate(batch_size - taken);
        taken += pairs.len();
        pairs.sort_unstable();
        docs.insert(*d, pairs);
    }
    Ok(Batch { positive, docs })
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()))
            .collect();
        Adam {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &Gradients,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) {
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (id, g) in grads.iter() {
            let (m, v) = (&mut self.m[id.0], &mut self.v[id.0]);
            let p = store.get_mut(id);
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Variance of the gradient noise added at step `t` (0-based).
pub fn noise_variance(eta: f64, decay: f64, t: usize) -> f64 {
    eta / (1.0 + t as f64).powf(decay)
}

pub fn add_gradient_noise(grads: &mut Gradients, variance: f64, rng: &mut impl Rng) {
    if variance <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite std");
    for (_, g) in grads.iter_mut() {
        for v in g.data_mut() {
            *v += normal.sample(rng);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub relation_loss: f64,
    pub ner_loss: f64,
    pub total_loss: f64,
    pub grad_norm: f64,
    pub positive: bool,
}

/// Loss and gradients of one batch. Each document is its own graph; the
/// normalizers are batch totals, so summing per-document gradients gives
/// the gradient of the batch loss.
pub fn batch_gradients(
    model: &Model,
    examples: &[Example],
    batch: &Batch,
    config: &Config,
    step: usize,
) -> Result<(Gradients, StepStats)> {
    let pairs_total = batch.num_pairs() as f64;
    let tokens_total: usize = batch.docs.keys().map(|&d| examples[d].len()).sum();
    let lambda = config.ner_weight;
    let docs: Vec<(&usize, &Vec<usize>)> = batch.docs.iter().collect();
    let per_doc: Vec<Result<(Gradients, f64, f64)>> = docs
        .par_iter()
        .map(|&(&d, pair_ids)| {
            let ex = &examples[d];
            let mut dropout = Dropout::new(
                derive_seed(&[config.seed, STREAM_DROPOUT, step as u64, d as u64]),
                config.word_keep,
                config.interior_keep,
                config.final_keep,
            );
            let mut g = Graph::new(&model.store);
            let groups = pair_ids
                .iter()
                .map(|&p| ex.pairs[p].cells.clone())
                .collect();
            let labels: Vec<usize> = pair_ids.iter().map(|&p| ex.pairs[p].label).collect();
            let mask = vec![true; ex.len()];
            let f = forward(
                &mut g,
                model,
                &ex.token_ids,
                &mask,
                groups,
                Some(&mut dropout),
            )?;
            let pooled = f.pooled.expect("batch documents have pairs");
            let rel = relation_loss(&mut g, pooled, &labels, pairs_total)?;
            let rel_value = g.value(rel).item();
            let (loss, ner_value) = if lambda > 0.0 {
                let tags: Vec<Option<usize>> = ex.tags.iter().map(|&t| Some(t)).collect();
                let ner = ner_loss(&mut g, f.ner_logits, &tags, tokens_total as f64)?;
                let ner_value = g.value(ner).item();
                let weighted = g.scale(ner, lambda)?;
                (g.add(rel, weighted)?, ner_value)
            } else {
                (rel, 0.0)
            };
            Ok((g.backward(loss)?, rel_value, ner_value))
        })
        .collect();
    let mut grads = Gradients::zeros_like(&model.store);
    let (mut rel, mut ner) = (0.0, 0.0);
    for r in per_doc {
        let (gd, r_val, n_val) = r?;
        grads.accumulate(&gd);
        rel += r_val;
        ner += n_val;
    }
    let stats = StepStats {
        relation_loss: rel,
        ner_loss: ner,
        total_loss: rel + lambda * ner,
        grad_norm: grads.global_norm(),
        positive: batch.positive,
    };
    Ok((grads, stats))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    pub relation_loss: f64,
    pub ner_loss: f64,
    pub total_loss: f64,
    pub dev_precision: f64,
    pub dev_recall: f64,
    pub dev_f1: f64,
    pub best_dev_f1: f64,
    pub improved: bool,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub adam: Adam,
    pub step: usize,
    pub best_dev_f1: f64,
    pub best_step: usize,
    pub best_params: Vec<Tensor>,
    pub evals_without_improvement: usize,
    pub loss_sums: [f64; 3],
    pub loss_count: usize,
    pub finished: bool,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    kind: String,
    model: crate::config::ModelConfig,
    dims: ModelDims,
    step: usize,
    adam_t: u64,
    best_dev_f1: f64,
    best_step: usize,
    evals_without_improvement: usize,
    loss_sums: [f64; 3],
    loss_count: usize,
    finished: bool,
}

impl TrainState {
    pub fn new(model: Model) -> Self {
        let adam = Adam::new(&model.store);
        let best_params = model.store.iter().map(|(_, _, t)| t.clone()).collect();
        TrainState {
            model,
            adam,
            step: 0,
            best_dev_f1: f64::NEG_INFINITY,
            best_step: 0,
            best_params,
            evals_without_improvement: 0,
            loss_sums: [0.0; 3],
            loss_count: 0,
            finished: false,
        }
    }

    pub fn write(&self, out: &mut impl Write) -> std::io::Result<()> {
        let header = StateHeader {
            kind: "train_state".into(),
            model: self.model.config.clone(),
            dims: self.model.dims,
            step: self.step,
            adam_t: self.adam.t,
            best_dev_f1: self.best_dev_f1,
            best_step: self.best_step,
            evals_without_improvement: self.evals_without_improvement,
            loss_sums: self.loss_sums,
            loss_count: self.loss_count,
            finished: self.finished,
        };
        let mut tensors = self.model.named_tensors();
        let names: Vec<String> = tensors.iter().map(|(n, _)| n.clone()).collect();
        for (i, n) in names.iter().enumerate() {
            tensors.push((format!("adam.m.{n}"), self.adam.m[i].clone()));
            tensors.push((format!("adam.v.{n}"), self.adam.v[i].clone()));
            tensors.push((format!("best.{n}"), self.best_params[i].clone()));
        }
        write_container(
            out,
            &serde_json::to_value(header).expect("serializes"),
            &tensors,
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory succeeds");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read(input: &mut impl std::io::Read, context: &str) -> Result<TrainState> {
        let (header, tensors) = read_container(input, context)?;
        let h: StateHeader = serde_json::from_value(header)?;
        if h.kind != "train_state" {
            return Err(Error::Data(format!(
                "{context}: expected training state, found {}",
                h.kind
            )));
        }
        let mut params = Vec::new();
        let mut extra: BTreeMap<String, Tensor> = BTreeMap::new();
        for (n, t) in tensors {
            if n.starts_with("adam.") || n.starts_with("best.") {
                extra.insert(n, t);
            } else {
                params.push((n, t));
            }
        }
        let model = Model::from_tensors(h.model, h.dims, params)?;
        let mut take = |prefix: &str, name: &str| {
            extra
                .remove(&format!("{prefix}.{name}"))
                .ok_or_else(|| Error::Data(format!("{context}: missing {prefix}.{name}")))
        };
        let (mut m, mut v, mut best) = (Vec::new(), Vec::new(), Vec::new());
        for (_, name, t) in model.store.iter() {
            for (prefix, dst) in [("adam.m", &mut m), ("adam.v", &mut v), ("best", &mut best)] {
                let x = take(prefix, name)?;
                if x.shape() != t.shape() {
                    return Err(Error::Data(format!(
                        "{context}: {prefix}.{name} has the wrong shape"
                    )));
                }
                dst.push(x);
            }
        }
        Ok(TrainState {
            model,
            adam: Adam { m, v, t: h.adam_t },
            step: h.step,
            best_dev_f1: h.best_dev_f1,
            best_step: h.best_step,
            best_params: best,
            evals_without_improvement: h.evals_without_improvement,
            loss_sums: h.loss_sums,
            loss_count: h.loss_count,
            finished: h.finished,
        })
    }

    pub fn load(path: &Path) -> Result<TrainState> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        TrainState::read(&mut bytes.as_slice(), &path.display().to_string())
    }
}

/// Applies one optimizer step for `batch`: gradients, clipping, noise,
/// Adam. Parameters are untouched if the loss or gradients are not finite.
pub fn joint_step(
    state: &mut TrainState,
    examples: &[Example],
    batch: &Batch,
    config: &Config,
) -> Result<StepStats> {
    let step = state.step;
    let (mut grads, stats) = batch_gradients(&state.model, examples, batch, config, step)?;
    if !stats.total_loss.is_finite() || !grads.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss or gradient at step {step}"
        )));
    }
    let mut noise_rng =
        ChaCha8Rng::seed_from_u64(derive_seed(&[config.seed, STREAM_NOISE, step as u64]));
    let variance = noise_variance(config.noise_eta, config.noise_decay, step);
    if !config.noise_after_clip {
        add_gradient_noise(&mut grads, variance, &mut noise_rng);
    }
    grads.clip_global_norm(config.clip_norm);
    if config.noise_after_clip {
        add_gradient_noise(&mut grads, variance, &mut noise_rng);
    }
    state.adam.step(
        &mut state.model.store,
        &grads,
        config.learning_rate,
        config.adam_beta1,
        config.adam_beta2,
        config.adam_eps,
    );
    Ok(stats)
}

/// Dev micro-F1 under the plain argmax decision rule.
pub fn dev_metrics(
    model: &Model,
    dev: &[Example],
    class_names: &[String],
) -> Result<(f64, f64, f64)> {
    let preds = flatten_pairs(&predict_examples(model, dev)?);
    let gold = gold_labels(dev);
    let predicted = predicted_labels(&preds, &argmax_thresholds(class_names.len()));
    let r = prf1(&predicted, &gold, class_names)?;
    Ok((r.micro.precision, r.micro.recall, r.micro.f1))
}

/// Sorted gold classes of every entity pair.
pub fn gold_labels(examples: &[Example]) -> BTreeMap<PairKey, Vec<usize>> {
    let mut gold: BTreeMap<PairKey, Vec<usize>> = BTreeMap::new();
    for ex in examples {
        for p in &ex.pairs {
            let key = PairKey {
                doc_id: ex.doc_id.clone(),
                head: p.head.clone(),
                tail: p.tail.clone(),
            };
            gold.entry(key).or_default().push(p.label);
        }
    }
    for labels in gold.values_mut() {
        labels.sort_unstable();
        labels.dedup();
    }
    gold
}

pub struct Trainer<'a> {
    pub config: &'a Config,
    pub train: &'a [Example],
    pub dev: &'a [Example],
    pub class_names: Vec<String>,
    pub index: PairIndex,
    pub state: TrainState,
    pub log: Vec<LogRecord>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        state: TrainState,
        config: &'a Config,
        train: &'a [Example],
        dev: &'a [Example],
        class_names: Vec<String>,
    ) -> Result<Self> {
        let index = PairIndex::new(train);
        if index.is_empty() {
            return Err(Error::Data("training split has no entity pairs".into()));
        }
        if dev.iter().all(|e| e.pairs.is_empty()) {
            return Err(Error::Data("dev split has no entity pairs".into()));
        }
        Ok(Trainer {
            config,
            train,
            dev,
            class_names,
            index,
            state,
            log: Vec::new(),
        })
    }

    pub fn eval_every(&self) -> usize {
        match self.config.eval_every {
            0 => (self.index.len() / self.config.batch_size).max(1),
            n => n,
        }
    }

    fn one_step(&mut self) -> Result<()> {
        let step = self.state.step;
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.seed, STREAM_SAMPLE, step as u64]));
        let batch = sample_minibatch(
            &self.index,
            self.config.batch_size,
            self.config.positive_prob,
            &mut rng,
        )?;
        match joint_step(&mut self.state, self.train, &batch, self.config) {
            Ok(s) => {
                self.state.loss_sums[0] += s.relation_loss;
                self.state.loss_sums[1] += s.ner_loss;
                self.state.loss_sums[2] += s.total_loss;
                self.state.loss_count += 1;
            }
            Err(e) if e.kind() == crate::ErrorKind::Numeric => {
                warn!(
                    "step {step}: skipped batch {:?}: {e}",
                    batch.docs.keys().collect::<Vec<_>>()
                );
            }
            Err(e) => return Err(e),
        }
        self.state.step += 1;
        Ok(())
    }

    fn evaluate(&mut self) -> Result<LogRecord> {
        let (p, r, f1) = dev_metrics(&self.state.model, self.dev, &self.class_names)?;
        let improved = f1 > self.state.best_dev_f1;
        if improved {
            self.state.best_dev_f1 = f1;
            self.state.best_step = self.state.step;
            self.state.best_params = self
                .state
                .model
                .store
                .iter()
                .map(|(_, _, t)| t.clone())
                .collect();
            self.state.evals_without_improvement = 0;
        } else {
            self.state.evals_without_improvement += 1;
        }
        let n = self.state.loss_count.max(1) as f64;
        let rec = LogRecord {
            step: self.state.step,
            relation_loss: self.state.loss_sums[0] / n,
            ner_loss: self.state.loss_sums[1] / n,
            total_loss: self.state.loss_sums[2] / n,
            dev_precision: p,
            dev_recall: r,
            dev_f1: f1,
            best_dev_f1: self.state.best_dev_f1,
            improved,
        };
        self.state.loss_sums = [0.0; 3];
        self.state.loss_count = 0;
        info!(
            "step {} loss {:.4} (rel {:.4}, ner {:.4}) dev P {:.4} R {:.4} F1 {:.4}",
            rec.step, rec.total_loss, rec.relation_loss, rec.ner_loss, p, r, f1
        );
        Ok(rec)
    }

    /// Trains until early stopping, `max_steps`, or `pause_at` steps
    /// (whichever comes first). Returns true once training has finished.
    pub fn run(
        &mut self,
        pause_at: Option<usize>,
        mut on_log: impl FnMut(&LogRecord),
    ) -> Result<bool> {
        let every = self.eval_every();
        while !self.state.finished {
            if pause_at.is_some_and(|p| self.state.step >= p) {
                return Ok(false);
            }
            self.one_step()?;
            let at_limit = self.state.step >= self.config.max_steps;
            if self.state.step.is_multiple_of(every) || at_limit {
                let rec = self.evaluate()?;
                on_log(&rec);
                self.log.push(rec);
                if self.state.evals_without_improvement >= self.config.patience || at_limit {
                    self.state.finished = true;
                }
            }
        }
        Ok(true)
    }

    /// The best parameters seen, with thresholds tuned on dev.
    pub fn finish(self) -> Result<(Model, BTreeMap<String, f64>)> {
        let mut model = self.state.model;
        let ids: Vec<_> = model.store.ids().collect();
        for (id, best) in ids.into_iter().zip(self.state.best_params) {
            *model.store.get_mut(id) = best;
        }
        let preds = flatten_pairs(&predict_examples(&model, self.dev)?);
        let gold = gold_labels(self.dev);
        let (probs, labels) = crate::eval::tuning_rows(&preds, &gold)?;
        let thresholds = tune_thresholds(&probs, &labels, &self.class_names);
        Ok((
            model,
            crate::eval::thresholds_to_map(&thresholds, &self.class_names),
        ))
    }
}
