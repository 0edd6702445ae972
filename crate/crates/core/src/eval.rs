//! Decision rules, threshold tuning, and precision/recall/F1 reporting for
//! entity-pair relations and token-level entity spans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::BufRead;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::bpe::BioTag;
use crate::error::{Error, Result};

/// Probability threshold used for relations with no dev support.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairKey {
    pub doc_id: String,
    pub head: String,
    pub tail: String,
}

/// Model output for one entity pair, indexed by class (0 = null).
#[derive(Debug, Clone, PartialEq)]
pub struct PairPrediction {
    pub key: PairKey,
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// The most probable class, demoted to null (class 0) when it is a
/// relation whose probability is below that relation's threshold.
/// `thresholds[0]` is ignored.
pub fn classify(probs: &[f64], thresholds: &[f64]) -> usize {
    let best = argmax(probs);
    if best != 0 && probs[best] < thresholds[best] {
        0
    } else {
        best
    }
}

/// Thresholds that reduce [`classify`] to a plain argmax.
pub fn argmax_thresholds(num_classes: usize) -> Vec<f64> {
    vec![0.0; num_classes]
}

pub fn thresholds_to_map(thresholds: &[f64], class_names: &[String]) -> BTreeMap<String, f64> {
    class_names[1..]
        .iter()
        .zip(&thresholds[1..])
        .map(|(n, &t)| (n.clone(), t))
        .collect()
}

/// Missing relations get [`DEFAULT_THRESHOLD`].
pub fn thresholds_from_map(map: &BTreeMap<String, f64>, class_names: &[String]) -> Vec<f64> {
    let mut out = vec![0.0];
    out.extend(
        class_names[1..]
            .iter()
            .map(|n| map.get(n).copied().unwrap_or(DEFAULT_THRESHOLD)),
    );
    out
}

fn f1(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

/// Per-relation threshold maximizing that relation's F1 on dev. Only pairs
/// whose most probable class is the relation can be affected by its
/// threshold. Candidates are every distinct dev probability of the relation
/// plus 0 and 1; ties go to the lowest threshold.
pub fn tune_thresholds(probs: &[Vec<f64>], gold: &[usize], class_names: &[String]) -> Vec<f64> {
    let k = class_names.len();
    let mut out = vec![0.0; k];
    for r in 1..k {
        let support = gold.iter().filter(|&&g| g == r).count();
        if support == 0 {
            warn!(
                "relation {} has no dev support; using threshold {DEFAULT_THRESHOLD}",
                class_names[r]
            );
            out[r] = DEFAULT_THRESHOLD;
            continue;
        }
        let mut grid: Vec<f64> = probs.iter().map(|p| p[r]).chain([0.0, 1.0]).collect();
        grid.sort_by(f64::total_cmp);
        grid.dedup();
        // (probability, is gold) for pairs whose argmax is r
        let mut cands: Vec<(f64, bool)> = probs
            .iter()
            .zip(gold)
            .filter(|(p, _)| argmax(p) == r)
            .map(|(p, &g)| (p[r], g == r))
            .collect();
        cands.sort_by(|a, b| a.0.total_cmp(&b.0));
        // Sweep thresholds upward; pairs strictly below t are demoted.
        let (mut tp, mut fp) =
            cands.iter().fold(
                (0, 0),
                |(tp, fp), c| if c.1 { (tp + 1, fp) } else { (tp, fp + 1) },
            );
        let mut next = 0;
        let mut best = (f64::NEG_INFINITY, 0.0);
        for &t in &grid {
            while next < cands.len() && cands[next].0 < t {
                if cands[next].1 {
                    tp -= 1;
                } else {
                    fp -= 1;
                }
                next += 1;
            }
            let score = f1(tp, fp, support - tp).2;
            if score > best.0 {
                best = (score, t);
            }
        }
        out[r] = best.1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub relation: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_relation: Vec<RelationScore>,
    pub micro: RelationScore,
    /// Unweighted mean over relations occurring in gold or predictions.
    pub macro_avg: Score,
}

impl MetricReport {
    pub fn micro_f1(&self) -> f64 {
        self.micro.f1
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<32} {:>7} {:>7} {:>7} {:>8}",
            "relation", "P", "R", "F1", "support"
        );
        for r in self.per_relation.iter().chain(std::iter::once(&self.micro)) {
            let _ = writeln!(
                s,
                "{:<32} {:>7.4} {:>7.4} {:>7.4} {:>8}",
                r.relation, r.precision, r.recall, r.f1, r.support
            );
        }
        let m = &self.macro_avg;
        let _ = writeln!(
            s,
            "{:<32} {:>7.4} {:>7.4} {:>7.4}",
            "macro", m.precision, m.recall, m.f1
        );
        s
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in self.per_relation.iter().chain(std::iter::once(&self.micro)) {
            s.push_str(&serde_json::to_string(r).expect("serializes"));
            s.push('\n');
        }
        let m = serde_json::json!({"relation": "macro", "precision": self.macro_avg.precision,
            "recall": self.macro_avg.recall, "f1": self.macro_avg.f1});
        s.push_str(&m.to_string());
        s.push('\n');
        s
    }
}

fn relation_score(name: &str, tp: usize, fp: usize, fn_: usize) -> RelationScore {
    let (precision, recall, f1) = f1(tp, fp, fn_);
    RelationScore {
        relation: name.to_string(),
        tp,
        fp,
        fn_,
        support: tp + fn_,
        precision,
        recall,
        f1,
    }
}

/// Gold classes of one pair: a single class, or several relations that
/// hold at once.
pub trait GoldLabels {
    fn labels(&self) -> &[usize];
}

impl GoldLabels for usize {
    fn labels(&self) -> &[usize] {
        std::slice::from_ref(self)
    }
}

impl GoldLabels for Vec<usize> {
    fn labels(&self) -> &[usize] {
        self
    }
}

/// Scores predicted class labels against gold over the same pair keys.
/// Class 0 is null and never counted as a positive. A prediction is a true
/// positive when it is any of the pair's gold relations; the pair's other
/// gold relations count as false negatives.
pub fn prf1<G: GoldLabels>(
    predicted: &BTreeMap<PairKey, usize>,
    gold: &BTreeMap<PairKey, G>,
    class_names: &[String],
) -> Result<MetricReport> {
    if predicted.len() != gold.len() || predicted.keys().zip(gold.keys()).any(|(a, b)| a != b) {
        let missing = gold.keys().find(|k| !predicted.contains_key(k));
        let extra = predicted.keys().find(|k| !gold.contains_key(k));
        return Err(Error::Data(format!(
            "prediction and gold pairs differ (missing {missing:?}, extra {extra:?})"
        )));
    }
    let k = class_names.len();
    let (mut tp, mut fp, mut fn_) = (vec![0; k], vec![0; k], vec![0; k]);
    for (key, g) in gold {
        let (p, g) = (predicted[key], g.labels());
        if p >= k || g.is_empty() || g.iter().any(|&c| c >= k) {
            return Err(Error::Data(format!("class index out of range for {key:?}")));
        }
        if g.contains(&p) {
            tp[p] += 1;
        } else {
            fp[p] += 1;
        }
        for &c in g.iter().filter(|&&c| c != p) {
            fn_[c] += 1;
        }
    }
    let per_relation: Vec<RelationScore> = (1..k)
        .map(|c| relation_score(&class_names[c], tp[c], fp[c], fn_[c]))
        .collect();
    let sum = |v: &[usize]| v[1..].iter().sum::<usize>();
    let micro = relation_score("micro", sum(&tp), sum(&fp), sum(&fn_));
    let present: Vec<&RelationScore> = per_relation
        .iter()
        .filter(|r| r.tp + r.fp + r.fn_ > 0)
        .collect();
    let mean = |f: fn(&RelationScore) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|r| f(r)).sum::<f64>() / present.len() as f64
        }
    };
    let macro_avg = Score {
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        f1: mean(|r| r.f1),
    };
    Ok(MetricReport {
        per_relation,
        micro,
        macro_avg,
    })
}

/// Threshold-tuning rows: one `(probabilities, gold class)` row per gold
/// relation of each predicted pair.
pub fn tuning_rows<G: GoldLabels>(
    preds: &[PairPrediction],
    gold: &BTreeMap<PairKey, G>,
) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let (mut probs, mut labels) = (Vec::new(), Vec::new());
    for p in preds {
        let g = gold
            .get(&p.key)
            .ok_or_else(|| Error::Data(format!("prediction for unknown pair {:?}", p.key)))?;
        for &c in g.labels() {
            probs.push(p.probs.clone());
            labels.push(c);
        }
    }
    Ok((probs, labels))
}

pub fn predicted_labels(preds: &[PairPrediction], thresholds: &[f64]) -> BTreeMap<PairKey, usize> {
    preds
        .iter()
        .map(|p| (p.key.clone(), classify(&p.probs, thresholds)))
        .collect()
}

/// `(doc index, start, end, type)` spans, end exclusive.
pub type Span = (usize, usize, usize, String);

/// Spans of one tag sequence. An `I-X` that does not continue an `X` span
/// opens a new span, as if it were `B-X`; the number of such repairs is
/// returned alongside.
pub fn extract_spans(tags: &[BioTag]) -> (Vec<(usize, usize, String)>, usize) {
    let mut spans = Vec::new();
    let mut repairs = 0;
    let mut open: Option<(usize, String)> = None;
    for (i, t) in tags.iter().enumerate() {
        match t {
            BioTag::O => {
                if let Some((s, ty)) = open.take() {
                    spans.push((s, i, ty));
                }
            }
            BioTag::B(ty) => {
                if let Some((s, prev)) = open.take() {
                    spans.push((s, i, prev));
                }
                open = Some((i, ty.clone()));
            }
            BioTag::I(ty) => match &open {
                Some((_, prev)) if prev == ty => {}
                _ => {
                    repairs += 1;
                    if let Some((s, prev)) = open.take() {
                        spans.push((s, i, prev));
                    }
                    open = Some((i, ty.clone()));
                }
            },
        }
    }
    if let Some((s, ty)) = open {
        spans.push((s, tags.len(), ty));
    }
    (spans, repairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NerReport {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Invalid `I-` tags repaired in predictions and gold combined.
    pub repairs: usize,
}

/// Exact span-and-type matching over aligned tag sequences.
pub fn span_ner_f1(predicted: &[Vec<BioTag>], gold: &[Vec<BioTag>]) -> Result<NerReport> {
    if predicted.len() != gold.len() {
        return Err(Error::Data(
            "prediction and gold sequence counts differ".into(),
        ));
    }
    let mut pred_spans: BTreeSet<Span> = BTreeSet::new();
    let mut gold_spans: BTreeSet<Span> = BTreeSet::new();
    let mut repairs = 0;
    for (doc, (p, g)) in predicted.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(Error::Data(format!(
                "sequence {doc}: {} tags vs {} gold",
                p.len(),
                g.len()
            )));
        }
        let (ps, rp) = extract_spans(p);
        let (gs, rg) = extract_spans(g);
        repairs += rp + rg;
        pred_spans.extend(ps.into_iter().map(|(s, e, t)| (doc, s, e, t)));
        gold_spans.extend(gs.into_iter().map(|(s, e, t)| (doc, s, e, t)));
    }
    let tp = pred_spans.intersection(&gold_spans).count();
    let fp = pred_spans.len() - tp;
    let fn_ = gold_spans.len() - tp;
    let (precision, recall, f1) = f1(tp, fp, fn_);
    Ok(NerReport {
        tp,
        fp,
        fn_,
        precision,
        recall,
        f1,
        repairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffReport {
    pub cutoff: usize,
    pub candidates: usize,
    pub gold_positives: usize,
    pub report: MetricReport,
}

/// Metrics restricted to pairs whose closest mentions are at most `cutoff`
/// tokens apart, for each cutoff, from one set of predictions.
pub fn distance_filtered_eval<G: GoldLabels + Clone>(
    predicted: &BTreeMap<PairKey, usize>,
    gold: &BTreeMap<PairKey, G>,
    distances: &BTreeMap<PairKey, usize>,
    cutoffs: &[usize],
    class_names: &[String],
) -> Result<Vec<CutoffReport>> {
    if cutoffs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!(
            "cutoffs must be strictly ascending: {cutoffs:?}"
        )));
    }
    let mut out = Vec::with_capacity(cutoffs.len());
    for &cutoff in cutoffs {
        let keep = |k: &PairKey| -> Result<bool> {
            distances
                .get(k)
                .map(|&d| d <= cutoff)
                .ok_or_else(|| Error::Data(format!("no distance for {k:?}")))
        };
        let mut p = BTreeMap::new();
        let mut g = BTreeMap::new();
        for (k, label) in gold {
            if keep(k)? {
                g.insert(k.clone(), label.clone());
                if let Some(&pl) = predicted.get(k) {
                    p.insert(k.clone(), pl);
                }
            }
        }
        let report = prf1(&p, &g, class_names)?;
        out.push(CutoffReport {
            cutoff,
            candidates: g.len(),
            gold_positives: g
                .values()
                .map(|l| l.labels().iter().filter(|&&c| c != 0).count())
                .sum(),
            report,
        });
    }
    Ok(out)
}

pub fn render_cutoffs(rows: &[CutoffReport]) -> String {
    let mut s = String::from("cutoff\tcandidates\tgold_positives\tprecision\trecall\tf1\n");
    for r in rows {
        let m = &r.report.micro;
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{:.4}\t{:.4}\t{:.4}",
            r.cutoff, r.candidates, r.gold_positives, m.precision, m.recall, m.f1
        );
    }
    s
}

/// Mean of per-class probabilities (and pooled scores) across aligned
/// prediction sets.
pub fn ensemble(sets: &[Vec<PairPrediction>]) -> Result<Vec<PairPrediction>> {
    if sets.len() < 2 {
        return Err(Error::Config(
            "ensembling needs at least two prediction sets".into(),
        ));
    }
    let index = |set: &[PairPrediction]| -> BTreeMap<PairKey, usize> {
        set.iter()
            .enumerate()
            .map(|(i, p)| (p.key.clone(), i))
            .collect()
    };
    let first = index(&sets[0]);
    let maps: Vec<BTreeMap<PairKey, usize>> = sets.iter().map(|s| index(s)).collect();
    for (i, m) in maps.iter().enumerate() {
        if m.len() != sets[i].len() {
            return Err(Error::Data(format!("prediction set {i} repeats a pair")));
        }
        if m.len() != first.len() || m.keys().zip(first.keys()).any(|(a, b)| a != b) {
            return Err(Error::Data(format!(
                "prediction set {i} covers different pairs"
            )));
        }
    }
    let n = sets.len() as f64;
    let mut out = Vec::with_capacity(first.len());
    for (key, &i0) in &first {
        let k = sets[0][i0].probs.len();
        let mut probs = vec![0.0; k];
        let mut scores = vec![0.0; k];
        for (set, m) in sets.iter().zip(&maps) {
            let p = &set[m[key]];
            if p.probs.len() != k {
                return Err(Error::Data(format!("class counts differ for {key:?}")));
            }
            for c in 0..k {
                probs[c] += p.probs[c];
                scores[c] += p.scores[c];
            }
        }
        probs
            .iter_mut()
            .chain(scores.iter_mut())
            .for_each(|v| *v /= n);
        out.push(PairPrediction {
            key: key.clone(),
            scores,
            probs,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub doc_id: String,
    pub head: String,
    pub tail: String,
    pub relation: String,
    pub score: f64,
    pub probability: f64,
}

/// One line per (pair, class).
pub fn write_predictions(preds: &[PairPrediction], class_names: &[String]) -> String {
    let mut s = String::new();
    for p in preds {
        for (c, name) in class_names.iter().enumerate() {
            let rec = PredictionRecord {
                doc_id: p.key.doc_id.clone(),
                head: p.key.head.clone(),
                tail: p.key.tail.clone(),
                relation: name.clone(),
                score: p.scores[c],
                probability: p.probs[c],
            };
            s.push_str(&serde_json::to_string(&rec).expect("serializes"));
            s.push('\n');
        }
    }
    s
}

pub fn read_predictions(
    input: impl BufRead,
    class_names: &[String],
    context: &str,
) -> Result<Vec<PairPrediction>> {
    let class_of: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();
    let mut grouped: BTreeMap<PairKey, (Vec<Option<f64>>, Vec<f64>)> = BTreeMap::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io(context, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(context, i + 1, e.to_string()))?;
        let c = *class_of.get(rec.relation.as_str()).ok_or_else(|| {
            Error::parse(context, i + 1, format!("unknown relation {}", rec.relation))
        })?;
        let key = PairKey {
            doc_id: rec.doc_id,
            head: rec.head,
            tail: rec.tail,
        };
        let entry = grouped
            .entry(key)
            .or_insert_with(|| (vec![None; class_names.len()], vec![0.0; class_names.len()]));
        if entry.0[c].replace(rec.probability).is_some() {
            return Err(Error::parse(
                context,
                i + 1,
                "duplicate (pair, relation) record",
            ));
        }
        entry.1[c] = rec.score;
    }
    grouped
        .into_iter()
        .map(|(key, (probs, scores))| {
            let probs = probs
                .into_iter()
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| Error::Data(format!("{context}: {key:?} lacks some relations")))?;
            Ok(PairPrediction { key, scores, probs })
        })
        .collect()
}
