use std::collections::{BTreeMap, BTreeSet};

use docrel::bpe::BioTag;
use docrel::eval::{
    classify, distance_filtered_eval, ensemble, extract_spans, prf1, read_predictions, span_ner_f1,
    tune_thresholds, write_predictions, PairKey, PairPrediction,
};
use docrel::example::min_span_distance;
use proptest::prelude::*;

fn names(k: usize) -> Vec<String> {
    (0..k)
        .map(|c| {
            if c == 0 {
                "NULL".to_string()
            } else {
                format!("r{c}")
            }
        })
        .collect()
}

fn key(i: usize) -> PairKey {
    PairKey {
        doc_id: format!("d{}", i / 7),
        head: format!("h{i}"),
        tail: "t".into(),
    }
}

fn f1_of(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let p = if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let r = if tp + fn_ == 0 {
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    let f = if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

type Counts = Vec<(usize, usize, usize)>;

/// Confusion-matrix counting: `m[g][p]`.
fn brute_force(pred: &[usize], gold: &[usize], k: usize) -> (Counts, (f64, f64, f64), f64) {
    let mut m = vec![vec![0usize; k]; k];
    for (&p, &g) in pred.iter().zip(gold) {
        m[g][p] += 1;
    }
    let per: Vec<(usize, usize, usize)> = (1..k)
        .map(|c| {
            let tp = m[c][c];
            let fp = (0..k).filter(|&g| g != c).map(|g| m[g][c]).sum();
            let fn_ = (0..k).filter(|&p| p != c).map(|p| m[c][p]).sum();
            (tp, fp, fn_)
        })
        .collect();
    let tp: usize = per.iter().map(|x| x.0).sum();
    let fp: usize = per.iter().map(|x| x.1).sum();
    let fn_: usize = per.iter().map(|x| x.2).sum();
    let present: Vec<f64> = per
        .iter()
        .filter(|x| x.0 + x.1 + x.2 > 0)
        .map(|&(a, b, c)| f1_of(a, b, c).2)
        .collect();
    let macro_f1 = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (per, f1_of(tp, fp, fn_), macro_f1)
}

fn labels_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..6).prop_flat_map(|k| (Just(k), prop::collection::vec((0..k, 0..k), 1..=100)))
}

fn probs_strategy() -> impl Strategy<Value = (usize, Vec<(Vec<f64>, usize)>)> {
    (2usize..5).prop_flat_map(|k| {
        let row = (prop::collection::vec(1u32..20, k), 0..k).prop_map(move |(w, g)| {
            let total: u32 = w.iter().sum();
            // Coarse values so ties between pairs and classes are common.
            (
                w.iter()
                    .map(|&x| x as f64 / total as f64)
                    .collect::<Vec<f64>>(),
                g,
            )
        });
        (Just(k), prop::collection::vec(row, 1..=60))
    })
}

fn relation_f1(probs: &[Vec<f64>], gold: &[usize], r: usize, t: f64, k: usize) -> f64 {
    let mut thresholds = vec![0.0; k];
    thresholds[r] = t;
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, &g) in probs.iter().zip(gold) {
        let c = classify(p, &thresholds);
        match (c == r, g == r) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    f1_of(tp, fp, fn_).2
}

fn encode_spans(n: usize, spans: &[(usize, usize, String)]) -> Vec<BioTag> {
    let mut tags = vec![BioTag::O; n];
    for (s, e, ty) in spans {
        tags[*s] = BioTag::B(ty.clone());
        for t in tags.iter_mut().take(*e).skip(s + 1) {
            *t = BioTag::I(ty.clone());
        }
    }
    tags
}

/// Non-overlapping typed spans over `n` tokens, from cut points.
fn spans_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize, String)>)> {
    (1usize..30).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 1usize..4, 0usize..3, any::<bool>()), 0..8),
        )
            .prop_map(|(n, raw)| {
                let mut taken = vec![false; n];
                let mut spans = Vec::new();
                for (s, len, ty, keep) in raw {
                    let e = (s + len).min(n);
                    if keep && (s..e).all(|i| !taken[i]) {
                        (s..e).for_each(|i| taken[i] = true);
                        spans.push((s, e, ["Chemical", "Gene", "Disease"][ty].to_string()));
                    }
                }
                spans.sort();
                (n, spans)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn prf1_matches_confusion_counting((k, rows) in labels_strategy()) {
        let pred: BTreeMap<PairKey, usize> = rows.iter().enumerate().map(|(i, r)| (key(i), r.0)).collect();
        let gold: BTreeMap<PairKey, usize> = rows.iter().enumerate().map(|(i, r)| (key(i), r.1)).collect();
        let report = prf1(&pred, &gold, &names(k)).unwrap();
        let p: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let g: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let (per, micro, macro_f1) = brute_force(&p, &g, k);
        for (got, want) in report.per_relation.iter().zip(&per) {
            prop_assert_eq!((got.tp, got.fp, got.fn_), *want);
        }
        prop_assert!((report.micro.precision - micro.0).abs() < 1e-12);
        prop_assert!((report.micro.recall - micro.1).abs() < 1e-12);
        prop_assert!((report.micro.f1 - micro.2).abs() < 1e-12);
        prop_assert!((report.macro_avg.f1 - macro_f1).abs() < 1e-12);
    }

    #[test]
    fn tuned_thresholds_match_exhaustive_search((k, rows) in probs_strategy()) {
        let probs: Vec<Vec<f64>> = rows.iter().map(|r| r.0.clone()).collect();
        let gold: Vec<usize> = rows.iter().map(|r| r.1).collect();
        let tuned = tune_thresholds(&probs, &gold, &names(k));
        for r in 1..k {
            if !gold.contains(&r) {
                prop_assert_eq!(tuned[r], 0.5);
                continue;
            }
            let mut grid: Vec<f64> = probs.iter().map(|p| p[r]).chain([0.0, 1.0]).collect();
            grid.sort_by(f64::total_cmp);
            grid.dedup();
            let mut best = (f64::NEG_INFINITY, 0.0);
            for &t in &grid {
                let f = relation_f1(&probs, &gold, r, t, k);
                if f > best.0 {
                    best = (f, t);
                }
            }
            prop_assert_eq!(tuned[r], best.1);
            // No threshold anywhere in [0, 1] does better.
            let dense = (0..=400).map(|i| i as f64 / 400.0)
                .chain(grid.windows(2).map(|w| 0.5 * (w[0] + w[1])));
            for t in dense {
                prop_assert!(relation_f1(&probs, &gold, r, t, k) <= best.0 + 1e-12);
            }
        }
    }

    #[test]
    fn raising_a_threshold_never_creates_that_relation(
        (k, rows) in probs_strategy(),
        base in prop::collection::vec(0.0f64..1.0, 5),
        bump in 0.0f64..1.0,
        which in 1usize..5,
    ) {
        let r = which % (k - 1) + 1;
        let low: Vec<f64> = (0..k).map(|c| base[c]).collect();
        let mut high = low.clone();
        high[r] = (high[r] + bump).min(1.0);
        for (p, _) in &rows {
            let (a, b) = (classify(p, &low), classify(p, &high));
            prop_assert!(!(a != r && b == r));
            prop_assert!(a == b || (a == r && b == 0));
        }
    }

    #[test]
    fn micro_f1_ignores_relation_relabeling((k, rows) in labels_strategy(), shift in 0usize..5) {
        let perm = |c: usize| if c == 0 { 0 } else { (c - 1 + shift) % (k - 1) + 1 };
        let build = |f: &dyn Fn(usize) -> usize, pick: fn(&(usize, usize)) -> usize| -> BTreeMap<PairKey, usize> {
            rows.iter().enumerate().map(|(i, r)| (key(i), f(pick(r)))).collect()
        };
        let id = |c: usize| c;
        let a = prf1(&build(&id, |r| r.0), &build(&id, |r| r.1), &names(k)).unwrap();
        let b = prf1(&build(&perm, |r| r.0), &build(&perm, |r| r.1), &names(k)).unwrap();
        prop_assert_eq!(a.micro.f1, b.micro.f1);
        prop_assert!((a.macro_avg.f1 - b.macro_avg.f1).abs() < 1e-12);
    }

    #[test]
    fn averaging_identical_sets_changes_nothing((k, rows) in probs_strategy(), copies in 2usize..5) {
        let set: Vec<PairPrediction> = rows.iter().enumerate().map(|(i, (p, _))| pred(i, p.clone())).collect();
        let out = ensemble(&vec![set.clone(); copies]).unwrap();
        let mut sorted = set.clone();
        sorted.sort_by(|a, b| a.key.cmp(&b.key));
        for (a, b) in out.iter().zip(&sorted) {
            prop_assert_eq!(&a.key, &b.key);
            for c in 0..k {
                prop_assert!((a.probs[c] - b.probs[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoded_spans_round_trip((n, spans) in spans_strategy()) {
        let (got, repairs) = extract_spans(&encode_spans(n, &spans));
        prop_assert_eq!(repairs, 0);
        prop_assert_eq!(got, spans);
    }

    #[test]
    fn span_f1_matches_set_counting(
        docs in prop::collection::vec((spans_strategy(), any::<u64>()), 1..5),
    ) {
        let mut pred = Vec::new();
        let mut gold = Vec::new();
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for ((n, spans), seed) in &docs {
            // Drop some gold spans and retype some others.
            let kept: Vec<_> = spans
                .iter()
                .enumerate()
                .filter(|(i, _)| (seed >> (i % 32)) & 1 == 1)
                .map(|(i, (s, e, ty))| {
                    let retype = (seed >> (32 + i % 32)) & 1 == 1;
                    let ty = if retype { if ty == "Gene" { "Chemical" } else { "Gene" } } else { ty.as_str() };
                    (*s, *e, ty.to_string())
                })
                .collect();
            let gs: BTreeSet<_> = spans.iter().cloned().collect();
            let ps: BTreeSet<_> = kept.iter().cloned().collect();
            tp += ps.intersection(&gs).count();
            fp += ps.difference(&gs).count();
            fn_ += gs.difference(&ps).count();
            pred.push(encode_spans(*n, &kept));
            gold.push(encode_spans(*n, spans));
        }
        let r = span_ner_f1(&pred, &gold).unwrap();
        prop_assert_eq!((r.tp, r.fp, r.fn_), (tp, fp, fn_));
        prop_assert!((r.f1 - f1_of(tp, fp, fn_).2).abs() < 1e-12);
    }

    #[test]
    fn span_distance_matches_token_enumeration(
        a in prop::collection::vec((0usize..30, 1usize..4), 1..4),
        b in prop::collection::vec((0usize..30, 1usize..4), 1..4),
    ) {
        let a: Vec<(usize, usize)> = a.into_iter().map(|(s, l)| (s, s + l)).collect();
        let b: Vec<(usize, usize)> = b.into_iter().map(|(s, l)| (s, s + l)).collect();
        let mut brute = usize::MAX;
        for &(s1, e1) in &a {
            for &(s2, e2) in &b {
                for i in s1..e1 {
                    for j in s2..e2 {
                        brute = brute.min(i.abs_diff(j));
                    }
                }
            }
        }
        prop_assert_eq!(min_span_distance(&a, &b), brute);
    }

    #[test]
    fn distance_filter_matches_filtered_counting(
        (k, rows) in labels_strategy(),
        dists in prop::collection::vec(0usize..40, 100),
        mut cutoffs in prop::collection::btree_set(0usize..45, 1..5),
    ) {
        let max = dists.iter().take(rows.len()).copied().max().unwrap();
        cutoffs.insert(max);
        let cutoffs: Vec<usize> = cutoffs.into_iter().collect();
        let pred: BTreeMap<PairKey, usize> = rows.iter().enumerate().map(|(i, r)| (key(i), r.0)).collect();
        let gold: BTreeMap<PairKey, usize> = rows.iter().enumerate().map(|(i, r)| (key(i), r.1)).collect();
        let distances: BTreeMap<PairKey, usize> = (0..rows.len()).map(|i| (key(i), dists[i])).collect();
        let out = distance_filtered_eval(&pred, &gold, &distances, &cutoffs, &names(k)).unwrap();
        let unfiltered = prf1(&pred, &gold, &names(k)).unwrap();
        let mut previous = 0;
        for c in &out {
            let idx: Vec<usize> = (0..rows.len()).filter(|&i| dists[i] <= c.cutoff).collect();
            let p: Vec<usize> = idx.iter().map(|&i| rows[i].0).collect();
            let g: Vec<usize> = idx.iter().map(|&i| rows[i].1).collect();
            let (_, micro, _) = brute_force(&p, &g, k);
            prop_assert_eq!(c.candidates, idx.len());
            prop_assert!(c.candidates >= previous);
            previous = c.candidates;
            prop_assert_eq!(c.gold_positives, g.iter().filter(|&&l| l != 0).count());
            prop_assert!((c.report.micro.f1 - micro.2).abs() < 1e-12);
            if c.cutoff >= max {
                prop_assert_eq!(&c.report, &unfiltered);
            }
        }
    }
}

fn pred(i: usize, probs: Vec<f64>) -> PairPrediction {
    PairPrediction {
        key: key(i),
        scores: probs.iter().map(|p| p.ln()).collect(),
        probs,
    }
}

#[test]
fn ensemble_averages_aligned_sets() {
    let a = vec![pred(0, vec![0.2, 0.8]), pred(1, vec![0.6, 0.4])];
    let b = vec![pred(1, vec![0.2, 0.8]), pred(0, vec![0.4, 0.6])];
    let e = ensemble(&[a.clone(), b]).unwrap();
    assert_eq!(e.len(), 2);
    assert_eq!(e[0].key, key(0));
    assert!((e[0].probs[1] - 0.7).abs() < 1e-12);
    assert!((e[1].probs[0] - 0.4).abs() < 1e-12);
    assert!(ensemble(std::slice::from_ref(&a)).is_err());
    assert!(ensemble(&[a.clone(), vec![pred(0, vec![0.5, 0.5])]]).is_err());
}

#[test]
fn prediction_dump_round_trips() {
    let preds = vec![
        pred(0, vec![0.25, 0.5, 0.25]),
        pred(3, vec![0.125, 0.125, 0.75]),
    ];
    let text = write_predictions(&preds, &names(3));
    assert_eq!(text.lines().count(), 6);
    let back = read_predictions(text.as_bytes(), &names(3), "dump").unwrap();
    assert_eq!(back, preds);
    let missing: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    assert!(read_predictions(missing.as_bytes(), &names(3), "dump").is_err());
    let doubled = format!("{text}{}\n", text.lines().next().unwrap());
    assert!(read_predictions(doubled.as_bytes(), &names(3), "dump").is_err());
}

#[test]
fn cutoffs_must_ascend() {
    let m: BTreeMap<PairKey, usize> = [(key(0), 1)].into_iter().collect();
    let d: BTreeMap<PairKey, usize> = [(key(0), 3)].into_iter().collect();
    assert!(distance_filtered_eval(&m, &m, &d, &[5, 5], &names(2)).is_err());
    assert!(distance_filtered_eval(&m, &m, &d, &[5, 2], &names(2)).is_err());
}
