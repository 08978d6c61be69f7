//! Straight-line reference implementation of concept labeling and head/tail
//! carving: quadratic scans, no count tables, no grouping maps, parts kept
//! as plain vectors instead of encoded keys. Used only to cross-check the
//! library on small corpora.

#![allow(dead_code)]

use std::collections::BTreeSet;

use shortcut_splits::{Dataset, Sample, ShortcutKind};

/// Concept parts for each of the nine shortcuts, `None` when absent.
pub type Parts = [Option<Vec<String>>; 9];

/// Lowercased whitespace tokens; synthetic questions carry no punctuation.
fn words(text: &str) -> Vec<String> {
    text.split_whitespace().map(|w| w.to_lowercase()).collect()
}

fn qt_of(sample: &Sample) -> String {
    sample
        .question_type()
        .expect("brute oracle expects annotated question types")
        .to_string()
}

fn keywords(sample: &Sample) -> Vec<String> {
    let qt = words(&qt_of(sample));
    let toks = words(sample.question());
    let rest = if toks.len() >= qt.len() && toks[..qt.len()] == qt[..] {
        &toks[qt.len()..]
    } else {
        &toks[..]
    };
    let mut out: Vec<String> = Vec::new();
    for t in rest {
        if !out.contains(t) {
            out.push(t.clone());
        }
    }
    out
}

/// MI argument f(t,a)·K / (f(t)·f(a)) as an exact fraction.
fn mi_fraction(samples: &[&Sample], kws: &[Vec<String>], token: &str, answer: &str, object: bool) -> (u128, u128) {
    let mut f_t = 0u128;
    let mut f_a = 0u128;
    let mut f_ta = 0u128;
    for (s, kw) in samples.iter().zip(kws) {
        let has = if object {
            s.objects().contains(token)
        } else {
            kw.iter().any(|w| w == token)
        };
        let is_a = s.primary_answer() == answer;
        f_t += has as u128;
        f_a += is_a as u128;
        f_ta += (has && is_a) as u128;
    }
    (f_ta * samples.len() as u128, f_t * f_a)
}

fn greater(a: (u128, u128), b: (u128, u128)) -> bool {
    a.0 * b.1 > b.0 * a.1
}

/// Top-two tokens by MI, candidate order kept among equals.
fn top_two(samples: &[&Sample], kws: &[Vec<String>], cands: &[String], answer: &str, object: bool) -> Vec<String> {
    let scored: Vec<(String, (u128, u128))> = cands
        .iter()
        .map(|c| (c.clone(), mi_fraction(samples, kws, c, answer, object)))
        .collect();
    let mut picked: Vec<usize> = Vec::new();
    for _ in 0..2 {
        let mut best: Option<usize> = None;
        for (i, (_, f)) in scored.iter().enumerate() {
            if picked.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| greater(*f, scored[b].1)) {
                best = Some(i);
            }
        }
        if let Some(b) = best {
            picked.push(b);
        }
    }
    picked.into_iter().map(|i| scored[i].0.clone()).collect()
}

pub fn brute_concepts(dataset: &Dataset) -> Vec<(String, Parts)> {
    let samples: Vec<&Sample> = dataset.samples().iter().collect();
    let kws: Vec<Vec<String>> = samples.iter().map(|s| keywords(s)).collect();
    samples
        .iter()
        .zip(&kws)
        .map(|(s, kw)| {
            let answer = s.primary_answer();
            let qt = qt_of(s);
            let objs: Vec<String> = s.objects().iter().cloned().collect();
            let w = top_two(&samples, &kws, kw, answer, false);
            let o = top_two(&samples, &kws, &objs, answer, true);
            let w1 = w.first().cloned();
            let o1 = o.first().cloned();
            let parts: Parts = [
                Some(vec![qt.clone()]),
                w1.clone().map(|a| vec![a]),
                (w.len() == 2).then(|| w.clone()),
                w1.clone().map(|a| vec![qt.clone(), a]),
                o1.clone().map(|a| vec![a]),
                (o.len() == 2).then(|| o.clone()),
                o1.clone().map(|a| vec![qt.clone(), a]),
                w1.clone().zip(o1.clone()).map(|(a, b)| vec![a, b]),
                w1.zip(o1).map(|(a, b)| vec![qt.clone(), a, b]),
            ];
            (s.id().to_string(), parts)
        })
        .collect()
}

/// Head and tail id sets for one shortcut over one split.
pub fn brute_head_tail(
    split_ids: &[String],
    dataset: &Dataset,
    labels: &[(String, Parts)],
    kind: ShortcutKind,
) -> (BTreeSet<String>, BTreeSet<String>) {
    let concept_of = |id: &str| -> Option<Vec<String>> {
        labels.iter().find(|(i, _)| i == id).unwrap().1[kind.index()].clone()
    };
    let answer_of = |id: &str| dataset.get(id).unwrap().primary_answer().to_string();
    let members: Vec<(String, Vec<String>, String)> = split_ids
        .iter()
        .filter_map(|id| concept_of(id).map(|c| (id.clone(), c, answer_of(id))))
        .collect();

    let mut head = BTreeSet::new();
    let mut tail = BTreeSet::new();
    for (id, concept, answer) in &members {
        let group: Vec<&String> = members
            .iter()
            .filter(|(_, c, _)| c == concept)
            .map(|(_, _, a)| a)
            .collect();
        let n = group.len();
        let mut classes: Vec<&String> = group.clone();
        classes.sort();
        classes.dedup();
        let m = classes.len();
        let entropy = if m <= 1 {
            0.0
        } else {
            let h: f64 = classes
                .iter()
                .map(|c| {
                    let p = group.iter().filter(|a| a == &c).count() as f64 / n as f64;
                    -p * p.ln()
                })
                .sum();
            h / (m as f64).ln()
        };
        if entropy >= 0.9 {
            continue;
        }
        let count = group.iter().filter(|a| **a == answer).count();
        // count < 1.2 * n / m  <=>  5 * count * m < 6 * n
        if m > 1 && 5 * count * m < 6 * n {
            tail.insert(id.clone());
        } else {
            head.insert(id.clone());
        }
    }
    (head, tail)
}
