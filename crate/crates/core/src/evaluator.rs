//! Scoring prediction files against benchmark splits.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{canonicalize_answer, ShortcutKind};
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::splitter::{BenchmarkSplits, SplitCopy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Prediction equals the primary answer.
    #[default]
    Exact,
    /// min(matching annotators / 3, 1).
    VqaSoft,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Metric::Exact),
            "vqa_soft" => Ok(Metric::VqaSoft),
            other => Err(Error::UnknownSymbol(other.to_string())),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Exact => "exact",
            Metric::VqaSoft => "vqa_soft",
        })
    }
}

/// Sample id → canonical predicted answer.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PredictionSet(HashMap<String, String>);

#[derive(Debug, Serialize, Deserialize)]
struct PredictionRecord {
    id: String,
    answer: String,
}

impl PredictionSet {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let mut map = HashMap::new();
        for (id, answer) in pairs {
            let answer = canonicalize_answer(&answer)?;
            if map.insert(id.clone(), answer).is_some() {
                return Err(Error::DuplicateId(id));
            }
        }
        Ok(PredictionSet(map))
    }

    pub fn get(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reads line-delimited `{"id": .., "answer": ..}` records.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: PredictionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            pairs.push((rec.id, rec.answer));
        }
        Self::from_pairs(pairs)
    }

    /// Writes records sorted by id.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut ids: Vec<&String> = self.0.keys().collect();
        ids.sort();
        for id in ids {
            let rec = PredictionRecord {
                id: id.clone(),
                answer: self.0[id].clone(),
            };
            serde_json::to_writer(&mut out, &rec).map_err(|e| Error::format(path, e))?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SplitScore {
    pub accuracy: f64,
    pub total: usize,
    /// Ids with no prediction; scored 0.
    pub missing: usize,
}

pub fn score_split(
    predictions: &PredictionSet,
    ids: &[String],
    dataset: &Dataset,
    metric: Metric,
) -> Result<SplitScore> {
    if ids.is_empty() {
        return Err(Error::EmptySplit);
    }
    let mut sum = 0.0;
    let mut missing = 0;
    for id in ids {
        let sample = dataset
            .get(id)
            .ok_or_else(|| Error::UnknownSymbol(id.clone()))?;
        let Some(pred) = predictions.get(id) else {
            missing += 1;
            continue;
        };
        sum += match metric {
            Metric::Exact => f64::from(u8::from(pred == sample.primary_answer())),
            Metric::VqaSoft => (f64::from(sample.annotator_count(pred)) / 3.0).min(1.0),
        };
    }
    Ok(SplitScore {
        accuracy: sum / ids.len() as f64,
        total: ids.len(),
        missing,
    })
}

fn score_optional(
    predictions: &PredictionSet,
    ids: &[String],
    dataset: &Dataset,
    metric: Metric,
) -> Result<Option<SplitScore>> {
    match score_split(predictions, ids, dataset, metric) {
        Ok(s) => Ok(Some(s)),
        Err(Error::EmptySplit) => Ok(None),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShortcutReport {
    pub shortcut: ShortcutKind,
    /// `None` when the set is empty.
    pub acc_tail: Option<f64>,
    pub acc_head: Option<f64>,
    pub n_tail: usize,
    pub n_head: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub metric: Metric,
    pub shortcuts: Vec<ShortcutReport>,
    pub iid_accuracy: f64,
    /// Unweighted mean of the non-empty OOD (tail) accuracies.
    pub mean_ood: Option<f64>,
    /// `iid_accuracy - mean_ood`.
    pub gap: Option<f64>,
    pub iid_missing: usize,
}

pub fn mean_tail_accuracy(
    predictions: &PredictionSet,
    benchmark: &BenchmarkSplits,
    copy: SplitCopy,
    dataset: &Dataset,
    metric: Metric,
) -> Result<Option<f64>> {
    let scores = benchmark
        .copy(copy)
        .par_iter()
        .map(|ht| score_optional(predictions, &ht.tail_ids, dataset, metric))
        .collect::<Result<Vec<_>>>()?;
    let present: Vec<f64> = scores.into_iter().flatten().map(|s| s.accuracy).collect();
    Ok((!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64))
}

pub fn full_report(
    predictions: &PredictionSet,
    benchmark: &BenchmarkSplits,
    dataset: &Dataset,
    metric: Metric,
) -> Result<Report> {
    let iid = score_split(predictions, &benchmark.iid_test_ids, dataset, metric)?;
    let shortcuts = benchmark
        .test
        .par_iter()
        .map(|ht| {
            let tail = score_optional(predictions, &ht.tail_ids, dataset, metric)?;
            let head = score_optional(predictions, &ht.head_ids, dataset, metric)?;
            Ok(ShortcutReport {
                shortcut: ht.shortcut,
                acc_tail: tail.map(|s| s.accuracy),
                acc_head: head.map(|s| s.accuracy),
                n_tail: ht.tail_ids.len(),
                n_head: ht.head_ids.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tails: Vec<f64> = shortcuts.iter().filter_map(|s| s.acc_tail).collect();
    let mean_ood = (!tails.is_empty()).then(|| tails.iter().sum::<f64>() / tails.len() as f64);
    Ok(Report {
        metric,
        iid_accuracy: iid.accuracy,
        gap: mean_ood.map(|m| iid.accuracy - m),
        mean_ood,
        iid_missing: iid.missing,
        shortcuts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    OodTest,
    OodVal,
    IidVal,
}

impl FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ood_test" => Ok(Criterion::OodTest),
            "ood_val" => Ok(Criterion::OodVal),
            "iid_val" => Ok(Criterion::IidVal),
            other => Err(Error::UnknownSymbol(other.to_string())),
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Criterion::OodTest => "ood_test",
            Criterion::OodVal => "ood_val",
            Criterion::IidVal => "iid_val",
        })
    }
}

pub fn criterion_score(
    predictions: &PredictionSet,
    criterion: Criterion,
    benchmark: &BenchmarkSplits,
    dataset: &Dataset,
    metric: Metric,
) -> Result<f64> {
    let score = match criterion {
        Criterion::IidVal => score_optional(predictions, &benchmark.val_ids, dataset, metric)?
            .map(|s| s.accuracy),
        Criterion::OodVal => mean_tail_accuracy(predictions, benchmark, SplitCopy::Val, dataset, metric)?,
        Criterion::OodTest => mean_tail_accuracy(predictions, benchmark, SplitCopy::Test, dataset, metric)?,
    };
    score.ok_or_else(|| Error::MissingSplit(criterion.to_string()))
}

/// Index of the candidate maximizing the criterion; the earliest on ties.
pub fn select_checkpoint(
    prediction_sets: &[PredictionSet],
    criterion: Criterion,
    benchmark: &BenchmarkSplits,
    dataset: &Dataset,
    metric: Metric,
) -> Result<usize> {
    if prediction_sets.is_empty() {
        return Err(Error::InvalidConfig("no candidate prediction sets".into()));
    }
    let scores = prediction_sets
        .par_iter()
        .map(|p| criterion_score(p, criterion, benchmark, dataset, metric))
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Sample;
    use crate::ingest::default_qt_prefixes;
    use crate::splitter::HeadTailSplit;

    fn dataset() -> Dataset {
        let samples = vec![
            Sample::new("1", "q", vec![], vec![("yes".into(), 8), ("no".into(), 2)]).unwrap(),
            Sample::new("2", "q", vec![], vec![("no".into(), 10)]).unwrap(),
            Sample::new("3", "q", vec![], vec![("two".into(), 6), ("three".into(), 4)]).unwrap(),
            Sample::new("4", "q", vec![], vec![("red".into(), 10)]).unwrap(),
        ];
        Dataset::new(samples, default_qt_prefixes()).unwrap()
    }

    fn preds(pairs: &[(&str, &str)]) -> PredictionSet {
        PredictionSet::from_pairs(pairs.iter().map(|(i, a)| (i.to_string(), a.to_string()))).unwrap()
    }

    fn ids(list: &[&str]) -> Vec<String> {
        list.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn perfect_predictions_score_one() {
        let ds = dataset();
        let p = preds(&[("1", "yes"), ("2", "no"), ("3", "two"), ("4", "Red")]);
        let s = score_split(&p, &ids(&["1", "2", "3", "4"]), &ds, Metric::Exact).unwrap();
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.missing, 0);
    }

    #[test]
    fn soft_score_two_of_ten() {
        let ds = dataset();
        let p = preds(&[("1", "no")]);
        let s = score_split(&p, &ids(&["1"]), &ds, Metric::VqaSoft).unwrap();
        assert!((s.accuracy - 2.0 / 3.0).abs() < 1e-12);
        let p = preds(&[("3", "three")]);
        assert_eq!(score_split(&p, &ids(&["3"]), &ds, Metric::VqaSoft).unwrap().accuracy, 1.0);
        assert_eq!(score_split(&p, &ids(&["3"]), &ds, Metric::Exact).unwrap().accuracy, 0.0);
    }

    #[test]
    fn coverage_rules() {
        let ds = dataset();
        let p = preds(&[("1", "yes"), ("4", "red"), ("zzz", "anything")]);
        let s = score_split(&p, &ids(&["1", "2"]), &ds, Metric::Exact).unwrap();
        assert_eq!(s.accuracy, 0.5);
        assert_eq!(s.missing, 1);
        assert!(matches!(score_split(&p, &[], &ds, Metric::Exact), Err(Error::EmptySplit)));
    }

    #[test]
    fn duplicate_prediction_rejected() {
        let r = PredictionSet::from_pairs(vec![("1".into(), "a".into()), ("1".into(), "b".into())]);
        assert!(matches!(r, Err(Error::DuplicateId(_))));
    }

    fn benchmark() -> BenchmarkSplits {
        let mut test: Vec<HeadTailSplit> = ShortcutKind::ALL.iter().map(|&k| HeadTailSplit::empty(k)).collect();
        test[0].head_ids = ids(&["1", "2"]);
        test[0].tail_ids = ids(&["3"]);
        test[1].tail_ids = ids(&["4"]);
        let mut val: Vec<HeadTailSplit> = ShortcutKind::ALL.iter().map(|&k| HeadTailSplit::empty(k)).collect();
        val[0].tail_ids = ids(&["2"]);
        BenchmarkSplits {
            seed: 0,
            train_ids: vec![],
            val_ids: ids(&["1", "2"]),
            iid_test_ids: ids(&["1", "2", "3", "4"]),
            train: ShortcutKind::ALL.iter().map(|&k| HeadTailSplit::empty(k)).collect(),
            test,
            val,
        }
    }

    #[test]
    fn report_for_perfect_and_constant_predictors() {
        let ds = dataset();
        let b = benchmark();
        let perfect = preds(&[("1", "yes"), ("2", "no"), ("3", "two"), ("4", "red")]);
        let r = full_report(&perfect, &b, &ds, Metric::Exact).unwrap();
        assert_eq!(r.iid_accuracy, 1.0);
        assert_eq!(r.mean_ood, Some(1.0));
        assert_eq!(r.gap, Some(0.0));
        assert!(r.shortcuts[2].acc_tail.is_none());

        let yes = preds(&[("1", "yes"), ("2", "yes"), ("3", "yes"), ("4", "yes")]);
        let r = full_report(&yes, &b, &ds, Metric::Exact).unwrap();
        assert_eq!(r.iid_accuracy, 0.25);
        assert_eq!(r.mean_ood, Some(0.0));
        assert_eq!(r.shortcuts[0].acc_head, Some(0.5));
    }

    #[test]
    fn checkpoint_selection() {
        let ds = dataset();
        let b = benchmark();
        let weak = preds(&[("1", "yes")]);
        let strong = preds(&[("1", "yes"), ("2", "no")]);
        assert_eq!(select_checkpoint(std::slice::from_ref(&weak), Criterion::IidVal, &b, &ds, Metric::Exact).unwrap(), 0);
        assert_eq!(
            select_checkpoint(&[weak.clone(), strong.clone()], Criterion::IidVal, &b, &ds, Metric::Exact).unwrap(),
            1
        );
        assert_eq!(
            select_checkpoint(&[strong.clone(), strong.clone()], Criterion::OodVal, &b, &ds, Metric::Exact).unwrap(),
            0
        );
        let mut no_val = b.clone();
        no_val.val.iter_mut().for_each(|ht| ht.tail_ids.clear());
        assert!(matches!(
            select_checkpoint(&[strong], Criterion::OodVal, &no_val, &ds, Metric::Exact),
            Err(Error::MissingSplit(_))
        ));
    }

    #[test]
    fn partition_merge_matches_whole() {
        let ds = dataset();
        let p = preds(&[("1", "no"), ("2", "no"), ("3", "three")]);
        let all = ids(&["1", "2", "3", "4"]);
        for metric in [Metric::Exact, Metric::VqaSoft] {
            let whole = score_split(&p, &all, &ds, metric).unwrap().accuracy;
            let a = score_split(&p, &all[..1], &ds, metric).unwrap().accuracy;
            let b = score_split(&p, &all[1..], &ds, metric).unwrap().accuracy;
            assert!((whole - (a * 1.0 + b * 3.0) / 4.0).abs() < 1e-12);
        }
    }
}
