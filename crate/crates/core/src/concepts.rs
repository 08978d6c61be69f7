//! Corpus-wide co-occurrence counts and mutual-information concept
//! assignment for the nine shortcut kinds.
//!
//! For a token `t` (keyword or object label) and answer `a`:
//!
//! ```text
//! MI(t, a) = ln( f(t, a) / (f(t) * f(a) / K) )
//! ```
//!
//! where `f(.)` counts samples, not occurrences, and `K` is the corpus size.
//! Within one sample the answer is fixed, so ranking tokens by MI is the same
//! as ranking by `f(t, a) / f(t)`. Selection compares those ratios exactly in
//! integer arithmetic; the floating-point MI is only reported.

use std::collections::HashMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_key::{encode_concept, ConceptKey};
use crate::domain::{ConceptVector, Sample, ShortcutKind};
use crate::error::{Error, Result};
use crate::ingest::{normalize_tokens, Dataset, QtMatcher, UNKNOWN_QT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Word,
    Object,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CountTables {
    total: u64,
    words: HashMap<String, u64>,
    objects: HashMap<String, u64>,
    answers: HashMap<String, u64>,
    word_answer: HashMap<(String, String), u64>,
    object_answer: HashMap<(String, String), u64>,
}

impl CountTables {
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn answer_count(&self, answer: &str) -> u64 {
        self.answers.get(answer).copied().unwrap_or(0)
    }

    pub fn token_count(&self, token: &str, modality: Modality) -> u64 {
        let table = match modality {
            Modality::Word => &self.words,
            Modality::Object => &self.objects,
        };
        table.get(token).copied().unwrap_or(0)
    }

    pub fn joint_count(&self, token: &str, answer: &str, modality: Modality) -> u64 {
        let table = match modality {
            Modality::Word => &self.word_answer,
            Modality::Object => &self.object_answer,
        };
        // TODO: avoid the two allocations per lookup with a borrowed-pair key
        table
            .get(&(token.to_string(), answer.to_string()))
            .copied()
            .unwrap_or(0)
    }

    pub fn answers(&self) -> impl Iterator<Item = (&str, u64)> {
        self.answers.iter().map(|(a, c)| (a.as_str(), *c))
    }

    fn add_sample(&mut self, keywords: &[String], sample: &Sample) {
        let answer = sample.primary_answer();
        self.total += 1;
        *self.answers.entry(answer.to_string()).or_default() += 1;
        for w in keywords {
            *self.words.entry(w.clone()).or_default() += 1;
            *self
                .word_answer
                .entry((w.clone(), answer.to_string()))
                .or_default() += 1;
        }
        for o in sample.objects() {
            *self.objects.entry(o.clone()).or_default() += 1;
            *self
                .object_answer
                .entry((o.clone(), answer.to_string()))
                .or_default() += 1;
        }
    }

    /// Adds another partial table into this one. Associative and commutative.
    pub fn merge(mut self, other: CountTables) -> CountTables {
        fn add<K: std::hash::Hash + Eq>(into: &mut HashMap<K, u64>, from: HashMap<K, u64>) {
            for (k, v) in from {
                *into.entry(k).or_default() += v;
            }
        }
        self.total += other.total;
        add(&mut self.words, other.words);
        add(&mut self.objects, other.objects);
        add(&mut self.answers, other.answers);
        add(&mut self.word_answer, other.word_answer);
        add(&mut self.object_answer, other.object_answer);
        self
    }
}

/// Question tokens after removing the question-type prefix, deduplicated
/// keeping first position.
pub fn tokenize_keywords(question: &str, qt_concept: &str) -> Vec<String> {
    let tokens = normalize_tokens(question);
    strip_qt(tokens, qt_concept)
}

fn strip_qt(tokens: Vec<String>, qt_concept: &str) -> Vec<String> {
    let skip = if qt_concept == UNKNOWN_QT {
        0
    } else {
        let qt_tokens = normalize_tokens(qt_concept);
        if tokens.starts_with(&qt_tokens) {
            qt_tokens.len()
        } else {
            0
        }
    };
    let mut seen = std::collections::HashSet::new();
    tokens
        .into_iter()
        .skip(skip)
        .filter(|t| seen.insert(t.clone()))
        .collect()
}

fn question_type(sample: &Sample, matcher: &QtMatcher, tokens: &[String]) -> String {
    match sample.question_type() {
        Some(qt) => qt.to_string(),
        None => matcher.question_type(tokens),
    }
}

/// Question type and eligible keywords of a sample.
fn sample_keywords(sample: &Sample, matcher: &QtMatcher) -> (String, Vec<String>) {
    let tokens = normalize_tokens(sample.question());
    let qt = question_type(sample, matcher, &tokens);
    let keywords = strip_qt(tokens, &qt);
    (qt, keywords)
}

pub fn build_count_tables(dataset: &Dataset) -> Result<CountTables> {
    if dataset.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let matcher = QtMatcher::new(dataset.qt_prefixes());
    let tables = dataset
        .samples()
        .par_chunks(4096)
        .map(|chunk| {
            let mut t = CountTables::default();
            for s in chunk {
                let (_, keywords) = sample_keywords(s, &matcher);
                t.add_sample(&keywords, s);
            }
            t
        })
        .reduce(CountTables::default, CountTables::merge);
    Ok(tables)
}

pub fn mutual_information(
    tables: &CountTables,
    token: &str,
    answer: &str,
    modality: Modality,
) -> Result<f64> {
    let ft = tables.token_count(token, modality);
    if ft == 0 {
        return Err(Error::UnknownSymbol(token.to_string()));
    }
    let fa = tables.answer_count(answer);
    if fa == 0 {
        return Err(Error::UnknownSymbol(answer.to_string()));
    }
    let joint = tables.joint_count(token, answer, modality);
    if joint == 0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok((joint as f64 * tables.total as f64 / (ft as f64 * fa as f64)).ln())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiScore {
    pub value: f64,
    pub token: String,
    pub rank: usize,
    joint: u64,
    marginal: u64,
}

/// Ranks `tokens` (in candidate order) by MI with `answer`, descending.
/// Equal MI keeps candidate order.
fn rank_tokens<'a>(
    tables: &CountTables,
    tokens: impl Iterator<Item = &'a String>,
    answer: &str,
    modality: Modality,
) -> Result<Vec<MiScore>> {
    let mut scores = tokens
        .map(|t| {
            let value = mutual_information(tables, t, answer, modality)?;
            Ok(MiScore {
                value,
                token: t.clone(),
                rank: 0,
                joint: tables.joint_count(t, answer, modality),
                marginal: tables.token_count(t, modality),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    // joint_a / marginal_a > joint_b / marginal_b, exactly
    scores.sort_by(|a, b| {
        let lhs = a.joint as u128 * b.marginal as u128;
        let rhs = b.joint as u128 * a.marginal as u128;
        rhs.cmp(&lhs)
    });
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    Ok(scores)
}

/// Eligible keywords of a sample ranked by MI with its primary answer.
/// Ties keep question order.
pub fn rank_keywords(sample: &Sample, tables: &CountTables, qt_prefixes: &[String]) -> Result<Vec<MiScore>> {
    let (_, keywords) = sample_keywords(sample, &QtMatcher::new(qt_prefixes));
    rank_tokens(tables, keywords.iter(), sample.primary_answer(), Modality::Word)
}

/// Object labels of a sample ranked by MI with its primary answer.
/// Ties are broken lexicographically.
pub fn rank_objects(sample: &Sample, tables: &CountTables) -> Result<Vec<MiScore>> {
    rank_tokens(tables, sample.objects().iter(), sample.primary_answer(), Modality::Object)
}

pub fn assign_concepts(
    sample: &Sample,
    tables: &CountTables,
    qt_prefixes: &[String],
) -> Result<ConceptVector> {
    assign_with_matcher(sample, tables, &QtMatcher::new(qt_prefixes))
}

fn assign_with_matcher(
    sample: &Sample,
    tables: &CountTables,
    matcher: &QtMatcher,
) -> Result<ConceptVector> {
    let answer = sample.primary_answer();
    if tables.answer_count(answer) == 0 {
        return Err(Error::UnknownSymbol(answer.to_string()));
    }
    let (qt, keywords) = sample_keywords(sample, matcher);
    let words = rank_tokens(tables, keywords.iter(), answer, Modality::Word)?;
    let objects = rank_tokens(tables, sample.objects().iter(), answer, Modality::Object)?;

    let kw = words.first().map(|s| s.token.as_str());
    let kwp = (words.len() >= 2).then(|| [words[0].token.as_str(), words[1].token.as_str()]);
    let ko = objects.first().map(|s| s.token.as_str());
    let kop = (objects.len() >= 2).then(|| [objects[0].token.as_str(), objects[1].token.as_str()]);

    let key = |parts: Option<Vec<&str>>| -> Result<Option<ConceptKey>> {
        parts.map(|p| encode_concept(&p)).transpose()
    };
    let mut v = ConceptVector::default();
    v.set(ShortcutKind::Qt, key(Some(vec![qt.as_str()]))?);
    v.set(ShortcutKind::Kw, key(kw.map(|w| vec![w]))?);
    v.set(ShortcutKind::Kwp, key(kwp.map(|p| p.to_vec()))?);
    v.set(ShortcutKind::QtKw, key(kw.map(|w| vec![qt.as_str(), w]))?);
    v.set(ShortcutKind::Ko, key(ko.map(|o| vec![o]))?);
    v.set(ShortcutKind::Kop, key(kop.map(|p| p.to_vec()))?);
    v.set(ShortcutKind::QtKo, key(ko.map(|o| vec![qt.as_str(), o]))?);
    v.set(ShortcutKind::KwKo, key(kw.zip(ko).map(|(w, o)| vec![w, o]))?);
    v.set(
        ShortcutKind::QtKwKo,
        key(kw.zip(ko).map(|(w, o)| vec![qt.as_str(), w, o]))?,
    );
    Ok(v)
}

/// Concept vectors for every sample, in dataset order.
pub fn assign_all(dataset: &Dataset, tables: &CountTables) -> Result<Vec<ConceptVector>> {
    let matcher = QtMatcher::new(dataset.qt_prefixes());
    dataset
        .samples()
        .par_iter()
        .map(|s| assign_with_matcher(s, tables, &matcher))
        .collect()
}

/// Builds count tables over the whole dataset and labels every sample.
pub fn label_dataset(dataset: &Dataset) -> Result<ConceptTable> {
    let tables = build_count_tables(dataset)?;
    let vectors = assign_all(dataset, &tables)?;
    Ok(ConceptTable::from_pairs(
        dataset
            .samples()
            .iter()
            .map(|s| s.id().to_string())
            .zip(vectors),
    ))
}

/// Sample id → concept vector, keeping insertion order for output.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConceptTable {
    ids: Vec<String>,
    vectors: HashMap<String, ConceptVector>,
}

#[derive(Serialize, Deserialize)]
struct ConceptRecord {
    id: String,
    concepts: ConceptVector,
}

impl ConceptTable {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, ConceptVector)>) -> Self {
        let mut table = ConceptTable::default();
        for (id, v) in pairs {
            if table.vectors.insert(id.clone(), v).is_none() {
                table.ids.push(id);
            }
        }
        table
    }

    pub fn get(&self, id: &str) -> Option<&ConceptVector> {
        self.vectors.get(id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ConceptVector)> {
        self.ids.iter().map(|id| (id.as_str(), &self.vectors[id]))
    }

    /// Line-delimited `{"id": .., "concepts": {"QT": .., ..}}` records;
    /// absent concepts are `null`.
    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (id, v) in self.iter() {
            serde_json::to_writer(
                &mut *out,
                &ConceptRecord {
                    id: id.to_string(),
                    concepts: v.clone(),
                },
            )?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: ConceptRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            pairs.push((rec.id, rec.concepts));
        }
        Ok(ConceptTable::from_pairs(pairs))
    }
}
