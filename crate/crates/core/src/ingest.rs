//! Corpus ingestion: the line-delimited generic format, the VQA v2 adapter
//! and question-type extraction.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{canonicalize_answer, Sample};
use crate::error::{Error, Result};

/// Fallback question type for questions matching no prefix.
pub const UNKNOWN_QT: &str = "unknown";

/// The 65 VQA v2 question-type prefixes.
pub const DEFAULT_QT_PREFIXES: &str = include_str!("../data/qt_prefixes.txt");

const MAX_JOIN_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<Sample>,
    qt_prefixes: Vec<String>,
    matcher: QtMatcher,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, qt_prefixes: Vec<String>) -> Result<Self> {
        let qt_prefixes = normalize_prefixes(qt_prefixes)?;
        let mut index = HashMap::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            if index.insert(s.id().to_string(), i).is_some() {
                return Err(Error::DuplicateId(s.id().to_string()));
            }
        }
        let matcher = QtMatcher::new(&qt_prefixes);
        Ok(Dataset {
            samples,
            qt_prefixes,
            matcher,
            index,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn qt_prefixes(&self) -> &[String] {
        &self.qt_prefixes
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    /// Question type of a sample: its annotated type when present,
    /// otherwise the longest matching prefix.
    pub fn question_type(&self, sample: &Sample) -> String {
        match sample.question_type() {
            Some(qt) => qt.to_string(),
            None => self.matcher.question_type(&normalize_tokens(sample.question())),
        }
    }
}

fn normalize_prefixes(prefixes: Vec<String>) -> Result<Vec<String>> {
    let mut seen = HashSet::new();
    let out: Vec<String> = prefixes
        .into_iter()
        .map(|p| normalize_tokens(&p).join(" "))
        .filter(|p| !p.is_empty() && seen.insert(p.clone()))
        .collect();
    if out.is_empty() {
        return Err(Error::InvalidConfig(
            "question-type prefix list is empty".into(),
        ));
    }
    Ok(out)
}

pub fn default_qt_prefixes() -> Vec<String> {
    parse_prefix_list(DEFAULT_QT_PREFIXES)
}

fn parse_prefix_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

/// Reads a prefix list: one prefix per line, `#` comments allowed.
pub fn read_qt_prefixes(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_prefix_list(&text))
}

/// Lowercases and splits on whitespace and punctuation. Apostrophes and
/// hyphens inside a word are kept (`what's`, `t-shirt`).
pub fn normalize_tokens(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|t| t.trim_matches(|c| c == '\'' || c == '-'))
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Longest prefix matching the start of the question on word boundaries,
/// or [`UNKNOWN_QT`].
pub fn extract_question_type(question: &str, qt_prefixes: &[String]) -> String {
    QtMatcher::new(qt_prefixes).question_type(&normalize_tokens(question))
}

/// Pre-tokenized prefix list for repeated question-type extraction.
#[derive(Debug, Clone)]
pub struct QtMatcher {
    // sorted by token count descending, then lexicographically
    prefixes: Vec<(Vec<String>, String)>,
}

impl QtMatcher {
    pub fn new(qt_prefixes: &[String]) -> Self {
        let mut prefixes: Vec<(Vec<String>, String)> = qt_prefixes
            .iter()
            .map(|p| normalize_tokens(p))
            .filter(|t| !t.is_empty())
            .map(|t| {
                let joined = t.join(" ");
                (t, joined)
            })
            .collect();
        prefixes.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.1.cmp(&b.1)));
        prefixes.dedup_by(|a, b| a.1 == b.1);
        QtMatcher { prefixes }
    }

    /// `tokens` must come from [`normalize_tokens`].
    pub fn question_type(&self, tokens: &[String]) -> String {
        self.prefixes
            .iter()
            .find(|(ptoks, _)| tokens.starts_with(ptoks))
            .map_or_else(|| UNKNOWN_QT.to_string(), |(_, joined)| joined.clone())
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum IdField {
    Text(String),
    Number(u64),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AnswerEntry {
    Full { answer: String, count: u32 },
    Bare(String),
    Map(BTreeMap<String, u32>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum AnswersField {
    Single(String),
    List(Vec<AnswerEntry>),
}

#[derive(Debug, Deserialize)]
struct GenericRecordIn {
    id: IdField,
    question: String,
    #[serde(default)]
    objects: Vec<String>,
    answers: AnswersField,
    #[serde(default)]
    question_type: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnswerOut<'a> {
    answer: &'a str,
    count: u32,
}

#[derive(Debug, Serialize)]
struct GenericRecordOut<'a> {
    id: &'a str,
    question: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    question_type: Option<&'a str>,
    objects: Vec<&'a str>,
    answers: Vec<AnswerOut<'a>>,
}

fn parse_record(line: &str) -> std::result::Result<Sample, String> {
    let rec: GenericRecordIn = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let id = match rec.id {
        IdField::Text(s) => s,
        IdField::Number(n) => n.to_string(),
    };
    if id.is_empty() {
        return Err("empty id".into());
    }
    let raw: Vec<(String, u32)> = match rec.answers {
        AnswersField::Single(a) => vec![(a, 1)],
        AnswersField::List(entries) => entries
            .into_iter()
            .flat_map(|e| match e {
                AnswerEntry::Full { answer, count } => vec![(answer, count)],
                AnswerEntry::Bare(answer) => vec![(answer, 1)],
                AnswerEntry::Map(m) => m.into_iter().collect(),
            })
            .collect(),
    };
    let answers = raw
        .into_iter()
        .map(|(a, c)| canonicalize_answer(&a).map(|a| (a, c)))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    Sample::new(id, rec.question, rec.objects, answers)
        .map(|s| s.with_question_type(rec.question_type))
        .map_err(|e| e.to_string())
}

/// Parses the line-delimited generic corpus format. Blank lines are skipped.
pub fn parse_generic(path: &Path, qt_prefixes: Vec<String>) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_generic_str(&text, qt_prefixes)
}

pub fn parse_generic_str(text: &str, qt_prefixes: Vec<String>) -> Result<Dataset> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .collect();
    let parsed: Vec<_> = lines
        .par_iter()
        .map(|&(i, line)| parse_record(line).map_err(|message| (i + 1, message)))
        .collect();
    let mut samples = Vec::with_capacity(parsed.len());
    for result in parsed {
        match result {
            Ok(s) => samples.push(s),
            Err((line, message)) => return Err(Error::Parse { line, message }),
        }
    }
    Dataset::new(samples, qt_prefixes)
}

pub fn write_generic(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_generic_to(dataset, &mut out).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_generic_to<W: Write>(dataset: &Dataset, out: &mut W) -> std::io::Result<()> {
    for s in dataset.samples() {
        let rec = GenericRecordOut {
            id: s.id(),
            question: s.question(),
            question_type: s.question_type(),
            objects: s.objects().iter().map(String::as_str).collect(),
            answers: s
                .answers()
                .iter()
                .map(|(answer, count)| AnswerOut {
                    answer,
                    count: *count,
                })
                .collect(),
        };
        serde_json::to_writer(&mut *out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct VqaQuestions {
    questions: Vec<VqaQuestion>,
}

#[derive(Debug, Deserialize)]
struct VqaQuestion {
    question_id: u64,
    image_id: u64,
    question: String,
}

#[derive(Debug, Deserialize)]
struct VqaAnnotations {
    annotations: Vec<VqaAnnotation>,
}

#[derive(Debug, Deserialize)]
struct VqaAnnotation {
    question_id: u64,
    #[serde(default)]
    question_type: Option<String>,
    #[serde(default)]
    multiple_choice_answer: Option<String>,
    answers: Vec<VqaAnswer>,
}

#[derive(Debug, Deserialize)]
struct VqaAnswer {
    answer: String,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e))
}

/// Merges official VQA v2 question/annotation files (typically train and
/// val) with an image-id → object-category map into one dataset.
///
/// The object file is a JSON object keyed by image id. Images absent from it
/// get empty object labels. The multiple-choice answer is only used when no
/// annotator answer survives canonicalization.
pub fn adapt_vqa_v2(
    question_files: &[&Path],
    annotation_files: &[&Path],
    objects_file: Option<&Path>,
    qt_prefixes: Vec<String>,
) -> Result<Dataset> {
    let mut questions = Vec::new();
    for path in question_files {
        questions.extend(read_json::<VqaQuestions>(path)?.questions);
    }
    let mut annotations: HashMap<u64, VqaAnnotation> = HashMap::new();
    for path in annotation_files {
        for ann in read_json::<VqaAnnotations>(path)?.annotations {
            annotations.insert(ann.question_id, ann);
        }
    }
    let objects: HashMap<String, Vec<String>> = match objects_file {
        Some(path) => read_json(path)?,
        None => HashMap::new(),
    };

    let total = questions.len();
    let mut dropped = 0usize;
    let mut samples = Vec::with_capacity(total);
    for q in questions {
        let Some(ann) = annotations.get(&q.question_id) else {
            dropped += 1;
            continue;
        };
        let mut answers: Vec<(String, u32)> = Vec::new();
        for a in &ann.answers {
            if let Ok(c) = canonicalize_answer(&a.answer) {
                answers.push((c, 1));
            }
        }
        if answers.is_empty() {
            if let Some(Ok(mc)) = ann.multiple_choice_answer.as_deref().map(canonicalize_answer) {
                answers.push((mc, 1));
            }
        }
        if answers.is_empty() {
            dropped += 1;
            continue;
        }
        let labels = objects
            .get(&q.image_id.to_string())
            .cloned()
            .unwrap_or_default();
        let sample = Sample::new(q.question_id.to_string(), q.question, labels, answers)?
            .with_question_type(ann.question_type.clone());
        samples.push(sample);
    }
    if total == 0 || dropped as f64 / total as f64 > MAX_JOIN_FAILURE_RATE {
        return Err(Error::Join { dropped, total });
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} of {total} questions without a usable annotation");
    }
    Dataset::new(samples, qt_prefixes)
}
