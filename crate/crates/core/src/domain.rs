//! Domain types shared by every pipeline stage.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::concept_key::ConceptKey;
use crate::error::{Error, Result};

/// Lowercases, strips surrounding punctuation and collapses internal
/// whitespace. Idempotent.
pub fn canonicalize_answer(raw: &str) -> Result<String> {
    let lowered = raw.to_lowercase();
    let trimmed = lowered.trim_matches(|c: char| c.is_whitespace() || c.is_ascii_punctuation());
    let collapsed = trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
    if collapsed.is_empty() {
        return Err(Error::InvalidAnswer(raw.to_string()));
    }
    Ok(collapsed)
}

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    id: String,
    question: String,
    question_type: Option<String>,
    objects: BTreeSet<String>,
    answers: Vec<(String, u32)>,
    primary_answer: String,
}

impl Sample {
    /// Builds a sample from already-canonical answers. Repeated answer
    /// strings are merged by summing their counts, keeping first position.
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        objects: impl IntoIterator<Item = String>,
        answers: impl IntoIterator<Item = (String, u32)>,
    ) -> Result<Self> {
        let id = id.into();
        let mut merged: Vec<(String, u32)> = Vec::new();
        for (answer, count) in answers {
            if count == 0 || answer.is_empty() {
                return Err(Error::InvalidAnswer(answer));
            }
            match merged.iter_mut().find(|(a, _)| *a == answer) {
                Some((_, c)) => *c += count,
                None => merged.push((answer, count)),
            }
        }
        let primary_answer = merged
            .iter()
            .max_by(|(a1, c1), (a2, c2)| c1.cmp(c2).then_with(|| a2.cmp(a1)))
            .map(|(a, _)| a.clone())
            .ok_or_else(|| Error::InvalidAnswer(format!("sample {id} has no answers")))?;
        Ok(Sample {
            id,
            question: question.into(),
            question_type: None,
            objects: objects
                .into_iter()
                .map(|o| o.trim().to_string())
                .filter(|o| !o.is_empty())
                .collect(),
            answers: merged,
            primary_answer,
        })
    }

    /// Attaches an annotated question type, which takes precedence over
    /// prefix extraction.
    pub fn with_question_type(mut self, question_type: Option<String>) -> Self {
        self.question_type = question_type
            .map(|qt| qt.trim().to_lowercase())
            .filter(|qt| !qt.is_empty());
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn question(&self) -> &str {
        &self.question
    }

    pub fn question_type(&self) -> Option<&str> {
        self.question_type.as_deref()
    }

    pub fn objects(&self) -> &BTreeSet<String> {
        &self.objects
    }

    pub fn answers(&self) -> &[(String, u32)] {
        &self.answers
    }

    pub fn primary_answer(&self) -> &str {
        &self.primary_answer
    }

    /// Number of annotators who gave `answer`, zero if none.
    pub fn annotator_count(&self, answer: &str) -> u32 {
        self.answers
            .iter()
            .find(|(a, _)| a == answer)
            .map_or(0, |(_, c)| *c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ShortcutKind {
    Qt,
    Kw,
    Kwp,
    QtKw,
    Ko,
    Kop,
    QtKo,
    KwKo,
    QtKwKo,
}

impl ShortcutKind {
    pub const ALL: [ShortcutKind; 9] = [
        ShortcutKind::Qt,
        ShortcutKind::Kw,
        ShortcutKind::Kwp,
        ShortcutKind::QtKw,
        ShortcutKind::Ko,
        ShortcutKind::Kop,
        ShortcutKind::QtKo,
        ShortcutKind::KwKo,
        ShortcutKind::QtKwKo,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Display name, e.g. `QT+KW`.
    pub fn name(self) -> &'static str {
        match self {
            ShortcutKind::Qt => "QT",
            ShortcutKind::Kw => "KW",
            ShortcutKind::Kwp => "KWP",
            ShortcutKind::QtKw => "QT+KW",
            ShortcutKind::Ko => "KO",
            ShortcutKind::Kop => "KOP",
            ShortcutKind::QtKo => "QT+KO",
            ShortcutKind::KwKo => "KW+KO",
            ShortcutKind::QtKwKo => "QT+KW+KO",
        }
    }

    /// File-name-safe form, e.g. `QT_KW`.
    pub fn file_stem(self) -> &'static str {
        match self {
            ShortcutKind::Qt => "QT",
            ShortcutKind::Kw => "KW",
            ShortcutKind::Kwp => "KWP",
            ShortcutKind::QtKw => "QT_KW",
            ShortcutKind::Ko => "KO",
            ShortcutKind::Kop => "KOP",
            ShortcutKind::QtKo => "QT_KO",
            ShortcutKind::KwKo => "KW_KO",
            ShortcutKind::QtKwKo => "QT_KW_KO",
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            ShortcutKind::Qt | ShortcutKind::Kw | ShortcutKind::Kwp | ShortcutKind::QtKw => {
                Modality::Language
            }
            ShortcutKind::Ko | ShortcutKind::Kop => Modality::Visual,
            ShortcutKind::QtKo | ShortcutKind::KwKo | ShortcutKind::QtKwKo => Modality::Multi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Modality {
    Language,
    Visual,
    Multi,
}

impl fmt::Display for ShortcutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShortcutKind {
    type Err = Error;

    /// Accepts both `QT+KW` and `QT_KW`, case-insensitively.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_uppercase().replace('_', "+");
        ShortcutKind::ALL
            .into_iter()
            .find(|k| k.name() == norm)
            .ok_or_else(|| Error::UnknownSymbol(s.to_string()))
    }
}

impl Serialize for ShortcutKind {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ShortcutKind {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The nine concept keys assigned to one sample; `None` where the sample
/// lacks the parts for that shortcut.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConceptVector([Option<ConceptKey>; 9]);

impl ConceptVector {
    pub fn get(&self, kind: ShortcutKind) -> Option<&ConceptKey> {
        self.0[kind.index()].as_ref()
    }

    pub fn set(&mut self, kind: ShortcutKind, key: Option<ConceptKey>) {
        self.0[kind.index()] = key;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ShortcutKind, Option<&ConceptKey>)> {
        ShortcutKind::ALL.into_iter().map(|k| (k, self.get(k)))
    }
}

impl Serialize for ConceptVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(9))?;
        for (kind, key) in self.iter() {
            map.serialize_entry(kind.name(), &key)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ConceptVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw: std::collections::HashMap<ShortcutKind, Option<String>> =
            Deserialize::deserialize(deserializer)?;
        let mut out = ConceptVector::default();
        for (kind, key) in raw {
            let key = key
                .map(ConceptKey::from_encoded)
                .transpose()
                .map_err(serde::de::Error::custom)?;
            out.set(kind, key);
        }
        Ok(out)
    }
}
