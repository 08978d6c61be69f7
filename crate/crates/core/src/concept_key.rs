//! Injective encoding of ordered concept parts into a single string key.
//!
//! Parts are joined with `U+241F` (SYMBOL FOR UNIT SEPARATOR, `␟`). A part
//! containing the separator or the escape character `\` has those characters
//! prefixed with `\`, so decoding always recovers the original ordered parts.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SEPARATOR: char = '\u{241F}';
pub const ESCAPE: char = '\\';

/// A grouping key for one shortcut concept: a single token or an ordered
/// sequence of parts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptKey(String);

impl ConceptKey {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Wraps an already-encoded key, checking that it decodes.
    pub fn from_encoded(raw: impl Into<String>) -> Result<Self> {
        let key = ConceptKey(raw.into());
        key.try_parts()?;
        Ok(key)
    }

    pub fn parts(&self) -> Vec<String> {
        self.try_parts()
            .expect("ConceptKey is only constructed from valid encodings")
    }

    fn try_parts(&self) -> Result<Vec<String>> {
        decode_concept(&self.0)
    }
}

impl fmt::Display for ConceptKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub fn encode_concept<S: AsRef<str>>(parts: &[S]) -> Result<ConceptKey> {
    if parts.is_empty() {
        return Err(Error::InvalidConceptPart);
    }
    let mut out = String::new();
    for (i, part) in parts.iter().enumerate() {
        let part = part.as_ref();
        if part.is_empty() {
            return Err(Error::InvalidConceptPart);
        }
        if i > 0 {
            out.push(SEPARATOR);
        }
        for c in part.chars() {
            if c == SEPARATOR || c == ESCAPE {
                out.push(ESCAPE);
            }
            out.push(c);
        }
    }
    Ok(ConceptKey(out))
}

pub fn decode_concept(raw: &str) -> Result<Vec<String>> {
    let malformed = || Error::MalformedConceptKey(raw.to_string());
    let mut parts = Vec::new();
    let mut current = String::new();
    let mut chars = raw.chars();
    while let Some(c) = chars.next() {
        match c {
            ESCAPE => current.push(chars.next().ok_or_else(malformed)?),
            SEPARATOR => {
                if current.is_empty() {
                    return Err(malformed());
                }
                parts.push(std::mem::take(&mut current));
            }
            _ => current.push(c),
        }
    }
    if current.is_empty() {
        return Err(malformed());
    }
    parts.push(current);
    Ok(parts)
}
