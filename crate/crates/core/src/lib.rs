//! Shortcut-aware out-of-distribution benchmark construction for
//! multimodal question-answering corpora.
//!
//! The pipeline labels each sample with nine shortcut concepts chosen by
//! mutual information, partitions the corpus, groups samples by concept,
//! flags groups whose answer distribution has low normalized entropy and
//! carves their rare-answer samples into per-shortcut OOD test sets.

pub mod analysis;
pub mod artifacts;
pub mod concept_key;
pub mod concepts;
pub mod domain;
pub mod error;
pub mod evaluator;
pub mod ingest;
pub mod pipeline;
pub mod splitter;
pub mod synthlab;

pub use concept_key::{decode_concept, encode_concept, ConceptKey};
pub use domain::{canonicalize_answer, ConceptVector, Sample, ShortcutKind};
pub use error::{Error, Result};
pub use ingest::Dataset;
