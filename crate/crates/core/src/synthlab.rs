//! Synthetic corpora with planted concept → answer shortcuts, and the
//! frequency-oracle predictor that answers with the modal training answer
//! of a sample's concept.
//!
//! A synthetic question is `what qt<i> kw<a> mod<b> f<..>...`: a question
//! type prefix, a key word, a modifier word and filler words. Images carry
//! distinct `obj<k>` labels. At generation time each shortcut's concept is
//! read off this layout (first key word, first object, ...), and every
//! concept has a canonical answer given by a seeded hash. Samples carry
//! their question type as an annotation, so the corpus labels the same way
//! whatever prefix list is loaded alongside it.

use std::collections::{BTreeMap, HashMap};

use rand::distributions::WeightedIndex;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concept_key::ConceptKey;
use crate::concepts::ConceptTable;
use crate::domain::{Sample, ShortcutKind};
use crate::error::{Error, Result};
use crate::evaluator::PredictionSet;
use crate::ingest::Dataset;
use crate::splitter::modal;

/// Order in which planted shortcuts claim a sample's answer: multi-modal,
/// then visual, then language; composites before their parts.
pub const PLANT_PRIORITY: [ShortcutKind; 9] = [
    ShortcutKind::QtKwKo,
    ShortcutKind::KwKo,
    ShortcutKind::QtKo,
    ShortcutKind::Kop,
    ShortcutKind::Ko,
    ShortcutKind::QtKw,
    ShortcutKind::Kwp,
    ShortcutKind::Kw,
    ShortcutKind::Qt,
];

const ANNOTATORS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub n_question_types: usize,
    pub keyword_vocab_size: usize,
    pub modifier_vocab_size: usize,
    pub filler_vocab_size: usize,
    pub object_vocab_size: usize,
    pub n_answers: usize,
    /// Zipf exponent of the answer prior for unplanted samples; 0 is uniform.
    pub answer_skew: f64,
    pub planted_strength: BTreeMap<ShortcutKind, f64>,
    /// Words after the question-type prefix, inclusive range: a key word,
    /// then a modifier, then fillers.
    pub question_length: (usize, usize),
    pub objects_per_image: (usize, usize),
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_samples: 10_000,
            n_question_types: 8,
            keyword_vocab_size: 60,
            modifier_vocab_size: 40,
            filler_vocab_size: 12,
            object_vocab_size: 30,
            n_answers: 10,
            answer_skew: 0.0,
            planted_strength: BTreeMap::new(),
            question_length: (3, 6),
            objects_per_image: (0, 4),
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_strength(mut self, kind: ShortcutKind, strength: f64) -> Self {
        self.planted_strength.insert(kind, strength);
        self
    }

    pub fn strength(&self, kind: ShortcutKind) -> f64 {
        self.planted_strength.get(&kind).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in [
            ("n_question_types", self.n_question_types),
            ("keyword_vocab_size", self.keyword_vocab_size),
            ("modifier_vocab_size", self.modifier_vocab_size),
            ("filler_vocab_size", self.filler_vocab_size),
            ("object_vocab_size", self.object_vocab_size),
            ("n_answers", self.n_answers),
        ] {
            if v < 2 {
                return bad(format!("{name} must be at least 2, got {v}"));
            }
        }
        if let Some((k, s)) = self
            .planted_strength
            .iter()
            .find(|(_, s)| !(0.0..=1.0).contains(*s))
        {
            return bad(format!("strength for {k} must lie in [0, 1], got {s}"));
        }
        if !(self.answer_skew.is_finite() && self.answer_skew >= 0.0) {
            return bad(format!("answer_skew must be finite and non-negative, got {}", self.answer_skew));
        }
        let (qmin, qmax) = self.question_length;
        if qmin < 1 || qmin > qmax {
            return bad(format!("invalid question_length range ({qmin}, {qmax})"));
        }
        let (omin, omax) = self.objects_per_image;
        if omin > omax || omax > self.object_vocab_size {
            return bad(format!("invalid objects_per_image range ({omin}, {omax})"));
        }
        Ok(())
    }

    pub fn qt_prefixes(&self) -> Vec<String> {
        (0..self.n_question_types).map(|i| format!("what qt{i}")).collect()
    }
}

/// Generated corpus plus, per sample, the shortcut whose planting decided
/// its answer (`None` when the answer was drawn from the prior).
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    pub planted_by: Vec<Option<ShortcutKind>>,
}

/// Canonical answer index of a generation-time concept.
pub fn canonical_answer(seed: u64, kind: ShortcutKind, parts: &[&str], n_answers: usize) -> usize {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(kind.name().as_bytes());
    for p in parts {
        h.update([0x1f]);
        h.update(p.as_bytes());
    }
    let digest = h.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) % n_answers as u64) as usize
}

/// Generation-time concept parts; `None` where the layout lacks them.
fn layout_parts<'a>(
    kind: ShortcutKind,
    qt: &'a str,
    keys: &'a [String],
    objects: &'a [String],
) -> Option<Vec<&'a str>> {
    let k1 = keys.first().map(String::as_str);
    let k2 = keys.get(1).map(String::as_str);
    let o1 = objects.first().map(String::as_str);
    let o2 = objects.get(1).map(String::as_str);
    let all = |parts: &[Option<&'a str>]| parts.iter().copied().collect::<Option<Vec<_>>>();
    match kind {
        ShortcutKind::Qt => all(&[Some(qt)]),
        ShortcutKind::Kw => all(&[k1]),
        ShortcutKind::Kwp => all(&[k1, k2]),
        ShortcutKind::QtKw => all(&[Some(qt), k1]),
        ShortcutKind::Ko => all(&[o1]),
        ShortcutKind::Kop => all(&[o1, o2]),
        ShortcutKind::QtKo => all(&[Some(qt), o1]),
        ShortcutKind::KwKo => all(&[k1, o1]),
        ShortcutKind::QtKwKo => all(&[Some(qt), k1, o1]),
    }
}

fn answer_prior(config: &SynthConfig) -> WeightedIndex<f64> {
    let weights = (1..=config.n_answers).map(|r| (r as f64).powf(-config.answer_skew));
    WeightedIndex::new(weights).expect("validated config has positive weights")
}

fn generate_one(
    config: &SynthConfig,
    prior: &WeightedIndex<f64>,
    index: usize,
) -> (Sample, Option<ShortcutKind>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);

    let qt = format!("what qt{}", rng.gen_range(0..config.n_question_types));
    let len = rng.gen_range(config.question_length.0..=config.question_length.1);
    let mut keys = vec![format!("kw{}", rng.gen_range(0..config.keyword_vocab_size))];
    if len >= 2 {
        keys.push(format!("mod{}", rng.gen_range(0..config.modifier_vocab_size)));
    }
    let fillers: Vec<String> = (keys.len()..len)
        .map(|_| format!("f{}", rng.gen_range(0..config.filler_vocab_size)))
        .collect();
    let n_obj = rng.gen_range(config.objects_per_image.0..=config.objects_per_image.1);
    let objects: Vec<String> = sample_indices(&mut rng, config.object_vocab_size, n_obj)
        .into_iter()
        .map(|k| format!("obj{k}"))
        .collect();

    let mut planted_by = None;
    let mut answer = None;
    for kind in PLANT_PRIORITY {
        let strength = config.strength(kind);
        if strength <= 0.0 {
            continue;
        }
        let Some(parts) = layout_parts(kind, &qt, &keys, &objects) else {
            continue;
        };
        if rng.gen_bool(strength) {
            answer = Some(canonical_answer(config.seed, kind, &parts, config.n_answers));
            planted_by = Some(kind);
            break;
        }
    }
    let answer = answer.unwrap_or_else(|| rng.sample(prior));

    let question = std::iter::once(qt.as_str())
        .chain(keys.iter().map(String::as_str))
        .chain(fillers.iter().map(String::as_str))
        .collect::<Vec<_>>()
        .join(" ");
    let sample = Sample::new(
        format!("syn{index:07}"),
        question,
        objects,
        vec![(format!("ans{answer}"), ANNOTATORS)],
    )
    .expect("synthetic samples are well-formed")
    .with_question_type(Some(qt));
    (sample, planted_by)
}

/// Each sample is drawn from its own ChaCha8 stream (`seed`, stream = index),
/// so output is independent of thread count.
pub fn generate_synthetic_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let prior = answer_prior(config);
    let (samples, planted_by): (Vec<Sample>, Vec<Option<ShortcutKind>>) = (0..config.n_samples)
        .into_par_iter()
        .map(|i| generate_one(config, &prior, i))
        .unzip();
    Ok(SynthCorpus {
        dataset: Dataset::new(samples, config.qt_prefixes())?,
        planted_by,
    })
}

pub fn generate_synthetic(config: &SynthConfig) -> Result<Dataset> {
    generate_synthetic_corpus(config).map(|c| c.dataset)
}

/// Predicts the modal training answer of a sample's concept for one
/// shortcut, falling back to the corpus-wide modal training answer.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyOracle {
    pub shortcut: ShortcutKind,
    table: HashMap<ConceptKey, String>,
    pub fallback: String,
}

impl FrequencyOracle {
    pub fn lookup(&self, key: Option<&ConceptKey>) -> &str {
        key.and_then(|k| self.table.get(k))
            .map_or(self.fallback.as_str(), String::as_str)
    }

    pub fn predict(&self, id: &str, concepts: &ConceptTable) -> &str {
        self.lookup(concepts.get(id).and_then(|v| v.get(self.shortcut)))
    }

    pub fn predict_ids<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a String>,
        concepts: &ConceptTable,
    ) -> Result<PredictionSet> {
        PredictionSet::from_pairs(
            ids.into_iter()
                .map(|id| (id.clone(), self.predict(id, concepts).to_string())),
        )
    }

    pub fn n_keys(&self) -> usize {
        self.table.len()
    }
}

pub fn frequency_oracle(
    train_ids: &[String],
    dataset: &Dataset,
    concepts: &ConceptTable,
    shortcut: ShortcutKind,
) -> Result<FrequencyOracle> {
    if train_ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut per_key: HashMap<&ConceptKey, BTreeMap<String, u64>> = HashMap::new();
    let mut overall: BTreeMap<String, u64> = BTreeMap::new();
    for id in train_ids {
        let sample = dataset
            .get(id)
            .ok_or_else(|| Error::UnknownSymbol(id.clone()))?;
        let answer = sample.primary_answer();
        *overall.entry(answer.to_string()).or_default() += 1;
        let vector = concepts
            .get(id)
            .ok_or_else(|| Error::MissingConcepts(id.clone()))?;
        if let Some(key) = vector.get(shortcut) {
            *per_key
                .entry(key)
                .or_default()
                .entry(answer.to_string())
                .or_default() += 1;
        }
    }
    let table = per_key
        .into_iter()
        .map(|(k, hist)| (k.clone(), modal(&hist).unwrap_or_default().to_string()))
        .collect();
    Ok(FrequencyOracle {
        shortcut,
        table,
        fallback: modal(&overall).unwrap_or_default().to_string(),
    })
}
