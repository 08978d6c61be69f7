//! Random partition, concept grouping, entropy-based imbalance detection and
//! head/tail carving.
//!
//! Within one split, samples sharing a concept key form a group. A group is
//! imbalanced when the normalized entropy of its answer histogram,
//! `H / ln M` over its `M` distinct answers, is below the entropy threshold.
//! In an imbalanced group an answer class is rare when its count is below
//! `rare_factor * (group size / M)`; rare-class samples form the tail, the
//! rest the head. Tails of all imbalanced groups make up a shortcut's OOD set.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::concept_key::ConceptKey;
use crate::concepts::ConceptTable;
use crate::domain::ShortcutKind;
use crate::error::{Error, Result};
use crate::ingest::Dataset;

pub const DEFAULT_ENTROPY_THRESHOLD: f64 = 0.9;
pub const DEFAULT_RARE_FACTOR: f64 = 1.2;

const RATIO_TOLERANCE: f64 = 1e-9;
// fixed-point scale for the rare-class comparison
const FACTOR_SCALE: f64 = 1e6;

/// Seeded generator behind every shuffle and draw: ChaCha8 seeded from a
/// 64-bit integer.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.05,
            test: 0.25,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let r = SplitRatios { train, val, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let SplitRatios { train, val, test } = *self;
        let positive = [train, val, test].iter().all(|r| r.is_finite() && *r > 0.0);
        if !positive || (train + val + test - 1.0).abs() > RATIO_TOLERANCE {
            return Err(Error::InvalidRatios(train, val, test));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub entropy: f64,
    pub rare_factor: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            entropy: DEFAULT_ENTROPY_THRESHOLD,
            rare_factor: DEFAULT_RARE_FACTOR,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(self.entropy.is_finite() && self.entropy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "entropy threshold must be positive, got {}",
                self.entropy
            )));
        }
        if !(self.rare_factor.is_finite() && self.rare_factor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "rare-answer factor must be positive, got {}",
                self.rare_factor
            )));
        }
        Ok(())
    }
}

/// `floor(ratio * n)`, robust to representation error in `ratio`.
fn portion(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Fisher–Yates shuffle of the sorted sample ids, then consecutive slices of
/// `floor(train * N)`, `floor(val * N)` and the remainder.
pub fn partition_dataset(
    dataset: &Dataset,
    ratios: SplitRatios,
    seed: u64,
) -> Result<(Vec<String>, Vec<String>, Vec<String>)> {
    ratios.validate()?;
    let n = dataset.len();
    if n < 3 {
        return Err(Error::TooFewSamples(n));
    }
    let mut ids: Vec<String> = dataset.samples().iter().map(|s| s.id().to_string()).collect();
    ids.sort_unstable();
    let mut rng = seeded_rng(seed);
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        ids.swap(i, j);
    }
    let n_train = portion(ratios.train, n);
    let n_val = portion(ratios.val, n);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    Ok((ids, val, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub shortcut: ShortcutKind,
    pub key: ConceptKey,
    /// (sample id, primary answer) in split order.
    members: Vec<(String, String)>,
    pub answer_hist: BTreeMap<String, u64>,
    pub entropy_norm: f64,
}

impl Group {
    pub fn new(
        shortcut: ShortcutKind,
        key: ConceptKey,
        members: Vec<(String, String)>,
    ) -> Self {
        let mut answer_hist = BTreeMap::new();
        for (_, a) in &members {
            *answer_hist.entry(a.clone()).or_insert(0) += 1;
        }
        let entropy_norm = normalized_entropy(answer_hist.values().copied());
        Group {
            shortcut,
            key,
            members,
            answer_hist,
            entropy_norm,
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn member_ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|(id, _)| id.as_str())
    }

    pub fn members(&self) -> &[(String, String)] {
        &self.members
    }

    /// Most frequent answer, ties lexicographic.
    pub fn modal_answer(&self) -> Option<&str> {
        modal(&self.answer_hist)
    }
}

pub(crate) fn modal(hist: &BTreeMap<String, u64>) -> Option<&str> {
    // BTreeMap iterates lexicographically; max_by keeps the last maximum
    hist.iter()
        .rev()
        .max_by_key(|(_, c)| **c)
        .map(|(a, _)| a.as_str())
}

/// Shannon entropy of a histogram divided by `ln M`, `M` being the number of
/// non-zero classes. A single class gives 0; a uniform histogram over two
/// or more classes gives exactly 1.
pub fn normalized_entropy(counts: impl IntoIterator<Item = u64>) -> f64 {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let m = counts.len();
    if m <= 1 {
        return 0.0;
    }
    if counts.iter().all(|&c| c == counts[0]) {
        return 1.0;
    }
    let total: u64 = counts.iter().sum();
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    (h / (m as f64).ln()).clamp(0.0, 1.0)
}

pub fn group_entropy(group: &Group) -> f64 {
    normalized_entropy(group.answer_hist.values().copied())
}

/// Groups the samples of one split by their concept for `shortcut`.
/// Samples without that concept are skipped. Groups come out in key order.
pub fn group_by_concept(
    split_ids: &[String],
    concepts: &ConceptTable,
    shortcut: ShortcutKind,
    dataset: &Dataset,
) -> Result<Vec<Group>> {
    let mut by_key: BTreeMap<&ConceptKey, Vec<(String, String)>> = BTreeMap::new();
    for id in split_ids {
        let vector = concepts
            .get(id)
            .ok_or_else(|| Error::MissingConcepts(id.clone()))?;
        let sample = dataset
            .get(id)
            .ok_or_else(|| Error::UnknownSymbol(id.clone()))?;
        if let Some(key) = vector.get(shortcut) {
            by_key
                .entry(key)
                .or_default()
                .push((id.clone(), sample.primary_answer().to_string()));
        }
    }
    Ok(by_key
        .into_iter()
        .map(|(key, members)| Group::new(shortcut, key.clone(), members))
        .collect())
}

/// Keys of groups whose normalized entropy is strictly below `threshold`.
pub fn flag_imbalanced(groups: &[Group], threshold: f64) -> BTreeSet<ConceptKey> {
    groups
        .iter()
        .filter(|g| g.entropy_norm < threshold)
        .map(|g| g.key.clone())
        .collect()
}

/// Answer classes of `group` counted as rare: count < factor * size / M.
/// Single-class groups have no rare class.
pub fn rare_answers(group: &Group, rare_factor: f64) -> BTreeSet<&str> {
    let m = group.answer_hist.len() as u128;
    if m <= 1 {
        return BTreeSet::new();
    }
    let scaled_factor = (rare_factor * FACTOR_SCALE).round() as u128;
    let scale = FACTOR_SCALE as u128;
    let n = group.len() as u128;
    group
        .answer_hist
        .iter()
        .filter(|(_, &c)| c as u128 * m * scale < scaled_factor * n)
        .map(|(a, _)| a.as_str())
        .collect()
}

/// Head and tail sample ids of an imbalanced group, in split order.
pub fn split_head_tail(group: &Group, thresholds: &Thresholds) -> Result<(Vec<String>, Vec<String>)> {
    if group.entropy_norm >= thresholds.entropy {
        return Err(Error::NotImbalanced(group.key.to_string()));
    }
    let rare = rare_answers(group, thresholds.rare_factor);
    let (tail, head): (Vec<_>, Vec<_>) = group
        .members
        .iter()
        .partition(|(_, a)| rare.contains(a.as_str()));
    Ok((
        head.into_iter().map(|(id, _)| id.clone()).collect(),
        tail.into_iter().map(|(id, _)| id.clone()).collect(),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTailSplit {
    pub shortcut: ShortcutKind,
    pub head_ids: Vec<String>,
    pub tail_ids: Vec<String>,
    pub imbalanced_keys: BTreeSet<ConceptKey>,
    pub n_groups: usize,
}

impl HeadTailSplit {
    pub fn empty(shortcut: ShortcutKind) -> Self {
        HeadTailSplit {
            shortcut,
            head_ids: Vec::new(),
            tail_ids: Vec::new(),
            imbalanced_keys: BTreeSet::new(),
            n_groups: 0,
        }
    }
}

/// Groups, flags and splits one copy of the data for one shortcut.
pub fn carve(
    split_ids: &[String],
    concepts: &ConceptTable,
    shortcut: ShortcutKind,
    dataset: &Dataset,
    thresholds: &Thresholds,
) -> Result<(Vec<Group>, HeadTailSplit)> {
    let groups = group_by_concept(split_ids, concepts, shortcut, dataset)?;
    let imbalanced_keys = flag_imbalanced(&groups, thresholds.entropy);
    let mut out = HeadTailSplit {
        shortcut,
        imbalanced_keys,
        n_groups: groups.len(),
        ..HeadTailSplit::empty(shortcut)
    };
    for g in groups.iter().filter(|g| out.imbalanced_keys.contains(&g.key)) {
        let (head, tail) = split_head_tail(g, thresholds)?;
        out.head_ids.extend(head);
        out.tail_ids.extend(tail);
    }
    Ok((groups, out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSplits {
    pub seed: u64,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    pub iid_test_ids: Vec<String>,
    /// Per shortcut, in [`ShortcutKind::ALL`] order. Test tails are the OOD
    /// test sets.
    pub test: Vec<HeadTailSplit>,
    pub train: Vec<HeadTailSplit>,
    /// Carved from the validation split, for OOD-val model selection.
    pub val: Vec<HeadTailSplit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCopy {
    Train,
    Val,
    Test,
}

impl BenchmarkSplits {
    pub fn copy(&self, copy: SplitCopy) -> &[HeadTailSplit] {
        match copy {
            SplitCopy::Train => &self.train,
            SplitCopy::Val => &self.val,
            SplitCopy::Test => &self.test,
        }
    }

    pub fn ids(&self, copy: SplitCopy) -> &[String] {
        match copy {
            SplitCopy::Train => &self.train_ids,
            SplitCopy::Val => &self.val_ids,
            SplitCopy::Test => &self.iid_test_ids,
        }
    }

    pub fn headtail(&self, copy: SplitCopy, shortcut: ShortcutKind) -> &HeadTailSplit {
        &self.copy(copy)[shortcut.index()]
    }

    pub fn ood_set(&self, shortcut: ShortcutKind) -> &[String] {
        &self.test[shortcut.index()].tail_ids
    }

    pub fn stats(&self) -> SplitStats {
        SplitStats {
            seed: self.seed,
            train: self.train_ids.len(),
            val: self.val_ids.len(),
            iid_test: self.iid_test_ids.len(),
            shortcuts: ShortcutKind::ALL
                .iter()
                .map(|&k| {
                    let tr = self.headtail(SplitCopy::Train, k);
                    let te = self.headtail(SplitCopy::Test, k);
                    ShortcutStats {
                        shortcut: k,
                        train_groups: tr.n_groups,
                        train_imbalanced: tr.imbalanced_keys.len(),
                        train_head: tr.head_ids.len(),
                        train_tail: tr.tail_ids.len(),
                        test_groups: te.n_groups,
                        test_imbalanced: te.imbalanced_keys.len(),
                        test_head: te.head_ids.len(),
                        test_tail: te.tail_ids.len(),
                    }
                })
                .collect(),
        }
    }
}

/// Split sizes and per-shortcut group and head/tail counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub seed: u64,
    pub train: usize,
    pub val: usize,
    pub iid_test: usize,
    pub shortcuts: Vec<ShortcutStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShortcutStats {
    pub shortcut: ShortcutKind,
    pub train_groups: usize,
    pub train_imbalanced: usize,
    pub train_head: usize,
    pub train_tail: usize,
    pub test_groups: usize,
    pub test_imbalanced: usize,
    pub test_head: usize,
    pub test_tail: usize,
}

pub fn assemble_benchmark(
    dataset: &Dataset,
    concepts: &ConceptTable,
    ratios: SplitRatios,
    seed: u64,
    thresholds: &Thresholds,
) -> Result<BenchmarkSplits> {
    thresholds.validate()?;
    let (train_ids, val_ids, iid_test_ids) = partition_dataset(dataset, ratios, seed)?;
    let copies = [
        (SplitCopy::Train, &train_ids),
        (SplitCopy::Val, &val_ids),
        (SplitCopy::Test, &iid_test_ids),
    ];
    let jobs: Vec<(SplitCopy, &Vec<String>, ShortcutKind)> = copies
        .iter()
        .flat_map(|&(c, ids)| ShortcutKind::ALL.into_iter().map(move |k| (c, ids, k)))
        .collect();
    let carved = jobs
        .par_iter()
        .map(|&(c, ids, k)| carve(ids, concepts, k, dataset, thresholds).map(|(_, ht)| (c, ht)))
        .collect::<Result<Vec<_>>>()?;
    let take = |copy: SplitCopy| -> Vec<HeadTailSplit> {
        carved
            .iter()
            .filter(|(c, _)| *c == copy)
            .map(|(_, ht)| ht.clone())
            .collect()
    };
    Ok(BenchmarkSplits {
        seed,
        train: take(SplitCopy::Train),
        val: take(SplitCopy::Val),
        test: take(SplitCopy::Test),
        train_ids,
        val_ids,
        iid_test_ids,
    })
}

/// Draws `floor(head_fraction * total)` head ids and the remainder from the
/// tail, uniformly without replacement. Head draws come first.
pub fn compose_training_mix(
    split: &HeadTailSplit,
    head_fraction: f64,
    total: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if !(0.0..=1.0).contains(&head_fraction) {
        return Err(Error::InvalidConfig(format!(
            "head fraction must lie in [0, 1], got {head_fraction}"
        )));
    }
    let n_head = portion(head_fraction, total);
    let n_tail = total - n_head;
    for (needed, available) in [(n_head, split.head_ids.len()), (n_tail, split.tail_ids.len())] {
        if needed > available {
            return Err(Error::InsufficientSamples { needed, available });
        }
    }
    let mut rng = seeded_rng(seed);
    let mut draw = |pool: &[String], k: usize| -> Vec<String> {
        let mut pool = pool.to_vec();
        pool.sort_unstable();
        let (picked, _) = pool.partial_shuffle(&mut rng, k);
        picked.to_vec()
    };
    let mut out = draw(&split.head_ids, n_head);
    out.extend(draw(&split.tail_ids, n_tail));
    Ok(out)
}
