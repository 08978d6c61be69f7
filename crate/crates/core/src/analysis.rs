//! Dataset diagnostics over built splits: head-set overlap between
//! shortcuts, OOD-set coincidence, training imbalance degree and
//! per-concept answer distributions.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;

use serde::Serialize;

use crate::concept_key::ConceptKey;
use crate::domain::ShortcutKind;
use crate::error::{Error, Result};
use crate::splitter::Group;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Jaccard,
    Coincidence,
}

/// 9×9 matrix indexed by [`ShortcutKind::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub kind: SimilarityKind,
    values: [[f64; 9]; 9],
}

impl SimilarityMatrix {
    pub fn get(&self, row: ShortcutKind, col: ShortcutKind) -> f64 {
        self.values[row.index()][col.index()]
    }

    /// Header `shortcut,QT,KW,...` then one row per shortcut; six decimals.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["shortcut"];
        header.extend(ShortcutKind::ALL.iter().map(|k| k.name()));
        w.write_record(&header).map_err(csv_err)?;
        for row in ShortcutKind::ALL {
            let mut rec = vec![row.name().to_string()];
            rec.extend(ShortcutKind::ALL.iter().map(|&c| format!("{:.6}", self.get(row, c))));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::format("<csv>", e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::format("<csv>", e)
}

fn id_sets(sets: &[Vec<String>; 9]) -> Vec<HashSet<&str>> {
    sets.iter()
        .map(|s| s.iter().map(String::as_str).collect())
        .collect()
}

/// |X ∩ Y| / |X ∪ Y| over the training head sets; 0 when both are empty.
pub fn jaccard_head_similarity(train_heads: &[Vec<String>; 9]) -> SimilarityMatrix {
    let sets = id_sets(train_heads);
    let mut values = [[0.0; 9]; 9];
    for i in 0..9 {
        for j in i..9 {
            let inter = sets[i].intersection(&sets[j]).count();
            let union = sets[i].len() + sets[j].len() - inter;
            let v = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    SimilarityMatrix {
        kind: SimilarityKind::Jaccard,
        values,
    }
}

/// Entry (x, y) = |X ∩ Y| / |Y|: the share of OOD set Y also in X.
/// 0 when Y is empty.
pub fn coincidence_matrix(ood_sets: &[Vec<String>; 9]) -> SimilarityMatrix {
    let sets = id_sets(ood_sets);
    let mut values = [[0.0; 9]; 9];
    for (i, x) in sets.iter().enumerate() {
        for (j, y) in sets.iter().enumerate() {
            values[i][j] = if y.is_empty() {
                0.0
            } else {
                x.intersection(y).count() as f64 / y.len() as f64
            };
        }
    }
    SimilarityMatrix {
        kind: SimilarityKind::Coincidence,
        values,
    }
}

/// Σ entropy_norm(G) · |G| / Σ|G| over one shortcut's training groups.
pub fn imbalance_degree(groups: &[Group]) -> Result<f64> {
    let total: usize = groups.iter().map(Group::len).sum();
    if total == 0 {
        return Err(Error::UndefinedDegree);
    }
    Ok(groups
        .iter()
        .map(|g| g.entropy_norm * g.len() as f64 / total as f64)
        .sum())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DistributionRow {
    pub answer: String,
    pub train_count: u64,
    pub ood_count: u64,
}

/// Joins the training and OOD answer histograms of one concept. Rows are
/// ordered by descending training count, then answer. OOD-only answers
/// follow with a training count of 0.
pub fn export_distribution(
    key: &ConceptKey,
    train_groups: &[Group],
    ood_groups: &[Group],
) -> Result<Vec<DistributionRow>> {
    fn find<'g>(groups: &'g [Group], key: &ConceptKey) -> Option<&'g BTreeMap<String, u64>> {
        groups.iter().find(|g| &g.key == key).map(|g| &g.answer_hist)
    }
    let train = find(train_groups, key).ok_or_else(|| Error::UnknownKey(key.to_string()))?;
    let empty = BTreeMap::new();
    let ood = find(ood_groups, key).unwrap_or(&empty);
    let mut rows: Vec<DistributionRow> = train
        .keys()
        .chain(ood.keys().filter(|a| !train.contains_key(*a)))
        .map(|a| DistributionRow {
            answer: a.clone(),
            train_count: train.get(a).copied().unwrap_or(0),
            ood_count: ood.get(a).copied().unwrap_or(0),
        })
        .collect();
    rows.sort_by(|a, b| {
        b.train_count
            .cmp(&a.train_count)
            .then_with(|| a.answer.cmp(&b.answer))
    });
    Ok(rows)
}

pub fn write_distribution_csv<W: Write>(rows: &[DistributionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["answer", "train_count", "ood_count"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.answer.clone(), r.train_count.to_string(), r.ood_count.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::format("<csv>", e))
}
