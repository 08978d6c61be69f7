//! On-disk layout of split manifests and statistics exports.
//!
//! A splits directory holds plain-text id manifests, one id per line:
//!
//! ```text
//! train.ids  val.ids  iid_test.ids
//! {S}.head.ids        {S}.tail.ids          test copy; tails are the OOD sets
//! train.{S}.head.ids  train.{S}.tail.ids
//! val.{S}.head.ids    val.{S}.tail.ids
//! stats.json
//! ```
//!
//! where `{S}` is a shortcut's file stem (`QT`, `QT_KW`, ...).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::analysis::{
    coincidence_matrix, export_distribution, imbalance_degree, jaccard_head_similarity,
    write_distribution_csv,
};
use crate::concepts::ConceptTable;
use crate::domain::ShortcutKind;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::splitter::{group_by_concept, BenchmarkSplits, HeadTailSplit, SplitCopy, SplitStats};

pub const STATS_FILE: &str = "stats.json";

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn finish(mut out: BufWriter<fs::File>, path: &Path) -> Result<()> {
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ids(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = create(path)?;
    for id in ids {
        writeln!(out, "{id}").map_err(|e| Error::io(path, e))?;
    }
    finish(out, path)
}

pub fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::format(path, e))?;
    out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    finish(out, path)
}

fn headtail_names(copy: SplitCopy, kind: ShortcutKind) -> (String, String) {
    let prefix = match copy {
        SplitCopy::Test => "",
        SplitCopy::Train => "train.",
        SplitCopy::Val => "val.",
    };
    let stem = kind.file_stem();
    (
        format!("{prefix}{stem}.head.ids"),
        format!("{prefix}{stem}.tail.ids"),
    )
}

/// Writes every manifest plus `stats.json`; returns the written paths.
pub fn write_splits(dir: &Path, benchmark: &BenchmarkSplits) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, ids) in [
        ("train.ids", &benchmark.train_ids),
        ("val.ids", &benchmark.val_ids),
        ("iid_test.ids", &benchmark.iid_test_ids),
    ] {
        let path = dir.join(name);
        write_ids(&path, ids)?;
        written.push(path);
    }
    for copy in [SplitCopy::Test, SplitCopy::Train, SplitCopy::Val] {
        for ht in benchmark.copy(copy) {
            let (head, tail) = headtail_names(copy, ht.shortcut);
            for (name, ids) in [(head, &ht.head_ids), (tail, &ht.tail_ids)] {
                let path = dir.join(name);
                write_ids(&path, ids)?;
                written.push(path);
            }
        }
    }
    let path = dir.join(STATS_FILE);
    write_json(&path, &benchmark.stats())?;
    written.push(path);
    Ok(written)
}

/// Loads a splits directory. Imbalanced-key sets are not stored on disk and
/// come back empty; group counts come from `stats.json` when present.
pub fn read_splits(dir: &Path) -> Result<BenchmarkSplits> {
    let stats: Option<SplitStats> = {
        let path = dir.join(STATS_FILE);
        if path.exists() {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Some(serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?)
        } else {
            None
        }
    };
    let load_copy = |copy: SplitCopy| -> Result<Vec<HeadTailSplit>> {
        ShortcutKind::ALL
            .iter()
            .map(|&k| {
                let (head, tail) = headtail_names(copy, k);
                let n_groups = stats.as_ref().map_or(0, |s| {
                    let row = &s.shortcuts[k.index()];
                    match copy {
                        SplitCopy::Train => row.train_groups,
                        SplitCopy::Test => row.test_groups,
                        SplitCopy::Val => 0,
                    }
                });
                Ok(HeadTailSplit {
                    head_ids: read_ids(&dir.join(head))?,
                    tail_ids: read_ids(&dir.join(tail))?,
                    n_groups,
                    ..HeadTailSplit::empty(k)
                })
            })
            .collect()
    };
    Ok(BenchmarkSplits {
        seed: stats.as_ref().map_or(0, |s| s.seed),
        train_ids: read_ids(&dir.join("train.ids"))?,
        val_ids: read_ids(&dir.join("val.ids"))?,
        iid_test_ids: read_ids(&dir.join("iid_test.ids"))?,
        test: load_copy(SplitCopy::Test)?,
        train: load_copy(SplitCopy::Train)?,
        val: load_copy(SplitCopy::Val)?,
    })
}

fn per_kind<F: Fn(&HeadTailSplit) -> &Vec<String>>(splits: &[HeadTailSplit], f: F) -> [Vec<String>; 9] {
    let mut out: [Vec<String>; 9] = Default::default();
    for ht in splits {
        out[ht.shortcut.index()] = f(ht).clone();
    }
    out
}

/// Writes `jaccard.csv`, `coincidence.csv`, `imbalance.csv`,
/// `distributions.csv` and the per-concept files it indexes under
/// `distributions/`. Up to `top_k` concepts per shortcut are exported: the
/// test-imbalanced keys with the largest OOD share, ties by key.
pub fn write_stats(
    dir: &Path,
    dataset: &Dataset,
    concepts: &ConceptTable,
    benchmark: &BenchmarkSplits,
    top_k: usize,
) -> Result<Vec<PathBuf>> {
    let dist_dir = dir.join("distributions");
    fs::create_dir_all(&dist_dir).map_err(|e| Error::io(&dist_dir, e))?;
    let mut written = Vec::new();

    let path = dir.join("jaccard.csv");
    jaccard_head_similarity(&per_kind(&benchmark.train, |ht| &ht.head_ids))
        .write_csv(create(&path)?)?;
    written.push(path);

    let path = dir.join("coincidence.csv");
    coincidence_matrix(&per_kind(&benchmark.test, |ht| &ht.tail_ids)).write_csv(create(&path)?)?;
    written.push(path);

    let imbalance_path = dir.join("imbalance.csv");
    let mut imbalance = csv::Writer::from_writer(create(&imbalance_path)?);
    imbalance
        .write_record(["shortcut", "imbalance_degree", "train_groups", "train_samples"])
        .map_err(|e| Error::format(&imbalance_path, e))?;

    let index_path = dir.join("distributions.csv");
    let mut index = csv::Writer::from_writer(create(&index_path)?);
    index
        .write_record(["shortcut", "rank", "key", "file"])
        .map_err(|e| Error::format(&index_path, e))?;

    for kind in ShortcutKind::ALL {
        let train_groups = group_by_concept(&benchmark.train_ids, concepts, kind, dataset)?;
        let degree = match imbalance_degree(&train_groups) {
            Ok(e) => format!("{e:.6}"),
            Err(Error::UndefinedDegree) => "NA".to_string(),
            Err(e) => return Err(e),
        };
        let samples: usize = train_groups.iter().map(|g| g.len()).sum();
        imbalance
            .write_record([
                kind.name().to_string(),
                degree,
                train_groups.len().to_string(),
                samples.to_string(),
            ])
            .map_err(|e| Error::format(&imbalance_path, e))?;

        let ood_groups = group_by_concept(benchmark.ood_set(kind), concepts, kind, dataset)?;
        let mut ranked: Vec<_> = ood_groups.iter().collect();
        ranked.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.key.cmp(&b.key)));
        let mut rank = 0;
        for g in ranked {
            if rank == top_k {
                break;
            }
            let rows = match export_distribution(&g.key, &train_groups, &ood_groups) {
                Ok(rows) => rows,
                Err(Error::UnknownKey(_)) => continue,
                Err(e) => return Err(e),
            };
            rank += 1;
            let name = format!("{}_{rank}.csv", kind.file_stem());
            let path = dist_dir.join(&name);
            write_distribution_csv(&rows, create(&path)?)?;
            written.push(path);
            index
                .write_record([
                    kind.name().to_string(),
                    rank.to_string(),
                    g.key.to_string(),
                    format!("distributions/{name}"),
                ])
                .map_err(|e| Error::format(&index_path, e))?;
        }
    }
    imbalance.flush().map_err(|e| Error::io(&imbalance_path, e))?;
    index.flush().map_err(|e| Error::io(&index_path, e))?;
    written.push(imbalance_path);
    written.push(index_path);
    Ok(written)
}
