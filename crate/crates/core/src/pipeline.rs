//! End-to-end run: label → split → stats, with a digest manifest.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::artifacts::{write_json, write_splits, write_stats};
use crate::concepts::label_dataset;
use crate::error::{Error, Result};
use crate::evaluator::Metric;
use crate::ingest::{default_qt_prefixes, parse_generic, read_qt_prefixes};
use crate::splitter::{assemble_benchmark, SplitRatios, Thresholds};

pub const SEED_ENV: &str = "SHORTCUT_SPLITS_SEED";
pub const MANIFEST_FILE: &str = "manifest.json";

fn default_top_k() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub qt_prefixes: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ratios: SplitRatios,
    #[serde(default)]
    pub thresholds: Thresholds,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub metric: Metric,
    /// Distribution exports per shortcut.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

impl RunConfig {
    pub fn new(input: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        RunConfig {
            input: input.into(),
            qt_prefixes: None,
            seed: 0,
            ratios: SplitRatios::default(),
            thresholds: Thresholds::default(),
            out_dir: out_dir.into(),
            metric: Metric::default(),
            top_k: default_top_k(),
        }
    }

    /// Reads a TOML config. Relative paths resolve against the config's
    /// directory.
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::format(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.input);
        resolve(&mut cfg.out_dir);
        if let Some(p) = cfg.qt_prefixes.as_mut() {
            resolve(p);
        }
        Ok(cfg)
    }

    /// Applies `SHORTCUT_SPLITS_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{SEED_ENV}={raw:?} is not a u64")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.ratios.validate()?;
        self.thresholds.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub ratios: SplitRatios,
    pub thresholds: Thresholds,
    pub metric: Metric,
    pub top_k: usize,
    pub input: FileDigest,
    pub artifacts: Vec<FileDigest>,
}

pub fn digest_file(path: &Path, label: String) -> Result<FileDigest> {
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut bytes = 0u64;
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        bytes += n as u64;
    }
    Ok(FileDigest {
        path: label,
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// Runs label, split and stats into `config.out_dir`:
///
/// ```text
/// concepts.jsonl
/// splits/   id manifests and stats.json
/// stats/    csv exports
/// manifest.json
/// ```
pub fn run_pipeline(config: &RunConfig) -> Result<Manifest> {
    config.validate()?;
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let prefixes = match &config.qt_prefixes {
        Some(p) => read_qt_prefixes(p).map_err(Error::in_stage("ingest"))?,
        None => default_qt_prefixes(),
    };
    let dataset = parse_generic(&config.input, prefixes).map_err(Error::in_stage("ingest"))?;
    log::info!("ingested {} samples", dataset.len());

    let concepts = label_dataset(&dataset).map_err(Error::in_stage("label"))?;
    let concepts_path = out.join("concepts.jsonl");
    concepts.write(&concepts_path).map_err(Error::in_stage("label"))?;

    let benchmark = assemble_benchmark(
        &dataset,
        &concepts,
        config.ratios,
        config.seed,
        &config.thresholds,
    )
    .map_err(Error::in_stage("split"))?;
    let mut written = vec![concepts_path];
    written.extend(write_splits(&out.join("splits"), &benchmark).map_err(Error::in_stage("split"))?);
    written.extend(
        write_stats(&out.join("stats"), &dataset, &concepts, &benchmark, config.top_k)
            .map_err(Error::in_stage("stats"))?,
    );

    let mut artifacts = written
        .iter()
        .map(|p| {
            let rel = p.strip_prefix(out).unwrap_or(p);
            digest_file(p, rel.to_string_lossy().replace('\\', "/"))
        })
        .collect::<Result<Vec<_>>>()
        .map_err(Error::in_stage("manifest"))?;
    artifacts.sort_by(|a, b| a.path.cmp(&b.path));
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        ratios: config.ratios,
        thresholds: config.thresholds,
        metric: config.metric,
        top_k: config.top_k,
        input: digest_file(&config.input, config.input.to_string_lossy().into_owned())
            .map_err(Error::in_stage("manifest"))?,
        artifacts,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest).map_err(Error::in_stage("manifest"))?;
    Ok(manifest)
}
