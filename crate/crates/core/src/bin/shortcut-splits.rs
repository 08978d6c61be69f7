use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shortcut_splits::artifacts::{read_splits, write_json, write_splits, write_stats};
use shortcut_splits::concepts::{label_dataset, ConceptTable};
use shortcut_splits::evaluator::{full_report, select_checkpoint, Criterion, Metric, PredictionSet};
use shortcut_splits::ingest::{adapt_vqa_v2, default_qt_prefixes, parse_generic, read_qt_prefixes, write_generic};
use shortcut_splits::pipeline::{run_pipeline, RunConfig, SEED_ENV};
use shortcut_splits::splitter::{assemble_benchmark, SplitRatios, Thresholds};
use shortcut_splits::synthlab::{frequency_oracle, generate_synthetic, SynthConfig};
use shortcut_splits::{Dataset, ShortcutKind};

#[derive(Parser, Debug)]
#[command(version, about = "Shortcut-aware OOD split construction and scoring")]
struct Cli {
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct PrefixArgs {
    /// Question-type prefix list, one per line (defaults to the 65 VQA v2 types).
    #[arg(long)]
    qt_prefixes: Option<PathBuf>,
}

impl PrefixArgs {
    fn load(&self) -> Result<Vec<String>> {
        match &self.qt_prefixes {
            Some(p) => Ok(read_qt_prefixes(p)?),
            None => Ok(default_qt_prefixes()),
        }
    }
}

#[derive(Args, Debug)]
struct ThresholdArgs {
    #[arg(long, default_value_t = 0.9)]
    entropy_threshold: f64,
    #[arg(long, default_value_t = 1.2)]
    rare_factor: f64,
    #[arg(long, default_value_t = 0.70)]
    train_ratio: f64,
    #[arg(long, default_value_t = 0.05)]
    val_ratio: f64,
    #[arg(long, default_value_t = 0.25)]
    test_ratio: f64,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Thresholds {
        Thresholds {
            entropy: self.entropy_threshold,
            rare_factor: self.rare_factor,
        }
    }

    fn ratios(&self) -> Result<SplitRatios> {
        Ok(SplitRatios::new(self.train_ratio, self.val_ratio, self.test_ratio)?)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Normalize a generic or VQA v2 corpus into the generic line format.
    Ingest {
        #[arg(long, conflicts_with_all = ["vqa_questions", "vqa_annotations"])]
        input: Option<PathBuf>,
        #[arg(long, num_args = 1..)]
        vqa_questions: Vec<PathBuf>,
        #[arg(long, num_args = 1..)]
        vqa_annotations: Vec<PathBuf>,
        #[arg(long)]
        vqa_objects: Option<PathBuf>,
        #[command(flatten)]
        prefixes: PrefixArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assign the nine shortcut concepts to every sample.
    Label {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        prefixes: PrefixArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition and carve head/tail splits.
    Split {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        #[command(flatten)]
        prefixes: PrefixArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Similarity matrices, imbalance degrees and distribution exports.
    Stats {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[arg(long, default_value_t = 3)]
        top_k: usize,
        #[command(flatten)]
        prefixes: PrefixArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a prediction file.
    Eval {
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, default_value = "exact")]
        metric: Metric,
        #[command(flatten)]
        prefixes: PrefixArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the best of several prediction files by a selection criterion.
    Select {
        #[arg(long)]
        criterion: Criterion,
        #[arg(long, num_args = 1.., required = true)]
        pred: Vec<PathBuf>,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "exact")]
        metric: Metric,
        #[command(flatten)]
        prefixes: PrefixArgs,
    },
    /// Generate a synthetic corpus from a TOML config.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frequency-oracle predictions for one shortcut.
    Oracle {
        #[arg(long)]
        shortcut: ShortcutKind,
        #[arg(long)]
        splits: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        concepts: PathBuf,
        #[command(flatten)]
        prefixes: PrefixArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// label → split → stats from a TOML run config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

fn load_data(path: &Path, prefixes: &PrefixArgs) -> Result<Dataset> {
    parse_generic(path, prefixes.load()?).with_context(|| format!("reading {}", path.display()))
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    match cli.command {
        Command::Ingest {
            input,
            vqa_questions,
            vqa_annotations,
            vqa_objects,
            prefixes,
            out,
        } => {
            let dataset = match input {
                Some(path) => load_data(&path, &prefixes)?,
                None => {
                    if vqa_questions.is_empty() || vqa_annotations.is_empty() {
                        bail!("ingest needs --input or both --vqa-questions and --vqa-annotations");
                    }
                    let q: Vec<&Path> = vqa_questions.iter().map(PathBuf::as_path).collect();
                    let a: Vec<&Path> = vqa_annotations.iter().map(PathBuf::as_path).collect();
                    adapt_vqa_v2(&q, &a, vqa_objects.as_deref(), prefixes.load()?)?
                }
            };
            write_generic(&dataset, &out)?;
            eprintln!("wrote {} samples to {}", dataset.len(), out.display());
        }
        Command::Label { input, prefixes, out } => {
            let dataset = load_data(&input, &prefixes)?;
            label_dataset(&dataset).context("stage label")?.write(&out)?;
        }
        Command::Split {
            input,
            concepts,
            seed,
            thresholds,
            prefixes,
            out,
        } => {
            let dataset = load_data(&input, &prefixes)?;
            let concepts = ConceptTable::read(&concepts)?;
            let benchmark =
                assemble_benchmark(&dataset, &concepts, thresholds.ratios()?, seed, &thresholds.thresholds())
                    .context("stage split")?;
            write_splits(&out, &benchmark)?;
        }
        Command::Stats {
            splits,
            data,
            concepts,
            top_k,
            prefixes,
            out,
        } => {
            let dataset = load_data(&data, &prefixes)?;
            let concepts = ConceptTable::read(&concepts)?;
            let benchmark = read_splits(&splits)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write_stats(&out, &dataset, &concepts, &benchmark, top_k).context("stage stats")?;
        }
        Command::Eval {
            splits,
            data,
            pred,
            metric,
            prefixes,
            out,
        } => {
            let dataset = load_data(&data, &prefixes)?;
            let benchmark = read_splits(&splits)?;
            let predictions = PredictionSet::read(&pred)?;
            let report = full_report(&predictions, &benchmark, &dataset, metric)?;
            if report.iid_missing * 100 > benchmark.iid_test_ids.len() {
                log::warn!(
                    "{} of {} IID test ids have no prediction",
                    report.iid_missing,
                    benchmark.iid_test_ids.len()
                );
            }
            write_json(&out, &report)?;
        }
        Command::Select {
            criterion,
            pred,
            splits,
            data,
            metric,
            prefixes,
        } => {
            let dataset = load_data(&data, &prefixes)?;
            let benchmark = read_splits(&splits)?;
            let sets = pred
                .iter()
                .map(|p| PredictionSet::read(p))
                .collect::<Result<Vec<_>, _>>()?;
            let best = select_checkpoint(&sets, criterion, &benchmark, &dataset, metric)?;
            println!("{best}\t{}", pred[best].display());
        }
        Command::Synth { config, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg: SynthConfig = toml::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            let dataset = generate_synthetic(&cfg)?;
            write_generic(&dataset, &out)?;
        }
        Command::Oracle {
            shortcut,
            splits,
            data,
            concepts,
            prefixes,
            out,
        } => {
            let dataset = load_data(&data, &prefixes)?;
            let concepts = ConceptTable::read(&concepts)?;
            let benchmark = read_splits(&splits)?;
            let oracle = frequency_oracle(&benchmark.train_ids, &dataset, &concepts, shortcut)?;
            let ids: Vec<String> = dataset.samples().iter().map(|s| s.id().to_string()).collect();
            oracle.predict_ids(&ids, &concepts)?.write(&out)?;
        }
        Command::Run { config } => {
            let mut cfg = RunConfig::from_toml_file(&config)?;
            cfg.apply_env()?;
            let manifest = run_pipeline(&cfg)?;
            eprintln!(
                "wrote {} artifacts to {}",
                manifest.artifacts.len(),
                cfg.out_dir.display()
            );
        }
    }
    Ok(())
}
