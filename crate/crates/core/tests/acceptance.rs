//! Acceptance suite. Runs every criterion in order, prints one
//! `[PASS]` / `[FAIL]` / `[SKIP]` line each, and exits non-zero on any
//! failure. Built without the libtest harness so the lines always show.

mod common;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use shortcut_splits::analysis::imbalance_degree;
use shortcut_splits::concepts::{label_dataset, ConceptTable};
use shortcut_splits::evaluator::{score_split, Metric};
use shortcut_splits::ingest::{adapt_vqa_v2, default_qt_prefixes, write_generic};
use shortcut_splits::pipeline::{run_pipeline, RunConfig};
use shortcut_splits::splitter::{
    assemble_benchmark, compose_training_mix, group_by_concept, normalized_entropy, rare_answers,
    split_head_tail, BenchmarkSplits, Group, SplitCopy, SplitRatios, Thresholds,
};
use shortcut_splits::synthlab::{frequency_oracle, generate_synthetic_corpus, SynthConfig};
use shortcut_splits::{ConceptKey, Dataset, ShortcutKind};

type Outcome = Result<String, String>;
type Criterion = (&'static str, &'static str, fn() -> Option<Outcome>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || {
        format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64())
    })
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn group_of(hist: &[(&str, usize)]) -> Group {
    let mut members = Vec::new();
    for (answer, n) in hist {
        for i in 0..*n {
            members.push((format!("{answer}{i}"), answer.to_string()));
        }
    }
    Group::new(ShortcutKind::Kw, ConceptKey::from_encoded("k").unwrap(), members)
}

fn synth(cfg: SynthConfig) -> Result<(Dataset, ConceptTable, Vec<Option<ShortcutKind>>), String> {
    let corpus = ok(generate_synthetic_corpus(&cfg))?;
    let concepts = ok(label_dataset(&corpus.dataset))?;
    Ok((corpus.dataset, concepts, corpus.planted_by))
}

fn benchmark(dataset: &Dataset, concepts: &ConceptTable, seed: u64) -> Result<BenchmarkSplits, String> {
    ok(assemble_benchmark(dataset, concepts, SplitRatios::default(), seed, &Thresholds::default()))
}

/// Exact-match accuracies on the test tail and head of one shortcut for an
/// oracle trained on `train_ids`.
fn tail_head_accuracy(
    train_ids: &[String],
    dataset: &Dataset,
    concepts: &ConceptTable,
    bench: &BenchmarkSplits,
    kind: ShortcutKind,
) -> Result<(f64, f64), String> {
    let oracle = ok(frequency_oracle(train_ids, dataset, concepts, kind))?;
    let ht = bench.headtail(SplitCopy::Test, kind);
    let preds = ok(oracle.predict_ids(ht.tail_ids.iter().chain(&ht.head_ids), concepts))?;
    let tail = ok(score_split(&preds, &ht.tail_ids, dataset, Metric::Exact))?;
    let head = ok(score_split(&preds, &ht.head_ids, dataset, Metric::Exact))?;
    Ok((tail.accuracy, head.accuracy))
}

fn fmt_series(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ")
}

fn ac1_entropy() -> Outcome {
    let start = Instant::now();
    let e = normalized_entropy([2, 2]);
    ensure(e == 1.0, || format!("e({{a:2,b:2}}) = {e}"))?;
    let e = normalized_entropy([5]);
    ensure(e == 0.0, || format!("e({{a:5}}) = {e}"))?;
    let e = normalized_entropy([3, 1]);
    // -(3/4 ln 3/4 + 1/4 ln 1/4) / ln 2
    ensure((e - 0.8113).abs() <= 1e-4, || format!("e({{a:3,b:1}}) = {e}"))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok(format!("1.0 / 0 / {e:.4}"))
}

fn ac2_head_tail() -> Outcome {
    let start = Instant::now();
    let th = Thresholds::default();
    let g = group_of(&[("a", 10), ("b", 2)]);
    let (head, tail) = ok(split_head_tail(&g, &th))?;
    ensure(tail == ["b0", "b1"], || format!("tail of {{a:10,b:2}} = {tail:?}"))?;
    ensure(head.len() == 10, || format!("head size {}", head.len()))?;
    let g = group_of(&[("a", 100), ("b", 5), ("c", 3)]);
    let (_, tail) = ok(split_head_tail(&g, &th))?;
    ensure(tail.len() == 8, || format!("tail of {{a:100,b:5,c:3}} has {} samples", tail.len()))?;
    within(start.elapsed(), Duration::from_secs(1))?;
    Ok("tails {b0,b1} and 8 samples".into())
}

/// Small random corpus: tight vocabularies so groups repeat, random planted
/// shortcuts so some groups are imbalanced.
fn random_config(rng: &mut ChaCha8Rng, max_samples: usize) -> SynthConfig {
    let mut cfg = SynthConfig {
        n_samples: rng.gen_range(3..=max_samples),
        n_question_types: rng.gen_range(2..=4),
        keyword_vocab_size: rng.gen_range(2..=8),
        modifier_vocab_size: rng.gen_range(2..=6),
        filler_vocab_size: rng.gen_range(2..=4),
        object_vocab_size: rng.gen_range(2..=6),
        n_answers: rng.gen_range(2..=6),
        answer_skew: rng.gen_range(0.0..2.0),
        question_length: (rng.gen_range(1..=2), rng.gen_range(2..=4)),
        objects_per_image: (0, 2),
        seed: rng.gen(),
        ..SynthConfig::default()
    };
    for kind in ShortcutKind::ALL {
        if rng.gen_bool(0.3) {
            cfg = cfg.with_strength(kind, rng.gen_range(0.0..1.0));
        }
    }
    cfg
}

fn ac3_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tails = 0usize;
    for case in 0..200 {
        let cfg = random_config(&mut rng, 500);
        let (dataset, concepts, _) = synth(cfg.clone())?;
        let split_seed = rng.gen();
        let bench = benchmark(&dataset, &concepts, split_seed)?;
        let labels = common::brute_concepts(&dataset);
        for (id, parts) in &labels {
            let vector = concepts.get(id).ok_or(format!("case {case}: {id} unlabeled"))?;
            for kind in ShortcutKind::ALL {
                let got = vector.get(kind).map(ConceptKey::parts);
                ensure(got == parts[kind.index()], || {
                    format!("case {case} ({cfg:?}): {id} {kind} concept {got:?} vs {:?}", parts[kind.index()])
                })?;
            }
        }
        for kind in ShortcutKind::ALL {
            let (head, tail) = common::brute_head_tail(&bench.iid_test_ids, &dataset, &labels, kind);
            let ht = bench.headtail(SplitCopy::Test, kind);
            let got_tail: BTreeSet<String> = ht.tail_ids.iter().cloned().collect();
            let got_head: BTreeSet<String> = ht.head_ids.iter().cloned().collect();
            ensure(got_tail == tail && got_head == head, || {
                format!("case {case}: {kind} OOD set differs ({} vs {} ids)", got_tail.len(), tail.len())
            })?;
            tails += tail.len();
        }
    }
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("200 corpora, {tails} OOD ids matched"))
}

fn check_structure(dataset: &Dataset, concepts: &ConceptTable, bench: &BenchmarkSplits) -> Result<(), TestCaseError> {
    let n = dataset.len();
    let (tr, va, te) = (&bench.train_ids, &bench.val_ids, &bench.iid_test_ids);
    prop_assert_eq!(tr.len(), n * 70 / 100);
    prop_assert_eq!(va.len(), n * 5 / 100);
    prop_assert_eq!(te.len(), n - tr.len() - va.len());
    let all: BTreeSet<&String> = tr.iter().chain(va).chain(te).collect();
    prop_assert_eq!(all.len(), n, "splits overlap");
    prop_assert!(dataset.samples().iter().all(|s| all.contains(&s.id().to_string())));
    for copy in [SplitCopy::Train, SplitCopy::Val, SplitCopy::Test] {
        for kind in ShortcutKind::ALL {
            let ht = bench.headtail(copy, kind);
            let head: BTreeSet<&String> = ht.head_ids.iter().collect();
            let tail: BTreeSet<&String> = ht.tail_ids.iter().collect();
            prop_assert!(head.is_disjoint(&tail), "{kind}: head and tail overlap");
            let groups = group_by_concept(bench.ids(copy), concepts, kind, dataset)
                .map_err(|e| TestCaseError::fail(e.to_string()))?;
            let members: BTreeSet<&String> = groups
                .iter()
                .filter(|g| g.entropy_norm < Thresholds::default().entropy)
                .flat_map(|g| g.members().iter().map(|(id, _)| id))
                .collect();
            let union: BTreeSet<&String> = head.union(&tail).copied().collect();
            prop_assert_eq!(union, members, "{}: head/tail do not cover imbalanced groups", kind);
        }
    }
    Ok(())
}

fn ac4_split_structure() -> Outcome {
    let start = Instant::now();
    let mut runner = TestRunner::new_with_rng(
        PropConfig { cases: 1000, failure_persistence: None, ..PropConfig::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    let result = runner.run(&(any::<u64>(), any::<u64>()), |(corpus_seed, split_seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(corpus_seed);
        let cfg = random_config(&mut rng, 120);
        let (dataset, concepts, _) = synth(cfg).map_err(TestCaseError::fail)?;
        let bench = benchmark(&dataset, &concepts, split_seed).map_err(TestCaseError::fail)?;
        check_structure(&dataset, &concepts, &bench)
    });
    ok(result)?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok("1000 cases".into())
}

fn ac5_planted_detection() -> Outcome {
    let start = Instant::now();
    let kw = ShortcutKind::Kw;
    let cfg = SynthConfig { n_samples: 50_000, seed: 5, ..SynthConfig::default() }.with_strength(kw, 0.95);
    let (dataset, concepts, planted_by) = synth(cfg)?;
    let mut planted = 0usize;
    let mut hits = 0usize;
    for (sample, by) in dataset.samples().iter().zip(&planted_by) {
        if *by != Some(kw) {
            continue;
        }
        planted += 1;
        // "what qtN kwM ...": the key word follows the two prefix tokens
        let keyword = sample.question().split(' ').nth(2).unwrap();
        let selected = concepts.get(sample.id()).and_then(|v| v.get(kw));
        hits += selected.is_some_and(|k| k.parts() == [keyword]) as usize;
    }
    let bench = benchmark(&dataset, &concepts, 5)?;
    let ood = bench.ood_set(kw).len();
    let rate = hits as f64 / planted as f64;
    ensure(rate >= 0.99, || format!("planted keyword selected for {rate:.4} of {planted}"))?;
    ensure(ood > 0, || "KW OOD test set is empty".into())?;
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(format!("hit rate {rate:.4} over {planted} planted samples, {ood} KW OOD ids"))
}

fn ac6_shortcut_gap() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for kind in [ShortcutKind::Kw, ShortcutKind::Ko, ShortcutKind::QtKw] {
        let cfg = SynthConfig { n_samples: 50_000, seed: 6, ..SynthConfig::default() }.with_strength(kind, 0.9);
        let (dataset, concepts, _) = synth(cfg)?;
        let bench = benchmark(&dataset, &concepts, 6)?;
        let (acc_tail, acc_head) = tail_head_accuracy(&bench.train_ids, &dataset, &concepts, &bench, kind)?;
        ensure(acc_head - acc_tail >= 0.3, || {
            format!("{kind}: acc_head {acc_head:.3} - acc_tail {acc_tail:.3} < 0.3")
        })?;

        // groups whose predicted class is a head class never score on their tail
        let oracle = ok(frequency_oracle(&bench.train_ids, &dataset, &concepts, kind))?;
        let groups = ok(group_by_concept(&bench.iid_test_ids, &concepts, kind, &dataset))?;
        let th = Thresholds::default();
        let mut checked = 0usize;
        for g in groups.iter().filter(|g| g.entropy_norm < th.entropy) {
            let predicted = oracle.lookup(Some(&g.key));
            let rare = rare_answers(g, th.rare_factor);
            if !g.answer_hist.contains_key(predicted) || rare.contains(predicted) {
                continue;
            }
            let (_, tail) = ok(split_head_tail(g, &th))?;
            if tail.is_empty() {
                continue;
            }
            let preds = ok(oracle.predict_ids(&tail, &concepts))?;
            let acc = ok(score_split(&preds, &tail, &dataset, Metric::Exact))?.accuracy;
            ensure(acc == 0.0, || format!("{kind} group {}: tail accuracy {acc}", g.key))?;
            checked += 1;
        }
        ensure(checked > 0, || format!("{kind}: no group exercised the tail invariant"))?;
        lines.push(format!("{kind} gap {:.3}", acc_head - acc_tail));
    }
    within(start.elapsed(), Duration::from_secs(30))?;
    Ok(lines.join(", "))
}

fn non_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] <= w[0])
}

/// Single-key-word questions: every sample's KW concept is its key word, so
/// each key-word group carries the planted answer mixture unfiltered.
fn single_keyword(n_samples: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        n_samples,
        seed,
        question_length: (1, 1),
        ..SynthConfig::default()
    }
}

fn ac7_strength_sweep() -> Outcome {
    let start = Instant::now();
    let kw = ShortcutKind::Kw;
    let mut degrees = Vec::new();
    let mut tails = Vec::new();
    for strength in [0.2, 0.4, 0.6, 0.8] {
        // skewed answer prior, as in real QA corpora, so even weak planting
        // leaves imbalanced groups with a tail
        let cfg = SynthConfig { answer_skew: 1.0, ..single_keyword(50_000, 7) }.with_strength(kw, strength);
        let (dataset, concepts, _) = synth(cfg)?;
        let bench = benchmark(&dataset, &concepts, 7)?;
        let groups = ok(group_by_concept(&bench.train_ids, &concepts, kw, &dataset))?;
        degrees.push(ok(imbalance_degree(&groups))?);
        ensure(!bench.ood_set(kw).is_empty(), || format!("strength {strength}: empty KW OOD set"))?;
        tails.push(tail_head_accuracy(&bench.train_ids, &dataset, &concepts, &bench, kw)?.0);
    }
    let summary = format!("E [{}], acc_tail [{}]", fmt_series(&degrees), fmt_series(&tails));
    ensure(non_increasing(&degrees), || format!("E not non-increasing: {summary}"))?;
    ensure(non_increasing(&tails), || format!("acc_tail not non-increasing: {summary}"))?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(summary)
}

fn ac8_head_fraction_sweep() -> Outcome {
    let start = Instant::now();
    let kw = ShortcutKind::Kw;
    let cfg = single_keyword(50_000, 8).with_strength(kw, 0.5);
    let (dataset, concepts, _) = synth(cfg)?;
    let bench = benchmark(&dataset, &concepts, 8)?;
    let pools = bench.headtail(SplitCopy::Train, kw);
    // largest mix the 0.1 and 0.9 endpoints can both draw
    let total = (pools.head_ids.len().min(pools.tail_ids.len()) as f64 / 0.9) as usize;
    let mut tails = Vec::new();
    let mut heads = Vec::new();
    for step in 1..=9 {
        let rho = step as f64 / 10.0;
        let mix = ok(compose_training_mix(pools, rho, total, 8))?;
        let (t, h) = tail_head_accuracy(&mix, &dataset, &concepts, &bench, kw)?;
        tails.push(t);
        heads.push(h);
    }
    let summary = format!("T={total} acc_tail [{}], acc_head [{}]", fmt_series(&tails), fmt_series(&heads));
    ensure(non_increasing(&tails), || format!("acc_tail not non-increasing: {summary}"))?;
    ensure(heads[..3].windows(2).all(|w| w[1] >= w[0]), || {
        format!("acc_head decreases before 0.3: {summary}")
    })?;
    ensure(heads[2..].iter().all(|h| (h - heads[2]).abs() <= 0.02), || {
        format!("acc_head not flat after 0.3: {summary}")
    })?;
    within(start.elapsed(), Duration::from_secs(120))?;
    Ok(summary)
}

fn pipeline_in_pool(input: &Path, out: PathBuf, threads: usize) -> Result<Vec<(String, String)>, String> {
    let pool = ok(rayon::ThreadPoolBuilder::new().num_threads(threads).build())?;
    let mut config = RunConfig::new(input, out);
    config.seed = 9;
    let manifest = ok(pool.install(|| run_pipeline(&config)))?;
    Ok(manifest.artifacts.into_iter().map(|a| (a.path, a.sha256)).collect())
}

fn ac9_determinism() -> Outcome {
    let start = Instant::now();
    let tmp = ok(tempfile::tempdir())?;
    let mut cfg = SynthConfig { n_samples: 50_000, seed: 9, ..SynthConfig::default() };
    for kind in ShortcutKind::ALL {
        cfg = cfg.with_strength(kind, 0.1);
    }
    let corpus = ok(generate_synthetic_corpus(&cfg))?;
    let input = tmp.path().join("corpus.jsonl");
    ok(write_generic(&corpus.dataset, &input))?;

    let threads = std::thread::available_parallelism().map_or(4, |n| n.get().max(2));
    let single = pipeline_in_pool(&input, tmp.path().join("a"), 1)?;
    let single_again = pipeline_in_pool(&input, tmp.path().join("b"), 1)?;
    let multi = pipeline_in_pool(&input, tmp.path().join("c"), threads)?;
    ensure(single == single_again, || "repeat single-thread runs differ".into())?;
    for ((path, a), (_, b)) in single.iter().zip(&multi) {
        ensure(a == b, || format!("{path} differs between 1 and {threads} threads"))?;
    }
    ensure(single.len() == multi.len(), || "artifact lists differ".into())?;
    within(start.elapsed(), Duration::from_secs(60))?;
    Ok(format!("{} artifacts identical across 1/1/{threads} threads", single.len()))
}

/// Tail sizes of the published benchmark, in `ShortcutKind::ALL` order.
const PUBLISHED_TAILS: [usize; 9] = [23_816, 27_730, 14_358, 17_630, 38_423, 42_806, 27_484, 17_447, 9_249];

fn ac10_real_data() -> Option<Outcome> {
    let dir = PathBuf::from(std::env::var_os("VQA_V2_DIR")?);
    Some((|| {
        let f = |name: &str| dir.join(name);
        let questions = [f("v2_OpenEnded_mscoco_train2014_questions.json"), f("v2_OpenEnded_mscoco_val2014_questions.json")];
        let annotations = [f("v2_mscoco_train2014_annotations.json"), f("v2_mscoco_val2014_annotations.json")];
        let objects = f("image_objects.json");
        let q: Vec<&Path> = questions.iter().map(PathBuf::as_path).collect();
        let a: Vec<&Path> = annotations.iter().map(PathBuf::as_path).collect();
        let dataset = ok(adapt_vqa_v2(&q, &a, Some(&objects), default_qt_prefixes()))?;
        ensure(dataset.len() == 658_111, || format!("merged total {}", dataset.len()))?;
        let concepts = ok(label_dataset(&dataset))?;
        let bench = benchmark(&dataset, &concepts, 0)?;
        let qt_groups = bench.headtail(SplitCopy::Train, ShortcutKind::Qt).n_groups;
        ensure(qt_groups == 65, || format!("{qt_groups} training QT groups"))?;
        let ko_groups = bench.headtail(SplitCopy::Train, ShortcutKind::Ko).n_groups;
        ensure(ko_groups <= 81, || format!("{ko_groups} training KO groups"))?;
        for (kind, published) in ShortcutKind::ALL.into_iter().zip(PUBLISHED_TAILS) {
            let got = bench.ood_set(kind).len();
            let dev = (got as f64 - published as f64).abs() / published as f64;
            ensure(dev <= 0.03, || format!("{kind} OOD size {got} vs {published} ({:.1}%)", dev * 100.0))?;
        }
        Ok(format!("{} samples, {qt_groups} QT / {ko_groups} KO groups", dataset.len()))
    })())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("AC-1", "entropy unit cases", || Some(ac1_entropy())),
        ("AC-2", "head/tail rule", || Some(ac2_head_tail())),
        ("AC-3", "oracle equivalence", || Some(ac3_oracle_equivalence())),
        ("AC-4", "split structure", || Some(ac4_split_structure())),
        ("AC-5", "planted-shortcut detection", || Some(ac5_planted_detection())),
        ("AC-6", "shortcut gap", || Some(ac6_shortcut_gap())),
        ("AC-7", "strength sweep", || Some(ac7_strength_sweep())),
        ("AC-8", "head-fraction sweep", || Some(ac8_head_fraction_sweep())),
        ("AC-9", "determinism", || Some(ac9_determinism())),
        ("AC-10", "real-data track", ac10_real_data),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| id == o || name.contains(o.as_str())) {
            continue;
        }
        let start = Instant::now();
        let secs = || start.elapsed().as_secs_f64();
        match run() {
            Some(Ok(detail)) => println!("[PASS] {id} {name} ({:.1}s): {detail}", secs()),
            Some(Err(why)) => {
                failed += 1;
                println!("[FAIL] {id} {name} ({:.1}s): {why}", secs());
            }
            None => println!("[SKIP] {id} {name}: VQA_V2_DIR not set"),
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
