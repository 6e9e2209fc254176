//! Acceptance checks, one line per criterion. Runs without network access;
//! the live-model check only runs with `--live` (or FLOWSHOT_LIVE=1) and a
//! config named by FLOWSHOT_LIVE_CONFIG.
//!
//!     cargo test -p flowshot-cli --test acceptance
//!     cargo test -p flowshot-cli --test acceptance -- --live

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::Instant;

use flowshot::flow::{FeaturePair, LabeledExample};
use flowshot::harness::{run_sweep, Clock, Deps, DetectorRegistry, EvaluationReport};
use flowshot::llm::{
    export_finetune_dataset, finetune_record, parse_detection_response, parse_detection_response_with, FailureClass,
    FineTuneRecord, HashEmbedder, MockBehavior, MockChatBackend, RefusalPatterns,
};
use flowshot::mlp::{self, loss_and_gradients, sigmoid, MlpModel, Params, Scaler, TrainConfig, PARAM_COUNT};
use flowshot::prompt::{build_detection_prompt, PromptTemplate};
use flowshot::select::{select_top_k, EmbeddingIndex, EmbeddingVector, IndexEntry, OrderingStrategy};
use flowshot::{build_dataset, parse_flow_csv, project, Dataset, FeatureSelection, TrafficLabel};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn core_fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

fn sample_data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/sample_flows.csv")
}

fn label(ddos: bool) -> TrafficLabel {
    if ddos {
        TrafficLabel::Ddos
    } else {
        TrafficLabel::Benign
    }
}

// 1

fn golden_prompt() -> Result<(), String> {
    let csv = fs::read(core_fixture("flows_5.csv")).map_err(|e| e.to_string())?;
    let golden = fs::read_to_string(core_fixture("golden_prompt_3shot.txt")).map_err(|e| e.to_string())?;
    let sel = FeatureSelection::new(["Destination Port", "Flow Duration", "Total Fwd Packets", "Flow Bytes/s"])
        .map_err(|e| e.to_string())?;
    let ex: Vec<LabeledExample> = parse_flow_csv(csv.as_slice(), "Label")
        .map_err(|e| e.to_string())?
        .iter()
        .map(|r| project(r, &sel).unwrap())
        .collect();
    let doc =
        build_detection_prompt(&[ex[0].clone(), ex[2].clone(), ex[4].clone()], &ex[3], &PromptTemplate::detection());
    if doc.text != golden {
        let line = doc.text.lines().zip(golden.lines()).position(|(a, b)| a != b);
        return Err(format!("rendered prompt differs from golden file (first differing line: {line:?})"));
    }
    Ok(())
}

// 2

const NAMES: [&str; 8] = [
    "Destination Port",
    "Flow Duration",
    "Total Fwd Packets",
    "Flow Bytes/s",
    "Bwd Packet Length Std",
    "Average Packet Size",
    "Flow IAT Std",
    "Fwd Header Length.1",
];

fn random_value(rng: &mut ChaCha8Rng) -> String {
    match rng.gen_range(0..5) {
        0 => rng.gen_range(0..65536u32).to_string(),
        1 => format!("{:.3}", rng.gen_range(-1e7..1e7f64)),
        2 => "Infinity".into(),
        3 => "NaN".into(),
        _ => {
            let len = rng.gen_range(1..10);
            (0..len).map(|_| *b"abcdefXYZ0123456789.-_/".choose(rng).unwrap() as char).collect()
        }
    }
}

fn random_example(rng: &mut ChaCha8Rng, source_index: usize) -> LabeledExample {
    let mut names = NAMES.to_vec();
    names.shuffle(rng);
    let pairs = std::array::from_fn(|i| FeaturePair { name: names[i].into(), value: random_value(rng) });
    LabeledExample::new(pairs, label(rng.gen_bool(0.5)), source_index)
}

type Row = Vec<(String, String)>;

/// Recovers rows by plain string splitting, knowing only the separators.
fn naive_split(text: &str, t: &PromptTemplate) -> Result<(Vec<Row>, Row), String> {
    let body = text
        .strip_prefix(t.preamble.as_str())
        .and_then(|b| b.strip_prefix('\n'))
        .and_then(|b| b.strip_suffix(t.output_instruction.as_str()))
        .and_then(|b| b.strip_suffix('\n'))
        .ok_or("preamble or instruction not where expected")?;
    let fields = |row: &str| -> Result<Row, String> {
        row.split(t.field_separator.as_str())
            .map(|f| f.split_once(": ").map(|(k, v)| (k.to_string(), v.to_string())).ok_or(format!("bad field {f:?}")))
            .collect()
    };
    let parts: Vec<&str> = body.split(&format!("\n{}\n", t.block_separator)).collect();
    match parts.as_slice() {
        [test] => Ok((Vec::new(), fields(test)?)),
        [examples, test] => {
            Ok((examples.split(t.row_separator.as_str()).map(fields).collect::<Result<_, _>>()?, fields(test)?))
        }
        _ => Err(format!("{} block separators", parts.len() - 1)),
    }
}

fn structural_round_trip() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = PromptTemplate::detection();
    for trial in 0..1000 {
        let n = rng.gen_range(0..=20);
        let examples: Vec<_> = (0..n).map(|i| random_example(&mut rng, i)).collect();
        let test = random_example(&mut rng, 999);
        let doc = build_detection_prompt(&examples, &test, &t);
        let (rows, test_row) = naive_split(&doc.text, &t).map_err(|e| format!("trial {trial}: {e}"))?;
        ensure!(rows.len() == n && doc.example_count == n, "trial {trial}: {} rows for {n} examples", rows.len());
        for (row, ex) in rows.iter().zip(&examples) {
            let mut expected: Row = ex.pairs.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
            expected.push(("Label".into(), ex.label.to_string()));
            ensure!(*row == expected, "trial {trial}: row {row:?} != {expected:?}");
        }
        let expected: Row = test.pairs.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        ensure!(test_row == expected, "trial {trial}: test row {test_row:?}");
    }
    Ok(())
}

// 3

fn dummy_example(i: usize) -> LabeledExample {
    let pairs = std::array::from_fn(|j| FeaturePair { name: format!("f{j}"), value: format!("{i}") });
    LabeledExample::new(pairs, label(i.is_multiple_of(2)), i)
}

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

fn retrieval_oracle() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dim = 64;
    let mut checked = 0;
    for pool_no in 0..200 {
        let size = rng.gen_range(1..=70);
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(size);
        for i in 0..size {
            // every third pool copies earlier vectors to force ties
            let v = if pool_no % 3 == 0 && i > 0 && rng.gen_bool(0.4) {
                vectors[rng.gen_range(0..i)].clone()
            } else {
                (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            vectors.push(v);
        }
        let mut order: Vec<usize> = (0..size).collect();
        order.shuffle(&mut rng);
        let entries = order
            .iter()
            .map(|&i| IndexEntry {
                source_index: i,
                vector: EmbeddingVector::new(vectors[i].clone()).unwrap(),
                example: dummy_example(i),
            })
            .collect();
        let index = EmbeddingIndex::from_entries(entries).map_err(|e| e.to_string())?;
        let query: Vec<f64> = if pool_no % 3 == 0 {
            vectors[rng.gen_range(0..size)].clone()
        } else {
            (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let q = EmbeddingVector::new(query.clone()).unwrap();

        let mut scored: Vec<(f64, usize)> =
            vectors.iter().enumerate().map(|(i, v)| (brute_cosine(v, &query), i)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for k in [1, 5, 10, 20].into_iter().filter(|&k| k <= size) {
            let got: BTreeSet<usize> = select_top_k(&index, &q, k, OrderingStrategy::DescendingRelevance)
                .map_err(|e| e.to_string())?
                .iter()
                .map(|e| e.source_index)
                .collect();
            let want: BTreeSet<usize> = scored[..k].iter().map(|s| s.1).collect();
            ensure!(got == want, "pool {pool_no} size {size} k {k}: {got:?} != {want:?}");
            checked += 1;
        }
    }
    ensure!(checked > 400, "only {checked} (pool, k) pairs checked");
    Ok(())
}

// 4

fn mangle_case(rng: &mut ChaCha8Rng, s: &str) -> String {
    s.chars().map(|c| if rng.gen_bool(0.5) { c.to_ascii_uppercase() } else { c.to_ascii_lowercase() }).collect()
}

fn noise(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(0..40);
    let alphabet: Vec<char> = "abc XYZ 123 .,:;!?\n\t$#|é-".chars().collect();
    let mut s: String = (0..len).map(|_| *alphabet.choose(rng).unwrap()).collect();
    while s.contains("$$") {
        s = s.replace("$$", "$");
    }
    s.trim_end_matches('$').trim_start_matches('$').to_string()
}

fn parser_totality() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let no_refusals = RefusalPatterns(Vec::new());
    for trial in 0..5000 {
        let gold = label(rng.gen_bool(0.5));
        let pad = |rng: &mut ChaCha8Rng| " ".repeat(rng.gen_range(0..3));
        let wrapped = format!(
            "{} $$${}{}{}$$$ {}",
            noise(&mut rng),
            pad(&mut rng),
            mangle_case(&mut rng, gold.as_str()),
            pad(&mut rng),
            noise(&mut rng)
        );
        let out = parse_detection_response(&wrapped);
        ensure!(out.predicted == Some(gold) && out.failure.is_none(), "trial {trial}: {wrapped:?} -> {out:?}");

        let malformed = match rng.gen_range(0..3) {
            0 => noise(&mut rng),
            1 => format!("{} $$${}$$$", noise(&mut rng), mangle_case(&mut rng, "malicious")),
            _ => format!("$$$ {} ", gold.as_str()),
        };
        let out = parse_detection_response_with(&malformed, &no_refusals);
        ensure!(
            out.predicted.is_none() && out.failure == Some(FailureClass::FormatViolation),
            "trial {trial}: {malformed:?} -> {out:?}"
        );

        let bytes: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
        let arbitrary = String::from_utf8_lossy(&bytes);
        let out =
            catch_unwind(|| parse_detection_response(&arbitrary)).map_err(|_| format!("panic on {arbitrary:?}"))?;
        ensure!(out.predicted.is_some() != out.failure.is_some(), "trial {trial}: {out:?}");
    }
    Ok(())
}

// 5

fn relative_error(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-8 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn mlp_numerics() -> Result<(), String> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let h = 1e-5;
    for instance in 0..50 {
        let params = Params::init(rng.gen());
        let rows = rng.gen_range(1..8);
        let inputs: Vec<[f64; 4]> = (0..rows).map(|_| std::array::from_fn(|_| rng.gen_range(-2.0..2.0))).collect();
        let targets: Vec<f64> = (0..rows).map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let (_, grad) = loss_and_gradients(&params, &inputs, &targets);
        let analytic = grad.to_vec();
        let base = params.to_vec();
        for p in 0..PARAM_COUNT {
            let mut plus = base.clone();
            plus[p] += h;
            let mut minus = base.clone();
            minus[p] -= h;
            let lp = loss_and_gradients(&Params::from_slice(&plus).unwrap(), &inputs, &targets).0;
            let lm = loss_and_gradients(&Params::from_slice(&minus).unwrap(), &inputs, &targets).0;
            let numeric = (lp - lm) / (2.0 * h);
            let err = relative_error(analytic[p], numeric);
            ensure!(
                err <= 1e-4,
                "instance {instance} param {p}: analytic {} numeric {numeric} (rel {err:e})",
                analytic[p]
            );
        }
    }

    // two active hidden units, everything else zero
    let mut p = Params::zeros();
    for (i, w) in [0.5, -0.25, 1.0, 2.0].into_iter().enumerate() {
        p.w1[i][0] = w;
        p.w1[i][1] = 0.25;
    }
    p.b1[0] = 0.1;
    p.w2[0] = 2.0;
    p.w2[1] = -1.0;
    p.b2 = 0.05;
    let model = MlpModel { params: p, scaler: Scaler::identity(), seed: 0, final_loss: 0.0 };
    // h0 = relu(0.5 - 0.5 - 1 + 1 + 0.1) = 0.1, h1 = relu(0.25 * 2.5) = 0.625,
    // z = 2 * 0.1 - 0.625 + 0.05 = -0.375
    let score = model.score_raw(&[1.0, 2.0, -1.0, 0.5]);
    let expected = 0.407_333_400_045_930_27;
    ensure!((score - expected).abs() <= 1e-12, "forward pass {score} != {expected}");
    ensure!((sigmoid(-0.375) - expected).abs() <= 1e-12, "sigmoid(-0.375) = {}", sigmoid(-0.375));

    let mut blobs = Vec::new();
    for i in 0..200 {
        let ddos = i % 2 == 0;
        let centre = if ddos { 2.0 } else { -2.0 };
        let pairs = std::array::from_fn(|j| {
            let (u1, u2): (f64, f64) = (rng.gen_range(1e-12..1.0), rng.gen());
            let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            FeaturePair { name: format!("x{j}"), value: (centre + z).to_string() }
        });
        blobs.push(LabeledExample::new(pairs, label(ddos), i));
    }
    let model = mlp::train(&blobs, &TrainConfig::default()).map_err(|e| e.to_string())?;
    let correct = blobs.iter().filter(|e| mlp::predict(&model, e).unwrap().0 == e.label).count();
    ensure!(correct >= 190, "blobs training accuracy {correct}/200");

    let elapsed = started.elapsed();
    ensure!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    Ok(())
}

// 6

fn synthetic_dataset(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut csv = String::from("a,b,c,d,Label\n");
    for i in 0..120 {
        let ddos = i % 3 == 0;
        let shift = if ddos { 3.0 } else { 0.0 };
        let v: Vec<String> = (0..4).map(|_| format!("{:.3}", shift + rng.gen_range(-1.0..1.0))).collect();
        csv.push_str(&format!("{},{}\n", v.join(","), if ddos { "DDoS" } else { "BENIGN" }));
    }
    let records = parse_flow_csv(csv.as_bytes(), "Label").unwrap();
    build_dataset(&records, &FeatureSelection::new(["a", "b", "c", "d"]).unwrap(), 70, 30, seed).unwrap()
}

fn mock_deps(ds: &Dataset, behavior: MockBehavior, parallelism: usize) -> Deps {
    let gold: HashMap<usize, TrafficLabel> =
        ds.train_pool.iter().chain(&ds.eval_set).map(|e| (e.source_index, e.label)).collect();
    let mut deps = Deps::new(Arc::new(MockChatBackend::new(behavior, gold)), Arc::new(HashEmbedder::new(0)));
    deps.parallelism = parallelism;
    deps.clock = Clock::Fixed(0);
    deps
}

fn sweep_correctness() -> Result<(), String> {
    let ds = synthetic_dataset(6);
    let registry = DetectorRegistry::with_defaults();
    let detectors = vec!["llm-random".to_string(), "llm-topk".to_string()];
    let ns = [0, 10, 20, 30];
    let mut reports: Vec<EvaluationReport> = Vec::new();
    for parallelism in [1, 4, 8] {
        let deps = mock_deps(&ds, MockBehavior::Step(20), parallelism);
        reports.push(run_sweep(&ns, &detectors, &ds, &deps, &registry).map_err(|e| e.to_string())?);
    }
    let r = &reports[0];
    let curve: Vec<Option<f64>> = ns.iter().map(|&n| r.accuracy("llm-random", n)).collect();
    ensure!(curve == [Some(0.0), Some(0.0), Some(1.0), Some(1.0)], "llm-random curve {curve:?}");
    let topk: Vec<Option<f64>> = ns.iter().map(|&n| r.accuracy("llm-topk", n)).collect();
    ensure!(topk == [None, Some(0.0), Some(1.0), Some(1.0)], "llm-topk curve {topk:?}");

    for s in &r.series {
        for p in &s.points {
            let cases: Vec<_> =
                r.cases.iter().filter(|c| c.cell.detector == s.detector && c.cell.n_or_k == p.n).collect();
            let correct = cases.iter().filter(|c| c.predicted == Some(c.gold)).count();
            ensure!(cases.len() == p.total && correct == p.correct, "{} n={}: counts differ", s.detector, p.n);
            ensure!(correct as f64 / cases.len() as f64 == p.accuracy, "{} n={}: accuracy differs", s.detector, p.n);
        }
    }
    r.verify()?;
    let first = r.to_json().map_err(|e| e.to_string())?;
    for (other, par) in reports[1..].iter().zip([4, 8]) {
        ensure!(other.to_json().map_err(|e| e.to_string())? == first, "parallelism {par} changed the report");
    }
    Ok(())
}

// 7

fn finetune_export() -> Result<(), String> {
    let csv = fs::read(sample_data()).map_err(|e| e.to_string())?;
    let records = parse_flow_csv(csv.as_slice(), "Label").map_err(|e| e.to_string())?;
    let sel = FeatureSelection::new(["Bwd Packet Length Std", "Average Packet Size", "Flow Duration", "Flow IAT Std"])
        .map_err(|e| e.to_string())?;
    let ds = build_dataset(&records, &sel, 70, 10, 7).map_err(|e| e.to_string())?;
    ensure!(ds.train_pool.len() == 70, "pool has {} examples", ds.train_pool.len());
    let t = PromptTemplate::detection();
    let mut out = Vec::new();
    let count = export_finetune_dataset(&ds.train_pool, &t, &mut out).map_err(|e| e.to_string())?;
    let text = String::from_utf8(out).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = text.lines().collect();
    ensure!(count == 70 && lines.len() == 70, "{count} reported, {} lines", lines.len());
    for (line, ex) in lines.iter().zip(&ds.train_pool) {
        let rec: FineTuneRecord = serde_json::from_str(line).map_err(|e| format!("{e}: {line}"))?;
        ensure!(rec == finetune_record(ex, &t), "record for {} differs from renderer", ex.source_index);
        ensure!(rec.prompt == build_detection_prompt(&[], ex, &t).text, "prompt for {} differs", ex.source_index);
        ensure!(
            TrafficLabel::ALL.iter().any(|l| l.as_str() == rec.completion),
            "completion {:?} outside label set",
            rec.completion
        );
    }
    Ok(())
}

// 8

const PIPELINE: &[&[&str]] = &[
    &["ingest"],
    &["index", "build"],
    &["prompt", "preview", "-n", "5", "--selection", "top-k", "--case", "3"],
    &["detect", "--detector", "llm-topk", "-n", "10"],
    &["sweep"],
    &["ordering"],
    &["finetune-export"],
    &["baseline", "train"],
    &["baseline", "predict"],
    &["reason"],
    &["reason", "--include-label"],
];

fn run_pipeline(config: &Path) -> Result<(), String> {
    for args in PIPELINE {
        let out = Command::new(env!("CARGO_BIN_EXE_flowshot"))
            .args(["--config", config.to_str().unwrap(), "--mock", "hash"])
            .args(*args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    Ok(())
}

fn snapshot(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).map_err(|e| e.to_string())?;
                files.push((path.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    files.sort();
    Ok(files)
}

fn determinism() -> Result<(), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = tmp.path().join("run.toml");
    let text = format!(
        r#"output_dir = "out"
[dataset]
paths = [{:?}]
features = ["Bwd Packet Length Std", "Average Packet Size", "Flow Duration", "Flow IAT Std"]
train_size = 70
eval_size = 30
[sweep]
n_values = [0, 1, 5, 10, 20]
[ordering]
k = 6
[reason]
cases = 5
"#,
        sample_data().canonicalize().map_err(|e| e.to_string())?
    );
    fs::write(&config, text).map_err(|e| e.to_string())?;
    let out = tmp.path().join("out");

    run_pipeline(&config)?;
    let first = snapshot(&out)?;
    fs::remove_dir_all(&out).map_err(|e| e.to_string())?;
    run_pipeline(&config)?;
    let second = snapshot(&out)?;

    ensure!(first.len() >= 12, "only {} output files", first.len());
    let names = |s: &[(PathBuf, Vec<u8>)]| s.iter().map(|f| f.0.clone()).collect::<Vec<_>>();
    ensure!(names(&first) == names(&second), "file sets differ");
    for ((path, a), (_, b)) in first.iter().zip(&second) {
        ensure!(a == b, "{} differs between runs", path.display());
    }
    ensure!(first.iter().any(|f| f.0.ends_with("reports/report.json")), "no report.json written");
    Ok(())
}

// live

fn live_topk_accuracy() -> Result<(), String> {
    let config = std::env::var("FLOWSHOT_LIVE_CONFIG").map_err(|_| "FLOWSHOT_LIVE_CONFIG is not set".to_string())?;
    let out = Command::new(env!("CARGO_BIN_EXE_flowshot"))
        .args(["--config", &config, "detect", "--detector", "llm-topk", "-n", "10"])
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(out.status.success(), "detect failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let acc: f64 = stdout
        .split("accuracy ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .ok_or(format!("no accuracy in output: {stdout}"))?;
    ensure!((acc - 0.876).abs() <= 0.05, "10-shot top-k accuracy {acc:.4} outside 0.876 +/- 0.05");
    Ok(())
}

fn main() -> ExitCode {
    let live = std::env::args().any(|a| a == "--live") || std::env::var("FLOWSHOT_LIVE").is_ok_and(|v| v == "1");
    let checks: [(&str, Check); 8] = [
        ("golden prompt", golden_prompt),
        ("structural round-trip", structural_round_trip),
        ("retrieval oracle", retrieval_oracle),
        ("parser totality", parser_totality),
        ("mlp numerics", mlp_numerics),
        ("sweep correctness", sweep_correctness),
        ("fine-tune export", finetune_export),
        ("determinism", determinism),
    ];

    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(()) => println!("PASS {}. {name} ({secs:.2}s)", i + 1),
            Err(e) => {
                failed += 1;
                println!("FAIL {}. {name} ({secs:.2}s): {e}", i + 1);
            }
        }
    }
    if live {
        match live_topk_accuracy() {
            Ok(()) => println!("PASS live. 10-shot top-k accuracy"),
            Err(e) => {
                failed += 1;
                println!("FAIL live. 10-shot top-k accuracy: {e}");
            }
        }
    } else {
        println!("SKIP live. 10-shot top-k accuracy (pass --live to run)");
    }

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    }
}
