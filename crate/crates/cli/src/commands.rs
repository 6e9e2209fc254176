use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use flowshot::flow::{parse_flow_csv, write_pool_csv};
use flowshot::harness::{
    compute_accuracy, run_detector, run_ordering_experiment, run_reasoning_pass, run_sweep, sweep_cells, write_review,
    CaseRecord, Clock, Deps, DetectorRegistry, EvaluationReport, SelectionMethod, REPORT_FILE,
};
use flowshot::llm::{
    export_finetune_dataset, ChatBackend, ChatRequest, ClientError, HashEmbedder, HttpChatBackend, HttpEmbedder,
    MockBehavior, MockChatBackend,
};
use flowshot::mlp::{self, MlpModel};
use flowshot::prompt::{build_detection_prompt, render_row, PromptTemplate};
use flowshot::select::{build_index, select_random, select_top_k, Embedder, EmbeddingVector};
use flowshot::{build_dataset, Dataset, FlowRecord, LabeledExample, TrafficLabel};
use log::{info, warn};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{BaselineAction, Cli, Command, DetectArgs, IndexAction, PromptAction, Selection};

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(&cli.config)?;
    let s = Session { cfg, mock: cli.mock };
    match cli.command {
        Command::Ingest => s.ingest(),
        Command::Index { action: IndexAction::Build } => s.index_build(),
        Command::Prompt { action: PromptAction::Preview { case, n, selection, ordering } } => {
            s.prompt_preview(case, n, selection, ordering)
        }
        Command::Detect(args) => s.detect(&args),
        Command::Sweep => s.sweep(),
        Command::Ordering => s.ordering(),
        Command::FinetuneExport { n } => s.finetune_export(n),
        Command::Baseline { action: BaselineAction::Train { n } } => s.baseline_train(n),
        Command::Baseline { action: BaselineAction::Predict { model } } => s.baseline_predict(model.as_deref()),
        Command::Reason { include_label } => s.reason(include_label),
        Command::Report { input } => s.report(input.as_deref()),
    }
}

/// Stands in for a backend whose construction failed. Commands that never
/// call it still run; ones that do see the original error per request.
struct Unavailable(ClientError);

impl ChatBackend for Unavailable {
    fn name(&self) -> &str {
        "unavailable"
    }

    fn send(&self, _: &ChatRequest<'_>) -> Result<String, ClientError> {
        Err(self.0.clone())
    }
}

impl Embedder for Unavailable {
    fn embed(&self, _: &str) -> Result<EmbeddingVector, ClientError> {
        Err(self.0.clone())
    }
}

#[derive(Default, Clone, Copy)]
struct Needs {
    chat: bool,
    embed: bool,
}

struct Session {
    cfg: RunConfig,
    mock: Option<MockBehavior>,
}

impl Session {
    fn records(&self) -> Result<Vec<FlowRecord>> {
        let mut all = Vec::new();
        for path in &self.cfg.dataset.paths {
            let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let recs = parse_flow_csv(BufReader::new(f), &self.cfg.dataset.label_column)
                .with_context(|| format!("parsing {}", path.display()))?;
            info!("{}: {} records", path.display(), recs.len());
            all.extend(recs);
        }
        // indices must stay unique across files
        for (i, r) in all.iter_mut().enumerate() {
            r.index = i;
        }
        Ok(all)
    }

    fn dataset(&self) -> Result<Dataset> {
        let d = &self.cfg.dataset;
        let records = self.records()?;
        if let Some(first) = records.first() {
            d.features.validate_against(first).context("dataset.features")?;
        }
        build_dataset(&records, &d.features, d.train_size, d.eval_size, d.seed).context("splitting dataset")
    }

    fn template(&self) -> Result<PromptTemplate> {
        let t = PromptTemplate::detection();
        let t = match &self.cfg.prompt.template {
            Some(path) => t.with_layout_file(path).with_context(|| format!("loading template {}", path.display()))?,
            None => t,
        };
        t.validate().context("prompt template")?;
        Ok(t)
    }

    fn deps(&self, dataset: &Dataset, needs: Needs) -> Result<Deps> {
        let models = &self.cfg.models;
        let (chat, embedder, clock): (Arc<dyn ChatBackend>, Arc<dyn Embedder>, Clock) = match &self.mock {
            Some(behavior) => {
                let gold: HashMap<usize, TrafficLabel> =
                    dataset.train_pool.iter().chain(&dataset.eval_set).map(|e| (e.source_index, e.label)).collect();
                (
                    Arc::new(MockChatBackend::new(behavior.clone(), gold)),
                    Arc::new(HashEmbedder::new(models.mock_embed_seed)),
                    Clock::Fixed(0),
                )
            }
            None => {
                let chat: Arc<dyn ChatBackend> = match HttpChatBackend::from_env(&models.chat) {
                    Ok(c) => Arc::new(c),
                    Err(e) if needs.chat => {
                        return Err(anyhow!(e)).context(format!(
                            "AuthError: chat model {} needs credentials in ${} (or run with --mock)",
                            models.chat.model_name, models.chat.api_key_env
                        ))
                    }
                    Err(e) => Arc::new(Unavailable(e)),
                };
                let embedder: Arc<dyn Embedder> = match HttpEmbedder::from_env(&models.embed) {
                    Ok(e) => Arc::new(e),
                    Err(e) if needs.embed => {
                        return Err(anyhow!(e)).context(format!(
                            "AuthError: embedding model {} needs credentials in ${} (or run with --mock)",
                            models.embed.model_name, models.embed.api_key_env
                        ))
                    }
                    Err(e) => Arc::new(Unavailable(e)),
                };
                (chat, embedder, Clock::System)
            }
        };

        let sweep = &self.cfg.sweep;
        let mut deps = Deps::new(chat, embedder);
        deps.chat_model = models.chat.clone();
        deps.finetuned = self.cfg.finetuned_models()?;
        if self.mock.is_some() {
            // offline runs get a stand-in id for every size that has none
            for &n in sweep.n_values.iter().filter(|&&n| n > 0) {
                deps.finetuned.entry(n).or_insert_with(|| flowshot::llm::ModelConfig {
                    model_name: format!("mock-ft-{n}"),
                    ..models.chat.clone()
                });
            }
            deps.extra_seeds.insert("mock_embed".into(), models.mock_embed_seed);
        }
        deps.template = self.template()?;
        if let Some(p) = &self.cfg.refusal_patterns {
            deps.refusals = p.clone();
        }
        deps.mlp = self.cfg.mlp;
        deps.sampling_seed = sweep.sampling_seed;
        deps.redraw_per_case = sweep.redraw_per_case;
        deps.topk_ordering = sweep.topk_ordering;
        deps.parallelism = sweep.parallelism;
        deps.clock = clock;
        Ok(deps)
    }

    fn needs_for(&self, detectors: &[String], registry: &DetectorRegistry) -> Needs {
        let mut needs = Needs::default();
        for d in detectors {
            needs.chat |= d.starts_with("llm-");
            needs.embed |= registry.get(d).and_then(|d| d.selection()) == Some(SelectionMethod::TopK);
        }
        needs
    }

    fn ingest(&self) -> Result<()> {
        let ds = self.dataset()?;
        let dir = self.cfg.dir("dataset")?;
        for (name, pool) in [("train_pool.csv", &ds.train_pool), ("eval_set.csv", &ds.eval_set)] {
            let path = dir.join(name);
            write_pool_csv(pool, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
            let (benign, ddos) = Dataset::label_counts(pool);
            println!("{}: {} rows ({benign} benign, {ddos} ddos)", path.display(), pool.len());
        }
        Ok(())
    }

    fn index_build(&self) -> Result<()> {
        let ds = self.dataset()?;
        let deps = self.deps(&ds, Needs { chat: false, embed: true })?;
        let index = build_index(&ds.train_pool, &deps.template, deps.embedder.as_ref()).context("building index")?;
        let path = self.cfg.dir("models")?.join("index.csv");
        index.write_to(create(&path)?).with_context(|| format!("writing {}", path.display()))?;
        println!("{}: {} entries, dimension {}", path.display(), index.len(), index.dimension());
        Ok(())
    }

    fn prompt_preview(
        &self,
        case: usize,
        n: usize,
        selection: Selection,
        ordering: Option<flowshot::select::OrderingStrategy>,
    ) -> Result<()> {
        let ds = self.dataset()?;
        let test = ds
            .eval_set
            .get(case)
            .ok_or_else(|| anyhow!("case {case} out of range; evaluation set has {}", ds.eval_set.len()))?;
        let needs = Needs { chat: false, embed: selection == Selection::TopK && n > 0 };
        let deps = self.deps(&ds, needs)?;
        let examples = match selection {
            _ if n == 0 => Vec::new(),
            Selection::Random => {
                let seed = if deps.redraw_per_case { deps.sampling_seed ^ case as u64 } else { deps.sampling_seed };
                select_random(&ds.train_pool, n, seed)?
            }
            Selection::TopK => {
                let index = build_index(&ds.train_pool, &deps.template, deps.embedder.as_ref())?;
                let q = deps.embedder.embed(&render_row(test, false, &deps.template)).context("embedding test case")?;
                select_top_k(&index, &q, n, ordering.unwrap_or(deps.topk_ordering))?
            }
        };
        let doc = build_detection_prompt(&examples, test, &deps.template);
        let sel = match selection {
            Selection::Random => "random",
            Selection::TopK => "topk",
        };
        let path = self.cfg.dir("prompts")?.join(format!("preview-{sel}-n{n}-case{case}.txt"));
        fs::write(&path, &doc.text).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", doc.text);
        info!("written to {}", path.display());
        Ok(())
    }

    fn detect(&self, args: &DetectArgs) -> Result<()> {
        let registry = DetectorRegistry::with_defaults();
        let detectors = [args.detector.clone()];
        let ds = self.dataset()?;
        let deps = self.deps(&ds, self.needs_for(&detectors, &registry))?;
        let cells = sweep_cells(&[args.n], &detectors, &deps, &registry)?;
        let cases = run_detector(&cells[0], &ds, &deps, &registry)?;
        let summary = DetectSummary::new(&args.detector, args.n, cases)?;
        let path = self.cfg.dir("reports")?.join(format!("detect-{}-n{}.json", args.detector, args.n));
        write_json(&path, &summary)?;
        println!(
            "{} n={}: accuracy {:.4} ({}/{})",
            args.detector, args.n, summary.accuracy, summary.correct, summary.total
        );
        print_failures(&summary.cases);
        Ok(())
    }

    fn sweep(&self) -> Result<()> {
        let registry = DetectorRegistry::with_defaults();
        let sweep = &self.cfg.sweep;
        let ds = self.dataset()?;
        let deps = self.deps(&ds, self.needs_for(&sweep.detectors, &registry))?;
        let report = run_sweep(&sweep.n_values, &sweep.detectors, &ds, &deps, &registry)?;
        report.verify().map_err(|e| anyhow!("report failed its own check: {e}"))?;
        let (json, csv) = report.write_to_dir(&self.cfg.dir("reports")?)?;
        print_series(&report);
        print_failures(&report.cases);
        println!("wrote {} and {}", json.display(), csv.display());
        Ok(())
    }

    fn ordering(&self) -> Result<()> {
        let ds = self.dataset()?;
        let deps = self.deps(&ds, Needs { chat: true, embed: true })?;
        let o = &self.cfg.ordering;
        let report = run_ordering_experiment(o.k, &o.strategies, &ds, &deps)?;
        let path = self.cfg.dir("reports")?.join("ordering.json");
        write_json(&path, &report)?;
        println!("k={}", report.k);
        for r in &report.results {
            println!("  {:<22} {:.4} ({}/{})", r.strategy.name(), r.accuracy, r.correct, r.total);
        }
        println!("wrote {}", path.display());
        Ok(())
    }

    fn finetune_export(&self, n: Option<usize>) -> Result<()> {
        let ds = self.dataset()?;
        let template = self.template()?;
        let examples = match n {
            Some(n) => select_random(&ds.train_pool, n, self.cfg.sweep.sampling_seed)?,
            None => ds.train_pool.clone(),
        };
        let path = self.cfg.dir("dataset")?.join(format!("finetune-n{}.jsonl", examples.len()));
        let count = export_finetune_dataset(&examples, &template, create(&path)?)?;
        println!("{}: {count} records", path.display());
        Ok(())
    }

    fn baseline_train(&self, n: Option<usize>) -> Result<()> {
        let ds = self.dataset()?;
        let pool = match n {
            Some(n) => select_random(&ds.train_pool, n, self.cfg.mlp.seed)?,
            None => ds.train_pool.clone(),
        };
        let numeric: Vec<LabeledExample> = pool.iter().filter(|e| e.is_numeric()).cloned().collect();
        if numeric.len() < pool.len() {
            warn!("dropped {} train rows with non-numeric features", pool.len() - numeric.len());
        }
        let model = mlp::train(&numeric, &self.cfg.mlp).context("training MLP")?;
        let path = self.cfg.dir("models")?.join("mlp.txt");
        let mut sink = create(&path)?;
        model.save(&mut sink)?;
        sink.flush()?;
        println!("{}: trained on {} rows, final loss {:.6}", path.display(), numeric.len(), model.final_loss);
        Ok(())
    }

    fn baseline_predict(&self, model: Option<&Path>) -> Result<()> {
        let path = match model {
            Some(p) => p.to_path_buf(),
            None => self.cfg.output_dir.join("models").join("mlp.txt"),
        };
        let f =
            File::open(&path).with_context(|| format!("opening {} (run `baseline train` first?)", path.display()))?;
        let model = MlpModel::load(BufReader::new(f)).with_context(|| format!("loading {}", path.display()))?;
        let ds = self.dataset()?;

        let out = self.cfg.dir("reports")?.join("baseline-predictions.csv");
        let mut w = csv_writer(&out)?;
        w.write_record(["source_index", "gold", "predicted", "score"])?;
        let mut pairs = Vec::with_capacity(ds.eval_set.len());
        for e in &ds.eval_set {
            match mlp::predict(&model, e) {
                Ok((label, score)) => {
                    w.write_record([
                        e.source_index.to_string(),
                        e.label.to_string(),
                        label.to_string(),
                        score.to_string(),
                    ])?;
                    pairs.push((Some(label), e.label));
                }
                Err(err) => {
                    warn!("case {}: {err}", e.source_index);
                    w.write_record([e.source_index.to_string(), e.label.to_string(), String::new(), String::new()])?;
                    pairs.push((None, e.label));
                }
            }
        }
        w.flush()?;
        let correct = pairs.iter().filter(|(p, g)| *p == Some(*g)).count();
        println!("mlp accuracy {:.4} ({correct}/{})", compute_accuracy(&pairs)?, pairs.len());
        println!("wrote {}", out.display());
        Ok(())
    }

    fn reason(&self, include_label: bool) -> Result<()> {
        let ds = self.dataset()?;
        let deps = self.deps(&ds, Needs { chat: true, embed: false })?;
        let cases = &ds.eval_set[..self.cfg.reason.cases.min(ds.eval_set.len())];
        let entries = run_reasoning_pass(cases, &deps, include_label)?;
        let name = if include_label { "reasoning-labeled.txt" } else { "reasoning-blind.txt" };
        let path = self.cfg.dir("review")?.join(name);
        write_review(&entries, create(&path)?).with_context(|| format!("writing {}", path.display()))?;
        let failed = entries.iter().filter(|e| e.error.is_some()).count();
        println!("{}: {} cases, {failed} failed", path.display(), entries.len());
        Ok(())
    }

    fn report(&self, input: Option<&Path>) -> Result<()> {
        let path = match input {
            Some(p) => p.to_path_buf(),
            None => self.cfg.output_dir.join("reports").join(REPORT_FILE),
        };
        let f = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let report =
            EvaluationReport::read_json(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        report.verify().map_err(|e| anyhow!("{} is inconsistent: {e}", path.display()))?;
        print_series(&report);
        for s in &report.skipped {
            println!("skipped {} n={}: {}", s.cell.detector, s.cell.n_or_k, s.reason);
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct DetectSummary {
    detector: String,
    n: usize,
    accuracy: f64,
    correct: usize,
    total: usize,
    cases: Vec<CaseRecord>,
}

impl DetectSummary {
    fn new(detector: &str, n: usize, cases: Vec<CaseRecord>) -> Result<Self> {
        let pairs: Vec<_> = cases.iter().map(|c| (c.predicted, c.gold)).collect();
        let accuracy = compute_accuracy(&pairs)?;
        let correct = cases.iter().filter(|c| c.is_correct()).count();
        Ok(Self { detector: detector.into(), n, accuracy, correct, total: cases.len(), cases })
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn print_series(report: &EvaluationReport) {
    println!("{:<16} {:>4} {:>9} {:>9}", "detector", "n", "accuracy", "correct");
    for s in &report.series {
        for p in &s.points {
            println!("{:<16} {:>4} {:>9.4} {:>5}/{}", s.detector, p.n, p.accuracy, p.correct, p.total);
        }
    }
    if report.series.is_empty() {
        warn!("no detector cells ran");
    }
}

fn print_failures(cases: &[CaseRecord]) {
    let mut counts: std::collections::BTreeMap<&str, usize> = Default::default();
    for f in cases.iter().filter_map(|c| c.failure) {
        *counts.entry(f.name()).or_default() += 1;
    }
    for (class, n) in counts {
        println!("failures: {class} x{n}");
    }
}
