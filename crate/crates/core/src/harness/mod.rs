//! Evaluation runs: accuracy sweeps over detector cells, the example
//! ordering comparison and the reasoning-review pass.
//!
//! Every case is computed independently from seeded inputs, so the case
//! records (and therefore the report) do not depend on the parallelism
//! limit or on the order in which cells finish.

mod detector;
mod report;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use detector::{
    CaseVerdict, Detector, DetectorKind, DetectorRegistry, DetectorSpec, EvalCase, FewShotDetector, FineTunedDetector,
    MlpDetector, SelectionMethod,
};
pub use report::{
    digest, CaseRecord, EvaluationReport, Series, SeriesPoint, SkippedCell, REPORT_FILE, REPORT_FORMAT, REPORT_VERSION,
    SERIES_FILE,
};

use crate::flow::{Dataset, LabeledExample, TRAIN_POOL_CAP};
use crate::label::TrafficLabel;
use crate::llm::{
    chat_complete, parse_detection_response_with, ChatBackend, ChatRequest, DetectionOutcome, FailureClass,
    ModelConfig, RefusalPatterns,
};
use crate::mlp::TrainConfig;
use crate::prompt::{build_detection_prompt, build_reasoning_prompt, render_row, PromptDocument, PromptTemplate};
use crate::select::{
    build_index, rank, reorder, select_random, select_top_k, Embedder, EmbeddingIndex, EmbeddingVector,
    OrderingStrategy, SelectError,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("accuracy of an empty case list is undefined")]
    EmptyCases,
    #[error("unknown detector {0:?}")]
    UnknownDetector(String),
    #[error("{detector}: n={n} outside 0..={max}")]
    NOutOfRange { detector: String, n: usize, max: usize },
    #[error("{detector} n={n} cannot run: {reason}")]
    Skipped { detector: String, n: usize, reason: String },
    #[error("ordering experiment needs k >= 2, got {0}")]
    KTooSmall(usize),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error("building the embedding index: {0}")]
    Index(#[from] SelectError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("report: {0}")]
    Report(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Fraction of cases whose prediction equals the gold label. Missing
/// predictions count as wrong.
pub fn compute_accuracy(cases: &[(Option<TrafficLabel>, TrafficLabel)]) -> Result<f64, HarnessError> {
    if cases.is_empty() {
        return Err(HarnessError::EmptyCases);
    }
    let correct = cases.iter().filter(|(p, g)| *p == Some(*g)).count() as u64;
    Ok(correct as f64 / cases.len() as u64 as f64)
}

/// Source of report timestamps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(u64),
}

impl Clock {
    pub fn now_ms(self) -> u64 {
        match self {
            Clock::System => SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64),
            Clock::Fixed(t) => t,
        }
    }
}

/// Backends and knobs shared by every detector in a run.
#[derive(Clone)]
pub struct Deps {
    pub chat: Arc<dyn ChatBackend>,
    pub embedder: Arc<dyn Embedder>,
    pub chat_model: ModelConfig,
    /// Fine-tuned model per training-set size.
    pub finetuned: BTreeMap<usize, ModelConfig>,
    pub template: PromptTemplate,
    pub reasoning_template: PromptTemplate,
    pub refusals: RefusalPatterns,
    pub mlp: TrainConfig,
    pub sampling_seed: u64,
    /// Draw a fresh random selection per case (seed xor case position)
    /// instead of one draw per cell.
    pub redraw_per_case: bool,
    pub topk_ordering: OrderingStrategy,
    pub parallelism: usize,
    pub clock: Clock,
    /// Additional seeds to record in reports, e.g. the embedder's.
    pub extra_seeds: BTreeMap<String, u64>,
}

impl Deps {
    pub fn new(chat: Arc<dyn ChatBackend>, embedder: Arc<dyn Embedder>) -> Self {
        Self {
            chat,
            embedder,
            chat_model: ModelConfig::default(),
            finetuned: BTreeMap::new(),
            template: PromptTemplate::detection(),
            reasoning_template: PromptTemplate::reasoning(),
            refusals: RefusalPatterns::default(),
            mlp: TrainConfig::default(),
            sampling_seed: 13,
            redraw_per_case: true,
            topk_ordering: OrderingStrategy::DescendingRelevance,
            parallelism: 4,
            clock: Clock::System,
            extra_seeds: BTreeMap::new(),
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool, HarnessError> {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(self.parallelism.max(1)).build()?)
    }
}

/// Per-run state handed to detectors: the dataset, the shared backends and,
/// when a retrieval detector participates, the index plus one query vector
/// per evaluation case.
pub struct RunContext<'a> {
    pub dataset: &'a Dataset,
    pub deps: &'a Deps,
    index: Option<EmbeddingIndex>,
    queries: Vec<Result<EmbeddingVector, String>>,
}

impl<'a> RunContext<'a> {
    fn new(dataset: &'a Dataset, deps: &'a Deps) -> Self {
        Self { dataset, deps, index: None, queries: Vec::new() }
    }

    fn with_retrieval(mut self, pool: &rayon::ThreadPool) -> Result<Self, HarnessError> {
        let deps = self.deps;
        self.index = Some(build_index(&self.dataset.train_pool, &deps.template, deps.embedder.as_ref())?);
        self.queries = pool.install(|| {
            self.dataset
                .eval_set
                .par_iter()
                .map(|e| deps.embedder.embed(&render_row(e, false, &deps.template)).map_err(|err| err.to_string()))
                .collect()
        });
        Ok(self)
    }

    fn query(&self, position: usize) -> Result<(&EmbeddingIndex, &EmbeddingVector), String> {
        let index = self.index.as_ref().ok_or("no embedding index for this run")?;
        let q = self.queries.get(position).ok_or("no query vector for case")?;
        q.as_ref().map(|q| (index, q)).map_err(|e| format!("embedding test case: {e}"))
    }

    pub fn random_selection(&self, n: usize, position: usize) -> Result<Vec<LabeledExample>, String> {
        let seed =
            if self.deps.redraw_per_case { self.deps.sampling_seed ^ position as u64 } else { self.deps.sampling_seed };
        select_random(&self.dataset.train_pool, n, seed).map_err(|e| e.to_string())
    }

    pub fn topk_selection(
        &self,
        k: usize,
        position: usize,
        ordering: OrderingStrategy,
    ) -> Result<Vec<LabeledExample>, String> {
        let (index, q) = self.query(position)?;
        select_top_k(index, q, k, ordering).map_err(|e| e.to_string())
    }

    /// Sends a prompt and parses the reply. Transport problems become a
    /// `TransportError` outcome with the error text as detail.
    pub fn ask(&self, doc: &PromptDocument, model: &ModelConfig, case_id: usize) -> (DetectionOutcome, Option<String>) {
        let request = ChatRequest { document: doc, model, case_id: Some(case_id) };
        match chat_complete(self.deps.chat.as_ref(), &request) {
            Ok(c) => (parse_detection_response_with(&c.text, &self.deps.refusals), None),
            Err(e) => (DetectionOutcome::failed(FailureClass::TransportError, String::new()), Some(e.to_string())),
        }
    }
}

fn record(cell: &DetectorSpec, position: usize, example: &LabeledExample, verdict: CaseVerdict) -> CaseRecord {
    let o = verdict.outcome;
    CaseRecord {
        cell: cell.clone(),
        case_position: position,
        source_index: example.source_index,
        gold: example.label,
        predicted: o.predicted,
        failure: o.failure,
        selected: verdict.selected,
        response_digest: digest(&o.raw_response),
        raw_response: o.raw_response,
        reasoning: o.reasoning,
        detail: verdict.detail,
    }
}

struct Plan {
    runnable: Vec<(DetectorSpec, Arc<dyn Detector>)>,
    skipped: Vec<SkippedCell>,
}

fn plan(cells: &[DetectorSpec], ctx: &RunContext<'_>, registry: &DetectorRegistry) -> Result<Plan, HarnessError> {
    let mut runnable = Vec::new();
    let mut skipped = Vec::new();
    for cell in cells {
        let detector =
            registry.get(&cell.detector).ok_or_else(|| HarnessError::UnknownDetector(cell.detector.clone()))?;
        let max = if detector.selection().is_some() {
            ctx.dataset.train_pool.len().min(TRAIN_POOL_CAP)
        } else {
            TRAIN_POOL_CAP
        };
        if cell.n_or_k > max {
            return Err(HarnessError::NOutOfRange { detector: cell.detector.clone(), n: cell.n_or_k, max });
        }
        match detector.skip_reason(cell, ctx) {
            Some(reason) => skipped.push(SkippedCell { cell: cell.clone(), reason }),
            None => runnable.push((cell.clone(), detector)),
        }
    }
    Ok(Plan { runnable, skipped })
}

/// Cells that ran, cells skipped with a reason, and every case record.
type Executed = (Vec<DetectorSpec>, Vec<SkippedCell>, Vec<CaseRecord>);

fn execute(
    cells: &[DetectorSpec],
    dataset: &Dataset,
    deps: &Deps,
    registry: &DetectorRegistry,
) -> Result<Executed, HarnessError> {
    if dataset.eval_set.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }
    let pool = deps.pool()?;
    let mut ctx = RunContext::new(dataset, deps);
    let plan = plan(cells, &ctx, registry)?;
    if plan.runnable.iter().any(|(_, d)| d.selection() == Some(SelectionMethod::TopK)) {
        ctx = ctx.with_retrieval(&pool)?;
    }
    let work: Vec<(usize, usize)> =
        (0..plan.runnable.len()).flat_map(|c| (0..dataset.eval_set.len()).map(move |p| (c, p))).collect();
    let ctx = &ctx;
    let records: Vec<CaseRecord> = pool.install(|| {
        work.par_iter()
            .map(|&(c, position)| {
                let (spec, detector) = &plan.runnable[c];
                let example = &dataset.eval_set[position];
                let verdict = detector.detect(spec, ctx, EvalCase { position, example });
                record(spec, position, example, verdict)
            })
            .collect()
    });
    let ran = plan.runnable.into_iter().map(|(s, _)| s).collect();
    Ok((ran, plan.skipped, records))
}

/// Runs one detector cell over the evaluation set.
pub fn run_detector(
    spec: &DetectorSpec,
    dataset: &Dataset,
    deps: &Deps,
    registry: &DetectorRegistry,
) -> Result<Vec<CaseRecord>, HarnessError> {
    let (_, skipped, records) = execute(std::slice::from_ref(spec), dataset, deps, registry)?;
    if let Some(s) = skipped.into_iter().next() {
        return Err(HarnessError::Skipped { detector: s.cell.detector, n: s.cell.n_or_k, reason: s.reason });
    }
    Ok(records)
}

/// The cells of a sweep: every detector crossed with every `n`. Retrieval
/// detectors carry the configured ordering.
pub fn sweep_cells(
    n_values: &[usize],
    detectors: &[String],
    deps: &Deps,
    registry: &DetectorRegistry,
) -> Result<Vec<DetectorSpec>, HarnessError> {
    let mut cells = Vec::with_capacity(n_values.len() * detectors.len());
    for name in detectors {
        let d = registry.get(name).ok_or_else(|| HarnessError::UnknownDetector(name.clone()))?;
        let ordering = (d.selection() == Some(SelectionMethod::TopK)).then_some(deps.topk_ordering);
        for &n in n_values {
            cells.push(DetectorSpec { detector: name.clone(), n_or_k: n, ordering });
        }
    }
    Ok(cells)
}

/// Accuracy-versus-n sweep over the cross product of detectors and sizes.
pub fn run_sweep(
    n_values: &[usize],
    detectors: &[String],
    dataset: &Dataset,
    deps: &Deps,
    registry: &DetectorRegistry,
) -> Result<EvaluationReport, HarnessError> {
    let started = deps.clock.now_ms();
    let cells = sweep_cells(n_values, detectors, deps, registry)?;
    let (ran, skipped, cases) = execute(&cells, dataset, deps, registry)?;
    let series = report::build_series(&ran, &cases)?;

    let mut seeds = deps.extra_seeds.clone();
    seeds.insert("dataset".into(), dataset.selection_seed);
    seeds.insert("sampling".into(), deps.sampling_seed);
    seeds.insert("mlp".into(), deps.mlp.seed);

    Ok(EvaluationReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        eval_size: dataset.eval_set.len(),
        series,
        skipped,
        cases,
        seeds,
        started_unix_ms: started,
        finished_unix_ms: deps.clock.now_ms(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingResult {
    pub strategy: OrderingStrategy,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub k: usize,
    pub results: Vec<OrderingResult>,
    pub cases: Vec<CaseRecord>,
}

impl OrderingReport {
    pub fn accuracy(&self, strategy: OrderingStrategy) -> Option<f64> {
        self.results.iter().find(|r| r.strategy == strategy).map(|r| r.accuracy)
    }
}

/// Few-shot top-k detection under several example arrangements. Retrieval
/// runs once per case; only the arrangement differs between strategies.
pub fn run_ordering_experiment(
    k: usize,
    strategies: &[OrderingStrategy],
    dataset: &Dataset,
    deps: &Deps,
) -> Result<OrderingReport, HarnessError> {
    if k < 2 {
        return Err(HarnessError::KTooSmall(k));
    }
    if dataset.eval_set.is_empty() {
        return Err(HarnessError::EmptyEvalSet);
    }
    let max = dataset.train_pool.len();
    if k > max {
        return Err(HarnessError::NOutOfRange { detector: DetectorKind::LlmTopK.name().into(), n: k, max });
    }
    let pool = deps.pool()?;
    let ctx = RunContext::new(dataset, deps).with_retrieval(&pool)?;
    let ranked: Vec<Result<Vec<LabeledExample>, String>> = (0..dataset.eval_set.len())
        .map(|p| {
            let (index, q) = ctx.query(p)?;
            let hits = rank(index, q).map_err(|e| e.to_string())?;
            Ok(hits.into_iter().take(k).map(|(_, e)| e.example.clone()).collect())
        })
        .collect();

    let work: Vec<(usize, usize)> =
        (0..strategies.len()).flat_map(|s| (0..dataset.eval_set.len()).map(move |p| (s, p))).collect();
    let ctx = &ctx;
    let cases: Vec<CaseRecord> = pool.install(|| {
        work.par_iter()
            .map(|&(s, position)| {
                let strategy = strategies[s];
                let cell =
                    DetectorSpec { detector: DetectorKind::LlmTopK.name().into(), n_or_k: k, ordering: Some(strategy) };
                let example = &dataset.eval_set[position];
                let verdict = match &ranked[position] {
                    Ok(hits) => {
                        let arranged = reorder(hits.clone(), strategy);
                        let doc = build_detection_prompt(&arranged, example, &deps.template);
                        let (outcome, detail) = ctx.ask(&doc, &deps.chat_model, example.source_index);
                        CaseVerdict { outcome, selected: arranged.iter().map(|e| e.source_index).collect(), detail }
                    }
                    Err(msg) => CaseVerdict {
                        outcome: DetectionOutcome::failed(FailureClass::TransportError, String::new()),
                        selected: Vec::new(),
                        detail: Some(msg.clone()),
                    },
                };
                record(&cell, position, example, verdict)
            })
            .collect()
    });

    let results = strategies
        .iter()
        .map(|&strategy| {
            let pairs: Vec<_> =
                cases.iter().filter(|c| c.cell.ordering == Some(strategy)).map(|c| (c.predicted, c.gold)).collect();
            Ok(OrderingResult {
                strategy,
                accuracy: compute_accuracy(&pairs)?,
                correct: pairs.iter().filter(|(p, g)| *p == Some(*g)).count(),
                total: pairs.len(),
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    Ok(OrderingReport { k, results, cases })
}

/// One block of the human-review file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub source_index: usize,
    pub gold: TrafficLabel,
    pub features: String,
    pub label_shown: bool,
    pub prompt: String,
    pub reasoning: String,
    pub error: Option<String>,
}

/// Asks the model to explain each case. Nothing is scored; the entries are
/// meant for manual review.
pub fn run_reasoning_pass(
    cases: &[LabeledExample],
    deps: &Deps,
    include_label: bool,
) -> Result<Vec<ReviewEntry>, HarnessError> {
    let pool = deps.pool()?;
    let template = &deps.reasoning_template;
    Ok(pool.install(|| {
        cases
            .par_iter()
            .map(|case| {
                let doc = build_reasoning_prompt(case, template, include_label);
                let request = ChatRequest { document: &doc, model: &deps.chat_model, case_id: Some(case.source_index) };
                let (reasoning, error) = match chat_complete(deps.chat.as_ref(), &request) {
                    Ok(c) => (c.text, None),
                    Err(e) => (String::new(), Some(e.to_string())),
                };
                ReviewEntry {
                    source_index: case.source_index,
                    gold: case.label,
                    features: render_row(case, false, template),
                    label_shown: include_label,
                    prompt: doc.text,
                    reasoning,
                    error,
                }
            })
            .collect()
    }))
}

/// Plain-text review file, one block per case.
pub fn write_review<W: Write>(entries: &[ReviewEntry], mut sink: W) -> std::io::Result<()> {
    for e in entries {
        writeln!(sink, "=== case {} ===", e.source_index)?;
        writeln!(sink, "gold: {}", e.gold)?;
        writeln!(sink, "label shown in prompt: {}", if e.label_shown { "yes" } else { "no" })?;
        writeln!(sink, "features: {}", e.features)?;
        writeln!(sink, "--- prompt ---")?;
        writeln!(sink, "{}", e.prompt)?;
        writeln!(sink, "--- reasoning ---")?;
        match &e.error {
            Some(err) => writeln!(sink, "[error] {err}")?,
            None => writeln!(sink, "{}", e.reasoning)?,
        }
        writeln!(sink)?;
    }
    sink.flush()
}
