//! Detector strategies. Each detector turns one evaluation case into a
//! verdict; the harness looks them up by name in a [`DetectorRegistry`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::RunContext;
use crate::flow::LabeledExample;
use crate::llm::{DetectionOutcome, FailureClass};
use crate::mlp::{self, MlpError};
use crate::prompt::build_detection_prompt;
use crate::select::OrderingStrategy;

/// The built-in detector roster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectorKind {
    LlmRandom,
    LlmTopK,
    LlmFineTuned,
    MlpRandom,
    MlpTopK,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] = [
        DetectorKind::LlmRandom,
        DetectorKind::LlmTopK,
        DetectorKind::LlmFineTuned,
        DetectorKind::MlpRandom,
        DetectorKind::MlpTopK,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::LlmRandom => "llm-random",
            DetectorKind::LlmTopK => "llm-topk",
            DetectorKind::LlmFineTuned => "llm-finetuned",
            DetectorKind::MlpRandom => "mlp-random",
            DetectorKind::MlpTopK => "mlp-topk",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DetectorKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DetectorKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| format!("unknown detector {s:?}"))
    }
}

/// How few-shot examples are chosen for a case.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionMethod {
    Random,
    TopK,
}

/// A detector cell: which detector, how many examples, and (for retrieval
/// detectors) how the examples are arranged.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DetectorSpec {
    pub detector: String,
    pub n_or_k: usize,
    pub ordering: Option<OrderingStrategy>,
}

/// One evaluation case handed to a detector.
#[derive(Debug, Clone, Copy)]
pub struct EvalCase<'a> {
    pub position: usize,
    pub example: &'a LabeledExample,
}

#[derive(Debug, Clone)]
pub struct CaseVerdict {
    pub outcome: DetectionOutcome,
    /// Source indices of the examples the detector was given, in prompt order.
    pub selected: Vec<usize>,
    pub detail: Option<String>,
}

impl CaseVerdict {
    fn failed(class: FailureClass, detail: String, selected: Vec<usize>) -> Self {
        Self { outcome: DetectionOutcome::failed(class, String::new()), selected, detail: Some(detail) }
    }
}

pub trait Detector: Send + Sync {
    fn name(&self) -> &str;

    /// Whether the run needs the embedding index and per-case query vectors.
    fn selection(&self) -> Option<SelectionMethod>;

    /// Why a cell cannot run at all, e.g. top-k with k = 0.
    fn skip_reason(&self, spec: &DetectorSpec, ctx: &RunContext<'_>) -> Option<String>;

    fn detect(&self, spec: &DetectorSpec, ctx: &RunContext<'_>, case: EvalCase<'_>) -> CaseVerdict;
}

fn select(
    method: SelectionMethod,
    spec: &DetectorSpec,
    ctx: &RunContext<'_>,
    case: EvalCase<'_>,
) -> Result<Vec<LabeledExample>, String> {
    match method {
        SelectionMethod::Random => ctx.random_selection(spec.n_or_k, case.position),
        SelectionMethod::TopK => ctx.topk_selection(
            spec.n_or_k,
            case.position,
            spec.ordering.unwrap_or(OrderingStrategy::DescendingRelevance),
        ),
    }
}

fn indices(examples: &[LabeledExample]) -> Vec<usize> {
    examples.iter().map(|e| e.source_index).collect()
}

/// Few-shot prompted chat model.
pub struct FewShotDetector {
    name: &'static str,
    method: SelectionMethod,
}

impl FewShotDetector {
    pub fn random() -> Self {
        Self { name: DetectorKind::LlmRandom.name(), method: SelectionMethod::Random }
    }

    pub fn top_k() -> Self {
        Self { name: DetectorKind::LlmTopK.name(), method: SelectionMethod::TopK }
    }
}

impl Detector for FewShotDetector {
    fn name(&self) -> &str {
        self.name
    }

    fn selection(&self) -> Option<SelectionMethod> {
        Some(self.method)
    }

    fn skip_reason(&self, spec: &DetectorSpec, _: &RunContext<'_>) -> Option<String> {
        (self.method == SelectionMethod::TopK && spec.n_or_k == 0).then(|| "top-k undefined at k=0".to_string())
    }

    fn detect(&self, spec: &DetectorSpec, ctx: &RunContext<'_>, case: EvalCase<'_>) -> CaseVerdict {
        let examples = match select(self.method, spec, ctx, case) {
            Ok(e) => e,
            Err(msg) => return CaseVerdict::failed(FailureClass::TransportError, msg, Vec::new()),
        };
        let doc = build_detection_prompt(&examples, case.example, &ctx.deps.template);
        let (outcome, detail) = ctx.ask(&doc, &ctx.deps.chat_model, case.example.source_index);
        CaseVerdict { outcome, selected: indices(&examples), detail }
    }
}

/// Zero-shot prompt to a model fine-tuned on `n` examples. The model
/// identifier for each `n` comes from [`super::Deps::finetuned`].
pub struct FineTunedDetector;

impl Detector for FineTunedDetector {
    fn name(&self) -> &str {
        DetectorKind::LlmFineTuned.name()
    }

    fn selection(&self) -> Option<SelectionMethod> {
        None
    }

    fn skip_reason(&self, spec: &DetectorSpec, ctx: &RunContext<'_>) -> Option<String> {
        (!ctx.deps.finetuned.contains_key(&spec.n_or_k))
            .then(|| format!("no fine-tuned model configured for n={}", spec.n_or_k))
    }

    fn detect(&self, spec: &DetectorSpec, ctx: &RunContext<'_>, case: EvalCase<'_>) -> CaseVerdict {
        let model = &ctx.deps.finetuned[&spec.n_or_k];
        let doc = build_detection_prompt(&[], case.example, &ctx.deps.template);
        let (outcome, detail) = ctx.ask(&doc, model, case.example.source_index);
        CaseVerdict { outcome, selected: Vec::new(), detail }
    }
}

/// MLP baseline trained on exactly the examples the matching LLM detector
/// would see for this case.
pub struct MlpDetector {
    name: &'static str,
    method: SelectionMethod,
}

impl MlpDetector {
    pub fn random() -> Self {
        Self { name: DetectorKind::MlpRandom.name(), method: SelectionMethod::Random }
    }

    pub fn top_k() -> Self {
        Self { name: DetectorKind::MlpTopK.name(), method: SelectionMethod::TopK }
    }
}

impl Detector for MlpDetector {
    fn name(&self) -> &str {
        self.name
    }

    fn selection(&self) -> Option<SelectionMethod> {
        Some(self.method)
    }

    fn skip_reason(&self, spec: &DetectorSpec, _: &RunContext<'_>) -> Option<String> {
        (spec.n_or_k == 0).then(|| "baseline needs at least one training example".to_string())
    }

    fn detect(&self, spec: &DetectorSpec, ctx: &RunContext<'_>, case: EvalCase<'_>) -> CaseVerdict {
        let examples = match select(self.method, spec, ctx, case) {
            Ok(e) => e,
            Err(msg) => return CaseVerdict::failed(FailureClass::TransportError, msg, Vec::new()),
        };
        let selected = indices(&examples);
        if !case.example.is_numeric() {
            return CaseVerdict::failed(
                FailureClass::NonNumeric,
                "test case has non-numeric features".into(),
                selected,
            );
        }
        let usable: Vec<LabeledExample> = examples.into_iter().filter(LabeledExample::is_numeric).collect();
        let Some(first) = usable.first() else {
            return CaseVerdict::failed(FailureClass::Untrainable, "no numeric training examples".into(), selected);
        };
        // A single-class selection can only ever yield that class.
        if usable.iter().all(|e| e.label == first.label) {
            let raw = format!("constant {} (single-class selection)", first.label);
            return CaseVerdict {
                outcome: DetectionOutcome::predicted(first.label, raw, None),
                selected,
                detail: None,
            };
        }
        let model = match mlp::train(&usable, &ctx.deps.mlp) {
            Ok(m) => m,
            Err(e) => return CaseVerdict::failed(FailureClass::Untrainable, e.to_string(), selected),
        };
        match mlp::predict(&model, case.example) {
            Ok((label, score)) => CaseVerdict {
                outcome: DetectionOutcome::predicted(label, format!("score {score}"), None),
                selected,
                detail: None,
            },
            Err(e @ MlpError::NonNumericFeature { .. }) => {
                CaseVerdict::failed(FailureClass::NonNumeric, e.to_string(), selected)
            }
            Err(e) => CaseVerdict::failed(FailureClass::Untrainable, e.to_string(), selected),
        }
    }
}

/// Detectors addressable by name.
#[derive(Clone, Default)]
pub struct DetectorRegistry {
    entries: BTreeMap<String, Arc<dyn Detector>>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The five built-in detectors.
    pub fn with_defaults() -> Self {
        let mut r = Self::empty();
        r.register(Arc::new(FewShotDetector::random()));
        r.register(Arc::new(FewShotDetector::top_k()));
        r.register(Arc::new(FineTunedDetector));
        r.register(Arc::new(MlpDetector::random()));
        r.register(Arc::new(MlpDetector::top_k()));
        r
    }

    /// Adds or replaces a detector under its own name.
    pub fn register(&mut self, detector: Arc<dyn Detector>) {
        self.entries.insert(detector.name().to_string(), detector);
    }

    pub fn get(&self, name: &str) -> Option<Arc<dyn Detector>> {
        self.entries.get(name).cloned()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

impl fmt::Debug for DetectorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}
