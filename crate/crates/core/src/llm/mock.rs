//! Deterministic offline backends.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, ClientError};
use crate::label::TrafficLabel;
use crate::prompt::PromptMode;
use crate::select::{Embedder, EmbeddingVector};

pub const MOCK_EMBEDDING_DIM: usize = 64;

/// How a [`MockChatBackend`] decides its answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MockBehavior {
    /// Answers the gold label.
    Oracle,
    /// Answers the opposite of the gold label.
    Adversarial,
    /// Gold label iff the prompt carries at least this many examples, else flipped.
    Step(usize),
    /// Label derived from a hash of the prompt text.
    Hash,
    /// Always returns this text.
    Fixed(String),
}

impl FromStr for MockBehavior {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(MockBehavior::Oracle),
            "adversarial" => Ok(MockBehavior::Adversarial),
            "hash" => Ok(MockBehavior::Hash),
            _ => {
                let m = s
                    .strip_prefix("step:")
                    .ok_or_else(|| format!("unknown mock {s:?}; expected oracle, adversarial, step:<m> or hash"))?;
                m.parse().map(MockBehavior::Step).map_err(|_| format!("bad step threshold {m:?}"))
            }
        }
    }
}

impl fmt::Display for MockBehavior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MockBehavior::Oracle => f.write_str("oracle"),
            MockBehavior::Adversarial => f.write_str("adversarial"),
            MockBehavior::Step(m) => write!(f, "step:{m}"),
            MockBehavior::Hash => f.write_str("hash"),
            MockBehavior::Fixed(_) => f.write_str("fixed"),
        }
    }
}

/// Chat backend that never leaves the process. Gold labels are looked up by
/// the request's `case_id`.
pub struct MockChatBackend {
    behavior: MockBehavior,
    gold: HashMap<usize, TrafficLabel>,
    name: String,
}

impl MockChatBackend {
    pub fn new(behavior: MockBehavior, gold: HashMap<usize, TrafficLabel>) -> Self {
        let name = format!("mock:{behavior}");
        Self { behavior, gold, name }
    }

    fn verdict(&self, request: &ChatRequest<'_>) -> Option<TrafficLabel> {
        let gold = request.case_id.and_then(|id| self.gold.get(&id).copied());
        match &self.behavior {
            MockBehavior::Oracle => gold,
            MockBehavior::Adversarial => gold.map(TrafficLabel::flipped),
            MockBehavior::Step(m) => gold.map(|g| if request.document.example_count >= *m { g } else { g.flipped() }),
            MockBehavior::Hash => {
                let digest = Sha256::digest(request.document.text.as_bytes());
                Some(TrafficLabel::ALL[usize::from(digest[0] & 1)])
            }
            MockBehavior::Fixed(_) => None,
        }
    }
}

impl ChatBackend for MockChatBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        if let MockBehavior::Fixed(text) = &self.behavior {
            return Ok(text.clone());
        }
        let Some(label) = self.verdict(request) else {
            return Ok("I cannot determine the label.".into());
        };
        Ok(match request.document.mode {
            PromptMode::Detect => format!("$$${label}$$$"),
            PromptMode::Reason => format!(
                "Mock reasoning ({}): the feature row was read as {} traffic. $$${label}$$$",
                self.behavior,
                label.as_str().to_lowercase()
            ),
        })
    }
}

/// Fails the first `failures` calls with a transport error, then delegates.
pub struct FlakyBackend {
    inner: Arc<dyn ChatBackend>,
    failures: u32,
    calls: AtomicU32,
}

impl FlakyBackend {
    pub fn new(inner: Arc<dyn ChatBackend>, failures: u32) -> Self {
        Self { inner, failures, calls: AtomicU32::new(0) }
    }

    pub fn calls(&self) -> u32 {
        self.calls.load(Ordering::SeqCst)
    }
}

impl ChatBackend for FlakyBackend {
    fn name(&self) -> &str {
        "flaky"
    }

    fn send(&self, request: &ChatRequest<'_>) -> Result<String, ClientError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst);
        if n < self.failures {
            return Err(ClientError::Transport { attempts: 0, message: "injected failure".into() });
        }
        self.inner.send(request)
    }
}

/// Seeded random projection of token and token-bigram hashes. Identical
/// texts map to identical vectors; texts sharing tokens land close together.
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    seed: u64,
    dimension: usize,
}

impl HashEmbedder {
    pub fn new(seed: u64) -> Self {
        Self { seed, dimension: MOCK_EMBEDDING_DIM }
    }

    pub fn with_dimension(seed: u64, dimension: usize) -> Self {
        Self { seed, dimension }
    }

    fn add_feature(&self, acc: &mut [f64], feature: &[&str]) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        for part in feature {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        for slot in acc.iter_mut() {
            *slot += rng.gen_range(-1.0..1.0);
        }
    }
}

impl Embedder for HashEmbedder {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        let tokens: Vec<&str> = text.split(|c: char| c.is_whitespace() || c == '|').filter(|t| !t.is_empty()).collect();
        if tokens.is_empty() {
            return Err(ClientError::EmptyInput);
        }
        let mut acc = vec![0.0; self.dimension];
        for t in &tokens {
            self.add_feature(&mut acc, &[t]);
        }
        for pair in tokens.windows(2) {
            self.add_feature(&mut acc, pair);
        }
        EmbeddingVector::new(acc).map_err(|e| ClientError::Protocol(e.to_string()))
    }
}
