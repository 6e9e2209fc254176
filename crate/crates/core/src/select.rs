//! Few-shot example selection: uniform random draws and cosine top-k
//! retrieval over an in-memory embedding index, plus the arrangements used
//! to place retrieved examples inside a prompt.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::flow::{FeaturePair, LabeledExample, FEATURE_COUNT};
use crate::label::TrafficLabel;
use crate::llm::ClientError;
use crate::prompt::{render_row, PromptTemplate};

pub const INDEX_MAGIC: &str = "flowshot-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SelectError {
    #[error("embedding dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("embedding for example {source_index} failed: {source}")]
    EmbedderFailure { source_index: usize, source: ClientError },
    #[error("cannot build an index from an empty pool")]
    EmptyPool,
    #[error("requested {requested} examples from a pool of {available}")]
    NTooLarge { requested: usize, available: usize },
    #[error("k={requested} outside 1..={available}")]
    KTooLarge { requested: usize, available: usize },
    #[error("zero vector has no direction")]
    DegenerateVector,
    #[error("embedding must be non-empty with finite entries")]
    InvalidVector,
    #[error("index file: {0}")]
    Format(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, SelectError> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(SelectError::InvalidVector);
        }
        Ok(Self(values))
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = SelectError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.0
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, SelectError> {
    if a.dimension() != b.dimension() {
        return Err(SelectError::DimensionMismatch { expected: a.dimension(), found: b.dimension() });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.0.iter().zip(&b.0) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(SelectError::DegenerateVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Maps text to a vector. Implemented by the HTTP embeddings client and the
/// offline hash embedder.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError>;
}

impl<E: Embedder + ?Sized> Embedder for std::sync::Arc<E> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ClientError> {
        (**self).embed(text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub source_index: usize,
    pub vector: EmbeddingVector,
    pub example: LabeledExample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dimension: usize,
    entries: Vec<IndexEntry>,
}

impl EmbeddingIndex {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Index over precomputed entries; sorted by source index, which must be unique.
    pub fn from_entries(mut entries: Vec<IndexEntry>) -> Result<Self, SelectError> {
        let dimension = entries.first().ok_or(SelectError::EmptyPool)?.vector.dimension();
        if let Some(bad) = entries.iter().find(|e| e.vector.dimension() != dimension) {
            return Err(SelectError::DimensionMismatch { expected: dimension, found: bad.vector.dimension() });
        }
        entries.sort_by_key(|e| e.source_index);
        if entries.windows(2).any(|w| w[0].source_index == w[1].source_index) {
            return Err(SelectError::Format("duplicate source_index".into()));
        }
        Ok(Self { dimension, entries })
    }

    /// Writes the versioned flat index file.
    ///
    /// Layout (comma separated, one record per line):
    /// `flowshot-index,1,<dimension>,<count>`, then
    /// `features,<name1>,<name2>,<name3>,<name4>`, then per entry
    /// `<source_index>,<v1>,<v2>,<v3>,<v4>,<label>,<x_0>,...,<x_{dimension-1}>`.
    pub fn write_to<W: Write>(&self, sink: W) -> Result<(), SelectError> {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(sink);
        w.write_record([
            INDEX_MAGIC,
            &INDEX_VERSION.to_string(),
            &self.dimension.to_string(),
            &self.len().to_string(),
        ])?;
        let names: Vec<&str> = match self.entries.first() {
            Some(e) => e.example.pairs.iter().map(|p| p.name.as_str()).collect(),
            None => Vec::new(),
        };
        let mut header = vec!["features"];
        header.extend(names);
        w.write_record(&header)?;
        for e in &self.entries {
            let mut row = vec![e.source_index.to_string()];
            row.extend(e.example.pairs.iter().map(|p| p.value.clone()));
            row.push(e.example.label.to_string());
            row.extend(e.vector.values().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn read_from<R: Read>(source: R) -> Result<Self, SelectError> {
        let bad = |m: &str| SelectError::Format(m.to_string());
        let mut r = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(source);
        let mut rows = r.records();
        let head = rows.next().ok_or_else(|| bad("missing header"))??;
        if head.len() != 4 || &head[0] != INDEX_MAGIC {
            return Err(bad("not an index file"));
        }
        if head[1].parse::<u32>().ok() != Some(INDEX_VERSION) {
            return Err(bad("unsupported index version"));
        }
        let dimension: usize = head[2].parse().map_err(|_| bad("bad dimension"))?;
        let count: usize = head[3].parse().map_err(|_| bad("bad count"))?;
        let names = rows.next().ok_or_else(|| bad("missing feature names"))??;
        if names.len() != FEATURE_COUNT + 1 || &names[0] != "features" {
            return Err(bad("bad feature name record"));
        }
        let mut entries = Vec::with_capacity(count);
        for row in rows {
            let row = row?;
            if row.len() != 1 + FEATURE_COUNT + 1 + dimension {
                return Err(bad("entry has wrong field count"));
            }
            let source_index: usize = row[0].parse().map_err(|_| bad("bad source_index"))?;
            let pairs: [FeaturePair; FEATURE_COUNT] =
                std::array::from_fn(|i| FeaturePair { name: names[i + 1].to_string(), value: row[i + 1].to_string() });
            let label: TrafficLabel = row[FEATURE_COUNT + 1].parse().map_err(|_| bad("bad label"))?;
            let values = row
                .iter()
                .skip(FEATURE_COUNT + 2)
                .map(|v| v.parse::<f64>().map_err(|_| bad("bad vector value")))
                .collect::<Result<Vec<_>, _>>()?;
            entries.push(IndexEntry {
                source_index,
                vector: EmbeddingVector::new(values)?,
                example: LabeledExample::new(pairs, label, source_index),
            });
        }
        if entries.len() != count {
            return Err(bad("entry count does not match header"));
        }
        let index = Self::from_entries(entries)?;
        if index.dimension != dimension {
            return Err(SelectError::DimensionMismatch { expected: dimension, found: index.dimension });
        }
        Ok(index)
    }
}

/// Text that gets embedded for an example: its unlabeled prompt row.
pub fn embedding_text(example: &LabeledExample, template: &PromptTemplate) -> String {
    render_row(example, false, template)
}

pub fn build_index(
    pool: &[LabeledExample],
    template: &PromptTemplate,
    embedder: &dyn Embedder,
) -> Result<EmbeddingIndex, SelectError> {
    if pool.is_empty() {
        return Err(SelectError::EmptyPool);
    }
    let entries = pool
        .iter()
        .map(|ex| {
            let vector = embedder
                .embed(&embedding_text(ex, template))
                .map_err(|source| SelectError::EmbedderFailure { source_index: ex.source_index, source })?;
            Ok(IndexEntry { source_index: ex.source_index, vector, example: ex.clone() })
        })
        .collect::<Result<Vec<_>, SelectError>>()?;
    EmbeddingIndex::from_entries(entries)
}

/// `n` examples drawn uniformly without replacement, in draw order.
pub fn select_random(pool: &[LabeledExample], n: usize, seed: u64) -> Result<Vec<LabeledExample>, SelectError> {
    if n > pool.len() {
        return Err(SelectError::NTooLarge { requested: n, available: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let (drawn, _) = order.partial_shuffle(&mut rng, n);
    Ok(drawn.iter().map(|&i| pool[i].clone()).collect())
}

/// Index entries sorted most-similar first, ties by ascending source index.
pub fn rank<'a>(index: &'a EmbeddingIndex, query: &EmbeddingVector) -> Result<Vec<(f64, &'a IndexEntry)>, SelectError> {
    if query.dimension() != index.dimension {
        return Err(SelectError::DimensionMismatch { expected: index.dimension, found: query.dimension() });
    }
    let mut scored = index
        .entries
        .iter()
        .map(|e| Ok((cosine_similarity(query, &e.vector)?, e)))
        .collect::<Result<Vec<_>, SelectError>>()?;
    scored
        .sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal).then(a.1.source_index.cmp(&b.1.source_index)));
    Ok(scored)
}

pub fn select_top_k(
    index: &EmbeddingIndex,
    query: &EmbeddingVector,
    k: usize,
    strategy: OrderingStrategy,
) -> Result<Vec<LabeledExample>, SelectError> {
    if k == 0 || k > index.len() {
        return Err(SelectError::KTooLarge { requested: k, available: index.len() });
    }
    let ranked: Vec<LabeledExample> = rank(index, query)?.into_iter().take(k).map(|(_, e)| e.example.clone()).collect();
    Ok(reorder(ranked, strategy))
}

/// Arrangement of retrieved examples inside a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrderingStrategy {
    DescendingRelevance,
    MostRelevantMiddle,
    MostRelevantEnds,
    AsGiven,
}

impl OrderingStrategy {
    pub const ALL: [OrderingStrategy; 4] = [
        OrderingStrategy::DescendingRelevance,
        OrderingStrategy::MostRelevantMiddle,
        OrderingStrategy::MostRelevantEnds,
        OrderingStrategy::AsGiven,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OrderingStrategy::DescendingRelevance => "descending-relevance",
            OrderingStrategy::MostRelevantMiddle => "most-relevant-middle",
            OrderingStrategy::MostRelevantEnds => "most-relevant-ends",
            OrderingStrategy::AsGiven => "as-given",
        }
    }
}

impl fmt::Display for OrderingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OrderingStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        OrderingStrategy::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| format!("unknown ordering strategy {s:?}"))
    }
}

/// Rearranges a most-relevant-first list.
///
/// `MostRelevantEnds` puts ranks 1, 3, 5, ... in order at the front and
/// ranks ..., 6, 4, 2 at the back, so the best two items sit at either end.
/// `MostRelevantMiddle` applies the same interleave to the reversed list,
/// which puts the best item at the center and the worst at the ends.
pub fn reorder<T>(ranked: Vec<T>, strategy: OrderingStrategy) -> Vec<T> {
    match strategy {
        OrderingStrategy::DescendingRelevance | OrderingStrategy::AsGiven => ranked,
        OrderingStrategy::MostRelevantEnds => ends_interleave(ranked),
        OrderingStrategy::MostRelevantMiddle => {
            let mut r = ranked;
            r.reverse();
            ends_interleave(r)
        }
    }
}

fn ends_interleave<T>(ranked: Vec<T>) -> Vec<T> {
    let mut front = Vec::with_capacity(ranked.len());
    let mut back = Vec::with_capacity(ranked.len() / 2);
    for (i, item) in ranked.into_iter().enumerate() {
        if i % 2 == 0 {
            front.push(item);
        } else {
            back.push(item);
        }
    }
    front.extend(back.into_iter().rev());
    front
}
