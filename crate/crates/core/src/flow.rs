//! Flow-record ingestion.
//!
//! Reads CIC-IDS style flow CSVs, canonicalizes the label column, projects
//! rows onto a four-feature selection and splits the result into a capped
//! training pool and an evaluation set.

use std::collections::HashMap;
use std::io::{Read, Write};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::label::TrafficLabel;

/// Largest training pool the harness ever builds.
pub const TRAIN_POOL_CAP: usize = 70;

/// Number of features in a projected example.
pub const FEATURE_COUNT: usize = 4;

pub const DEFAULT_LABEL_COLUMN: &str = "Label";

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("label column {0:?} not found in header")]
    MissingLabelColumn(String),
    #[error("line {line}: unknown label value {value:?}")]
    UnknownLabelValue { line: u64, value: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },
    #[error("feature {0:?} not present in record")]
    MissingFeature(String),
    #[error("feature selection must name exactly {FEATURE_COUNT} columns, got {0}")]
    SelectionArity(usize),
    #[error("need {needed} records for the requested pools, only {available} available")]
    InsufficientRecords { needed: usize, available: usize },
    #[error("train size {0} exceeds the cap of {TRAIN_POOL_CAP}")]
    TrainSizeExceedsCap(usize),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// One parsed CSV row. `features` keeps the source column order and excludes
/// the label column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub index: usize,
    pub features: IndexMap<String, String>,
    pub label: TrafficLabel,
}

/// Parses a flow CSV. Header names are trimmed; a repeated header name gets a
/// `.1`, `.2`, ... suffix so every column stays addressable.
pub fn parse_flow_csv<R: Read>(source: R, label_column: &str) -> Result<Vec<FlowRecord>, IngestError> {
    let mut reader =
        csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(source);

    let headers = dedup_headers(reader.headers()?.iter());
    let label_pos = headers
        .iter()
        .position(|h| h == label_column.trim())
        .ok_or_else(|| IngestError::MissingLabelColumn(label_column.to_string()))?;

    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != headers.len() {
            return Err(IngestError::RaggedRow { line, expected: headers.len(), found: row.len() });
        }
        let raw_label = &row[label_pos];
        let label = TrafficLabel::parse_loose(raw_label)
            .ok_or_else(|| IngestError::UnknownLabelValue { line, value: raw_label.to_string() })?;
        let features = headers
            .iter()
            .zip(row.iter())
            .enumerate()
            .filter(|(i, _)| *i != label_pos)
            .map(|(_, (h, v))| (h.clone(), v.to_string()))
            .collect();
        records.push(FlowRecord { index: records.len(), features, label });
    }
    Ok(records)
}

fn dedup_headers<'a>(raw: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut seen: HashMap<String, usize> = HashMap::new();
    raw.map(|h| {
        let h = h.trim().to_string();
        let n = seen.entry(h.clone()).or_insert(0);
        *n += 1;
        if *n == 1 {
            h
        } else {
            format!("{h}.{}", *n - 1)
        }
    })
    .collect()
}

/// Writes records back out with the feature columns in their stored order and
/// the label as the final column.
pub fn write_flow_csv<W: Write>(records: &[FlowRecord], label_column: &str, sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    if let Some(first) = records.first() {
        let mut header: Vec<&str> = first.features.keys().map(String::as_str).collect();
        header.push(label_column);
        w.write_record(&header)?;
    }
    for r in records {
        let mut row: Vec<&str> = r.features.values().map(String::as_str).collect();
        row.push(r.label.as_str());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// The ordered four columns that make up an example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct FeatureSelection {
    names: [String; FEATURE_COUNT],
}

impl FeatureSelection {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self, IngestError> {
        let names: Vec<String> = names.into_iter().map(|s| s.into().trim().to_string()).collect();
        let n = names.len();
        let names = names.try_into().map_err(|_| IngestError::SelectionArity(n))?;
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String; FEATURE_COUNT] {
        &self.names
    }

    /// Checks that every selected name is a column of `record`.
    pub fn validate_against(&self, record: &FlowRecord) -> Result<(), IngestError> {
        for name in &self.names {
            if !record.features.contains_key(name) {
                return Err(IngestError::MissingFeature(name.clone()));
            }
        }
        Ok(())
    }
}

impl TryFrom<Vec<String>> for FeatureSelection {
    type Error = IngestError;

    fn try_from(v: Vec<String>) -> Result<Self, Self::Error> {
        FeatureSelection::new(v)
    }
}

impl From<FeatureSelection> for Vec<String> {
    fn from(s: FeatureSelection) -> Self {
        s.names.into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeaturePair {
    pub name: String,
    pub value: String,
}

/// A flow reduced to the selected features: the unit of prompting,
/// embedding and MLP training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub pairs: [FeaturePair; FEATURE_COUNT],
    /// `None` marks a value that is not a finite number ("Infinity", "NaN", "").
    pub numeric_view: [Option<f64>; FEATURE_COUNT],
    pub label: TrafficLabel,
    pub source_index: usize,
}

impl LabeledExample {
    pub fn new(pairs: [FeaturePair; FEATURE_COUNT], label: TrafficLabel, source_index: usize) -> Self {
        let numeric_view = std::array::from_fn(|i| parse_numeric(&pairs[i].value));
        Self { pairs, numeric_view, label, source_index }
    }

    /// All four features as numbers, or `None` if any is non-numeric.
    pub fn numeric_features(&self) -> Option<[f64; FEATURE_COUNT]> {
        let mut out = [0.0; FEATURE_COUNT];
        for (slot, v) in out.iter_mut().zip(self.numeric_view) {
            *slot = v?;
        }
        Some(out)
    }

    pub fn is_numeric(&self) -> bool {
        self.numeric_view.iter().all(Option::is_some)
    }
}

/// Best-effort numeric reading of a raw value; only finite numbers count.
pub fn parse_numeric(value: &str) -> Option<f64> {
    value.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn project(record: &FlowRecord, selection: &FeatureSelection) -> Result<LabeledExample, IngestError> {
    let mut pairs = Vec::with_capacity(FEATURE_COUNT);
    for name in selection.names() {
        let value = record.features.get(name).ok_or_else(|| IngestError::MissingFeature(name.clone()))?;
        pairs.push(FeaturePair { name: name.clone(), value: value.clone() });
    }
    let pairs: [FeaturePair; FEATURE_COUNT] = pairs.try_into().expect("selection has four names");
    Ok(LabeledExample::new(pairs, record.label, record.index))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub selection: FeatureSelection,
    pub train_pool: Vec<LabeledExample>,
    pub eval_set: Vec<LabeledExample>,
    pub selection_seed: u64,
}

impl Dataset {
    pub fn label_counts(examples: &[LabeledExample]) -> (usize, usize) {
        let ddos = examples.iter().filter(|e| e.label == TrafficLabel::Ddos).count();
        (examples.len() - ddos, ddos)
    }
}

/// Samples a stratified, seeded train/eval split. Each pool gets at least one
/// example of every label the source contains, provided the pool has room.
pub fn build_dataset(
    records: &[FlowRecord],
    selection: &FeatureSelection,
    train_size: usize,
    eval_size: usize,
    seed: u64,
) -> Result<Dataset, IngestError> {
    if train_size > TRAIN_POOL_CAP {
        return Err(IngestError::TrainSizeExceedsCap(train_size));
    }
    let needed = train_size + eval_size;
    if records.len() < needed {
        return Err(IngestError::InsufficientRecords { needed, available: records.len() });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<Vec<LabeledExample>> = vec![Vec::new(); TrafficLabel::ALL.len()];
    for r in records {
        let ex = project(r, selection)?;
        groups[label_slot(ex.label)].push(ex);
    }
    for g in &mut groups {
        g.shuffle(&mut rng);
    }

    let avail: Vec<usize> = groups.iter().map(Vec::len).collect();
    let reserve: Vec<usize> = avail.iter().map(|&a| usize::from(eval_size >= 2 && a >= 2)).collect();
    let train_avail: Vec<usize> = avail.iter().zip(&reserve).map(|(a, r)| a - r).collect();
    let train_q = allocate(train_size, &train_avail);
    let rest: Vec<usize> = avail.iter().zip(&train_q).map(|(a, t)| a - t).collect();
    let eval_q = allocate(eval_size, &rest);

    let mut train_pool = Vec::with_capacity(train_size);
    let mut eval_set = Vec::with_capacity(eval_size);
    for ((g, t), e) in groups.into_iter().zip(train_q).zip(eval_q) {
        let mut it = g.into_iter();
        train_pool.extend(it.by_ref().take(t));
        eval_set.extend(it.take(e));
    }
    train_pool.sort_by_key(|e| e.source_index);
    eval_set.sort_by_key(|e| e.source_index);

    Ok(Dataset { selection: selection.clone(), train_pool, eval_set, selection_seed: seed })
}

fn label_slot(label: TrafficLabel) -> usize {
    match label {
        TrafficLabel::Benign => 0,
        TrafficLabel::Ddos => 1,
    }
}

/// Largest-remainder proportional allocation of `size` slots over classes
/// with `avail` members, bumping empty quotas to one where possible.
/// Requires `size <= avail.iter().sum()`.
fn allocate(size: usize, avail: &[usize]) -> Vec<usize> {
    let total: usize = avail.iter().sum();
    debug_assert!(size <= total);
    if size == 0 || total == 0 {
        return vec![0; avail.len()];
    }
    let mut quota: Vec<usize> = avail.iter().map(|&a| size * a / total).collect();
    let mut order: Vec<usize> = (0..avail.len()).collect();
    order.sort_by_key(|&i| std::cmp::Reverse((size * avail[i]) % total));
    let mut left = size - quota.iter().sum::<usize>();
    for &i in &order {
        if left == 0 {
            break;
        }
        if quota[i] < avail[i] {
            quota[i] += 1;
            left -= 1;
        }
    }
    let nonempty = avail.iter().filter(|&&a| a > 0).count();
    if size >= nonempty {
        for i in 0..avail.len() {
            if avail[i] > 0 && quota[i] == 0 {
                let donor = (0..avail.len()).max_by_key(|&j| quota[j]).expect("nonempty");
                quota[donor] -= 1;
                quota[i] = 1;
            }
        }
    }
    quota
}

/// Dumps projected examples as `feature1..feature4,label,source_index`.
pub fn write_pool_csv<W: Write>(examples: &[LabeledExample], sink: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["feature1", "feature2", "feature3", "feature4", "label", "source_index"])?;
    for ex in examples {
        let idx = ex.source_index.to_string();
        let mut row: Vec<&str> = ex.pairs.iter().map(|p| p.value.as_str()).collect();
        row.push(ex.label.as_str());
        row.push(&idx);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
