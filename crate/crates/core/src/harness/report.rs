use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::detector::DetectorSpec;
use super::{compute_accuracy, HarnessError};
use crate::label::TrafficLabel;
use crate::llm::FailureClass;
use crate::select::OrderingStrategy;

pub const REPORT_FORMAT: &str = "flowshot-report";
pub const REPORT_VERSION: u32 = 1;
pub const REPORT_FILE: &str = "report.json";
pub const SERIES_FILE: &str = "series.csv";

pub fn digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Audit record for one (detector cell, evaluation case) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub cell: DetectorSpec,
    pub case_position: usize,
    pub source_index: usize,
    pub gold: TrafficLabel,
    pub predicted: Option<TrafficLabel>,
    pub failure: Option<FailureClass>,
    pub selected: Vec<usize>,
    pub response_digest: String,
    pub raw_response: String,
    pub reasoning: Option<String>,
    pub detail: Option<String>,
}

impl CaseRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted == Some(self.gold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub n: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub detector: String,
    pub ordering: Option<OrderingStrategy>,
    pub points: Vec<SeriesPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedCell {
    pub cell: DetectorSpec,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub format: String,
    pub version: u32,
    pub eval_size: usize,
    pub series: Vec<Series>,
    pub skipped: Vec<SkippedCell>,
    pub cases: Vec<CaseRecord>,
    pub seeds: BTreeMap<String, u64>,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

/// Groups case records by cell into accuracy series. Series keep the order
/// in which their detector first appears in `cells`; points keep `cells` order.
pub(crate) fn build_series(cells: &[DetectorSpec], cases: &[CaseRecord]) -> Result<Vec<Series>, HarnessError> {
    let mut series: Vec<Series> = Vec::new();
    for cell in cells {
        let pairs: Vec<(Option<TrafficLabel>, TrafficLabel)> =
            cases.iter().filter(|c| &c.cell == cell).map(|c| (c.predicted, c.gold)).collect();
        let accuracy = compute_accuracy(&pairs)?;
        let correct = pairs.iter().filter(|(p, g)| *p == Some(*g)).count();
        let point = SeriesPoint { n: cell.n_or_k, accuracy, correct, total: pairs.len() };
        match series.iter_mut().find(|s| s.detector == cell.detector && s.ordering == cell.ordering) {
            Some(s) => s.points.push(point),
            None => {
                series.push(Series { detector: cell.detector.clone(), ordering: cell.ordering, points: vec![point] })
            }
        }
    }
    Ok(series)
}

impl EvaluationReport {
    /// Checks the stored series against accuracies recomputed from the case
    /// records, and the case count against `eval_size` times the cell count.
    pub fn verify(&self) -> Result<(), String> {
        let cells: usize = self.series.iter().map(|s| s.points.len()).sum();
        if self.cases.len() != self.eval_size * cells {
            return Err(format!("{} case records for {} cells of {} cases", self.cases.len(), cells, self.eval_size));
        }
        for s in &self.series {
            for p in &s.points {
                let cell = DetectorSpec { detector: s.detector.clone(), n_or_k: p.n, ordering: s.ordering };
                let pairs: Vec<_> =
                    self.cases.iter().filter(|c| c.cell == cell).map(|c| (c.predicted, c.gold)).collect();
                let acc = compute_accuracy(&pairs).map_err(|e| e.to_string())?;
                if acc != p.accuracy || pairs.len() != p.total {
                    return Err(format!("{} n={}: stored {} recomputed {}", s.detector, p.n, p.accuracy, acc));
                }
                if !(0.0..=1.0).contains(&p.accuracy) {
                    return Err(format!("accuracy {} out of range", p.accuracy));
                }
            }
        }
        Ok(())
    }

    pub fn accuracy(&self, detector: &str, n: usize) -> Option<f64> {
        self.series
            .iter()
            .filter(|s| s.detector == detector)
            .flat_map(|s| &s.points)
            .find(|p| p.n == n)
            .map(|p| p.accuracy)
    }

    pub fn to_json(&self) -> Result<String, HarnessError> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    pub fn read_json<R: Read>(source: R) -> Result<Self, HarnessError> {
        let report: Self = serde_json::from_reader(source)?;
        if report.format != REPORT_FORMAT || report.version != REPORT_VERSION {
            return Err(HarnessError::Report(format!("unsupported report {} v{}", report.format, report.version)));
        }
        Ok(report)
    }

    /// Plot table with columns `detector,n,accuracy`.
    pub fn write_series_csv<W: Write>(&self, sink: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["detector", "n", "accuracy"])?;
        for s in &self.series {
            let name = match s.ordering {
                Some(o) if o != OrderingStrategy::DescendingRelevance => format!("{}@{o}", s.detector),
                _ => s.detector.clone(),
            };
            for p in &s.points {
                w.write_record([name.as_str(), &p.n.to_string(), &p.accuracy.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `report.json` and `series.csv` into `dir`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
        std::fs::create_dir_all(dir)?;
        let json = dir.join(REPORT_FILE);
        std::fs::write(&json, self.to_json()?)?;
        let csv_path = dir.join(SERIES_FILE);
        self.write_series_csv(std::fs::File::create(&csv_path)?)?;
        Ok((json, csv_path))
    }
}
