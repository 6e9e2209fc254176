//! Few-shot and fine-tuned language-model classification of network flows
//! as benign or DDoS, with a small MLP baseline and an evaluation harness.
//!
//! The pipeline runs: [`flow`] ingestion, [`select`] example selection,
//! [`prompt`] rendering, [`llm`] querying and parsing, [`mlp`] baseline
//! training, and [`harness`] sweeps and reports.

pub mod flow;
pub mod harness;
pub mod label;
pub mod llm;
pub mod mlp;
pub mod prompt;
pub mod select;

pub use flow::{build_dataset, parse_flow_csv, project, Dataset, FeatureSelection, FlowRecord, LabeledExample};
pub use label::TrafficLabel;
