use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary traffic class of a flow record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TrafficLabel {
    Benign,
    #[serde(rename = "DDOS")]
    Ddos,
}

impl TrafficLabel {
    pub const ALL: [TrafficLabel; 2] = [TrafficLabel::Benign, TrafficLabel::Ddos];

    /// Canonical token used in prompts, completions and reports.
    pub fn as_str(self) -> &'static str {
        match self {
            TrafficLabel::Benign => "Benign",
            TrafficLabel::Ddos => "DDOS",
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            TrafficLabel::Benign => TrafficLabel::Ddos,
            TrafficLabel::Ddos => TrafficLabel::Benign,
        }
    }

    /// Case-insensitive canonicalization; surrounding whitespace is ignored.
    pub fn parse_loose(raw: &str) -> Option<Self> {
        let t = raw.trim();
        if t.eq_ignore_ascii_case("benign") {
            Some(TrafficLabel::Benign)
        } else if t.eq_ignore_ascii_case("ddos") {
            Some(TrafficLabel::Ddos)
        } else {
            None
        }
    }
}

impl fmt::Display for TrafficLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown traffic label {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for TrafficLabel {
    type Err = UnknownLabel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TrafficLabel::parse_loose(s).ok_or_else(|| UnknownLabel(s.to_string()))
    }
}
