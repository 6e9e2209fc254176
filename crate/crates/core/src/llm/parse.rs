use serde::{Deserialize, Serialize};

use crate::label::TrafficLabel;
use crate::prompt::OUTPUT_DELIMITER;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureClass {
    FormatViolation,
    Refusal,
    TransportError,
    /// The baseline could not be trained on the selected examples.
    Untrainable,
    /// The baseline cannot score a case with non-numeric features.
    NonNumeric,
}

impl FailureClass {
    pub fn name(self) -> &'static str {
        match self {
            FailureClass::FormatViolation => "format-violation",
            FailureClass::Refusal => "refusal",
            FailureClass::TransportError => "transport-error",
            FailureClass::Untrainable => "untrainable",
            FailureClass::NonNumeric => "non-numeric",
        }
    }
}

/// Parsed verdict. Exactly one of `predicted` / `failure` is set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub predicted: Option<TrafficLabel>,
    pub reasoning: Option<String>,
    pub raw_response: String,
    pub failure: Option<FailureClass>,
}

impl DetectionOutcome {
    pub fn predicted(label: TrafficLabel, raw_response: String, reasoning: Option<String>) -> Self {
        Self { predicted: Some(label), reasoning, raw_response, failure: None }
    }

    pub fn failed(failure: FailureClass, raw_response: String) -> Self {
        Self { predicted: None, reasoning: None, raw_response, failure: Some(failure) }
    }
}

/// Lower-case substrings that mark an undelimited response as a refusal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RefusalPatterns(pub Vec<String>);

impl Default for RefusalPatterns {
    fn default() -> Self {
        Self(
            [
                "i'm sorry",
                "i am sorry",
                "i can't help",
                "i cannot help",
                "i can't assist",
                "i cannot assist",
                "i'm unable to",
                "i am unable to",
                "as an ai",
            ]
            .map(String::from)
            .to_vec(),
        )
    }
}

impl RefusalPatterns {
    fn matches(&self, raw: &str) -> bool {
        let lower = raw.to_lowercase();
        self.0.iter().any(|p| lower.contains(&p.to_lowercase()))
    }
}

pub fn parse_detection_response(raw: &str) -> DetectionOutcome {
    parse_detection_response_with(raw, &RefusalPatterns::default())
}

/// Extracts the label from the first `$$$...$$$` span. Text outside the span
/// becomes the reasoning.
pub fn parse_detection_response_with(raw: &str, refusals: &RefusalPatterns) -> DetectionOutcome {
    let d = OUTPUT_DELIMITER.len();
    let span = raw
        .find(OUTPUT_DELIMITER)
        .and_then(|open| raw[open + d..].find(OUTPUT_DELIMITER).map(|rel| (open, open + d + rel)));
    let Some((open, close)) = span else {
        let class = if refusals.matches(raw) { FailureClass::Refusal } else { FailureClass::FormatViolation };
        return DetectionOutcome::failed(class, raw.to_string());
    };
    let inner = raw[open + d..close].trim_matches(|c: char| c.is_whitespace() || c == '$');
    match TrafficLabel::parse_loose(inner) {
        Some(label) => {
            let outside = format!("{} {}", raw[..open].trim(), raw[close + d..].trim());
            let outside = outside.trim();
            let reasoning = (!outside.is_empty()).then(|| outside.to_string());
            DetectionOutcome::predicted(label, raw.to_string(), reasoning)
        }
        None => DetectionOutcome::failed(FailureClass::FormatViolation, raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn failure_names_match_serialized_form() {
        use FailureClass::*;
        for f in [FormatViolation, Refusal, TransportError, Untrainable, NonNumeric] {
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{}\"", f.name()));
        }
    }

    #[test]
    fn exact_form() {
        let o = parse_detection_response("$$$DDOS$$$");
        assert_eq!(o.predicted, Some(TrafficLabel::Ddos));
        assert_eq!(o.reasoning, None);
        assert_eq!(o.failure, None);
    }

    #[test]
    fn case_insensitive_with_reasoning() {
        let o = parse_detection_response("The flow is suspicious: tiny duration. $$$ddos$$$");
        assert_eq!(o.predicted, Some(TrafficLabel::Ddos));
        assert_eq!(o.reasoning.as_deref(), Some("The flow is suspicious: tiny duration."));
        let o = parse_detection_response("$$$ Benign $$$ because the port is 443");
        assert_eq!(o.predicted, Some(TrafficLabel::Benign));
    }

    #[test]
    fn missing_delimiters_is_format_violation() {
        let o = parse_detection_response("I cannot determine the label.");
        assert_eq!(o.failure, Some(FailureClass::FormatViolation));
        assert_eq!(o.predicted, None);
        assert_eq!(o.raw_response, "I cannot determine the label.");
        assert_eq!(parse_detection_response("$$$maybe$$$").failure, Some(FailureClass::FormatViolation));
        assert_eq!(parse_detection_response("$$$DDOS").failure, Some(FailureClass::FormatViolation));
        assert_eq!(parse_detection_response("").failure, Some(FailureClass::FormatViolation));
    }

    #[test]
    fn refusal_needs_pattern_and_no_span() {
        let o = parse_detection_response("I'm sorry, but I can't classify network traffic.");
        assert_eq!(o.failure, Some(FailureClass::Refusal));
        let o = parse_detection_response("I'm sorry, it is $$$Benign$$$");
        assert_eq!(o.predicted, Some(TrafficLabel::Benign));
        let custom = RefusalPatterns(vec!["no comment".into()]);
        assert_eq!(parse_detection_response_with("No comment.", &custom).failure, Some(FailureClass::Refusal));
    }

    fn arb_text() -> impl Strategy<Value = String> {
        any::<String>().prop_filter("no delimiter", |s| !s.contains(OUTPUT_DELIMITER))
    }

    proptest! {
        #[test]
        fn first_span_wins(a in arb_text(), b in arb_text(), first in 0usize..2, second in 0usize..2) {
            let (l1, l2) = (TrafficLabel::ALL[first], TrafficLabel::ALL[second]);
            let raw = format!("{a}$$${l1}$$${b}$$${l2}$$$");
            prop_assert_eq!(parse_detection_response(&raw).predicted, Some(l1));
        }

        #[test]
        fn never_panics(raw in ".*") {
            let o = parse_detection_response(&raw);
            prop_assert!(o.predicted.is_some() != o.failure.is_some());
        }
    }
}
