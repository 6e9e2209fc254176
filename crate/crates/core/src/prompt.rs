//! Prompt rendering.
//!
//! A rendered detection prompt looks like
//!
//! ```text
//! <preamble>
//! Name: value | Name: value | Name: value | Name: value | Label: Benign
//! ...
//! ###
//! Name: value | Name: value | Name: value | Name: value
//! <output instruction>
//! ```
//!
//! The layout itself is a small template with the placeholders `{preamble}`,
//! `{examples}`, `{separator}`, `{test}` and `{instruction}`. A placeholder
//! that expands to nothing on a line of its own removes that line.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::flow::LabeledExample;

pub const LABEL_FIELD: &str = "Label";
pub const OUTPUT_DELIMITER: &str = "$$$";
pub const DEFAULT_LAYOUT: &str = "{preamble}\n{examples}\n{separator}\n{test}\n{instruction}";

pub const DETECT_PREAMBLE: &str = "You are a network security analyst. Classify network flow records as either Benign or DDOS.\n\
Each row describes one network flow. Every feature is written as its name, a colon and its value, and features are separated by a pipe symbol.\n\
Rows are separated by a newline.\n\
Labeled example rows come first. A separator of three consecutive # symbols splits the examples from the unlabeled test case that follows it.";

pub const DETECT_INSTRUCTION: &str =
    "Predict the label of the test case. Surround the predicted label with $$$ on each side.";

pub const REASON_PREAMBLE: &str = "You are a network security analyst. The network flow below is written as feature names paired with their values, separated by a pipe symbol.";

pub const REASON_INSTRUCTION: &str =
    "Reason over only the feature values above and describe what they indicate about this flow.";

pub const EXPLAIN_INSTRUCTION: &str = "Explain why this flow has the label shown above.";

#[derive(Debug, thiserror::Error)]
pub enum TemplateError {
    #[error("block separator {0:?} must contain exactly three consecutive '#'")]
    BadBlockSeparator(String),
    #[error("detection output instruction must mention the {OUTPUT_DELIMITER} delimiter")]
    MissingDelimiter,
    #[error("unknown placeholder {{{0}}} in layout")]
    UnknownPlaceholder(String),
    #[error("unterminated placeholder in layout")]
    Unterminated,
    #[error("layout has no {{test}} placeholder")]
    MissingTest,
    #[error("reading template {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Detect,
    Reason,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Preamble,
    Examples,
    Separator,
    Test,
    Instruction,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Text(String),
    Slot(Slot),
}

fn parse_layout(layout: &str) -> Result<Vec<Segment>, TemplateError> {
    let mut segments = Vec::new();
    let mut rest = layout;
    while let Some(open) = rest.find('{') {
        if open > 0 {
            segments.push(Segment::Text(rest[..open].to_string()));
        }
        let close = rest[open..].find('}').ok_or(TemplateError::Unterminated)? + open;
        let slot = match &rest[open + 1..close] {
            "preamble" => Slot::Preamble,
            "examples" => Slot::Examples,
            "separator" => Slot::Separator,
            "test" => Slot::Test,
            "instruction" => Slot::Instruction,
            other => return Err(TemplateError::UnknownPlaceholder(other.to_string())),
        };
        segments.push(Segment::Slot(slot));
        rest = &rest[close + 1..];
    }
    if !rest.is_empty() {
        segments.push(Segment::Text(rest.to_string()));
    }
    if !segments.contains(&Segment::Slot(Slot::Test)) {
        return Err(TemplateError::MissingTest);
    }
    Ok(segments)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub mode: PromptMode,
    pub preamble: String,
    pub field_separator: String,
    pub row_separator: String,
    pub block_separator: String,
    pub output_instruction: String,
    /// Used instead of `output_instruction` when a reasoning prompt shows the label.
    pub explain_instruction: String,
    pub layout: String,
}

impl PromptTemplate {
    pub fn detection() -> Self {
        Self {
            id: "detect-v1".into(),
            mode: PromptMode::Detect,
            preamble: DETECT_PREAMBLE.into(),
            field_separator: " | ".into(),
            row_separator: "\n".into(),
            block_separator: "###".into(),
            output_instruction: DETECT_INSTRUCTION.into(),
            explain_instruction: EXPLAIN_INSTRUCTION.into(),
            layout: DEFAULT_LAYOUT.into(),
        }
    }

    pub fn reasoning() -> Self {
        Self {
            id: "reason-v1".into(),
            mode: PromptMode::Reason,
            preamble: REASON_PREAMBLE.into(),
            output_instruction: REASON_INSTRUCTION.into(),
            ..Self::detection()
        }
    }

    /// Replaces the layout with the contents of a template file.
    pub fn with_layout_file(mut self, path: impl AsRef<Path>) -> Result<Self, TemplateError> {
        let path = path.as_ref();
        self.layout = std::fs::read_to_string(path)
            .map_err(|source| TemplateError::Io { path: path.display().to_string(), source })?;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        let hashes = self.block_separator.matches("###").count();
        if hashes != 1 || self.block_separator.contains("####") {
            return Err(TemplateError::BadBlockSeparator(self.block_separator.clone()));
        }
        if self.mode == PromptMode::Detect && !self.output_instruction.contains(OUTPUT_DELIMITER) {
            return Err(TemplateError::MissingDelimiter);
        }
        parse_layout(&self.layout).map(|_| ())
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::detection()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptDocument {
    pub text: String,
    pub example_count: usize,
    /// Byte range of the test row inside `text`.
    pub test_row_span: (usize, usize),
    /// Byte offset of the block separator, when present.
    pub separator_offset: Option<usize>,
    pub template_id: String,
    pub mode: PromptMode,
    pub label_shown: bool,
}

impl PromptDocument {
    pub fn test_row(&self) -> &str {
        &self.text[self.test_row_span.0..self.test_row_span.1]
    }
}

/// Renders one example as `Name: value` fields joined by the field separator,
/// optionally followed by a `Label: <label>` field.
pub fn render_row(example: &LabeledExample, with_label: bool, template: &PromptTemplate) -> String {
    let mut fields: Vec<String> = example.pairs.iter().map(|p| format!("{}: {}", p.name, p.value)).collect();
    if with_label {
        fields.push(format!("{LABEL_FIELD}: {}", example.label));
    }
    fields.join(&template.field_separator)
}

struct Parts<'a> {
    examples: String,
    separator: &'a str,
    test: String,
    instruction: &'a str,
}

fn assemble(template: &PromptTemplate, parts: Parts<'_>) -> (String, (usize, usize), Option<usize>) {
    // Layouts are validated at template construction; the default is always valid.
    let segments = parse_layout(&template.layout).unwrap_or_else(|_| parse_layout(DEFAULT_LAYOUT).unwrap());
    let mut out = String::new();
    let mut test_span = (0, 0);
    let mut sep_offset = None;
    let mut drop_newline = false;
    for seg in &segments {
        match seg {
            Segment::Text(t) => {
                let t = if drop_newline { t.strip_prefix('\n').unwrap_or(t) } else { t.as_str() };
                drop_newline = false;
                out.push_str(t);
            }
            Segment::Slot(slot) => {
                let value: &str = match slot {
                    Slot::Preamble => &template.preamble,
                    Slot::Examples => &parts.examples,
                    Slot::Separator => parts.separator,
                    Slot::Test => &parts.test,
                    Slot::Instruction => parts.instruction,
                };
                let start = out.len();
                match slot {
                    Slot::Test => test_span = (start, start + value.len()),
                    Slot::Separator if !value.is_empty() => sep_offset = Some(start),
                    _ => {}
                }
                drop_newline = value.is_empty() && (out.is_empty() || out.ends_with('\n'));
                out.push_str(value);
            }
        }
    }
    (out, test_span, sep_offset)
}

/// Few-shot detection prompt. Examples are rendered in the order given; an
/// empty list yields a zero-shot prompt without a block separator.
pub fn build_detection_prompt(
    examples: &[LabeledExample],
    test_case: &LabeledExample,
    template: &PromptTemplate,
) -> PromptDocument {
    let rows: Vec<String> = examples.iter().map(|e| render_row(e, true, template)).collect();
    let parts = Parts {
        examples: rows.join(&template.row_separator),
        separator: if examples.is_empty() { "" } else { &template.block_separator },
        test: render_row(test_case, false, template),
        instruction: &template.output_instruction,
    };
    let (text, test_row_span, separator_offset) = assemble(template, parts);
    PromptDocument {
        text,
        example_count: examples.len(),
        test_row_span,
        separator_offset,
        template_id: template.id.clone(),
        mode: PromptMode::Detect,
        label_shown: false,
    }
}

/// Asks the model to explain a single flow. With `include_label` the gold
/// label is shown and an explanation of it requested; otherwise the model
/// reasons from the features alone.
pub fn build_reasoning_prompt(
    test_case: &LabeledExample,
    template: &PromptTemplate,
    include_label: bool,
) -> PromptDocument {
    let parts = Parts {
        examples: String::new(),
        separator: "",
        test: render_row(test_case, include_label, template),
        instruction: if include_label { &template.explain_instruction } else { &template.output_instruction },
    };
    let (text, test_row_span, separator_offset) = assemble(template, parts);
    PromptDocument {
        text,
        example_count: 0,
        test_row_span,
        separator_offset,
        template_id: template.id.clone(),
        mode: PromptMode::Reason,
        label_shown: include_label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FeaturePair;
    use crate::label::TrafficLabel;

    fn ex(values: [&str; 4], label: TrafficLabel, idx: usize) -> LabeledExample {
        let names = ["Destination Port", "Flow Duration", "Total Fwd Packets", "Flow Bytes/s"];
        let pairs = std::array::from_fn(|i| FeaturePair { name: names[i].into(), value: values[i].into() });
        LabeledExample::new(pairs, label, idx)
    }

    #[test]
    fn row_pairs_names_with_values() {
        let t = PromptTemplate::detection();
        let e = ex(["80", "1022", "2", "Infinity"], TrafficLabel::Ddos, 0);
        let unlabeled = render_row(&e, false, &t);
        assert!(unlabeled.starts_with("Destination Port: 80 | "));
        assert_eq!(
            unlabeled,
            "Destination Port: 80 | Flow Duration: 1022 | Total Fwd Packets: 2 | Flow Bytes/s: Infinity"
        );
        assert!(render_row(&e, true, &t).ends_with("| Label: DDOS"));
        assert_eq!(render_row(&e, true, &t), render_row(&e, true, &t));
    }

    #[test]
    fn zero_shot_has_no_separator() {
        let t = PromptTemplate::detection();
        let doc = build_detection_prompt(&[], &ex(["1", "2", "3", "4"], TrafficLabel::Benign, 0), &t);
        assert_eq!(doc.example_count, 0);
        assert!(!doc.text.contains("###"));
        assert_eq!(doc.separator_offset, None);
        assert_eq!(doc.text, format!("{DETECT_PREAMBLE}\nDestination Port: 1 | Flow Duration: 2 | Total Fwd Packets: 3 | Flow Bytes/s: 4\n{DETECT_INSTRUCTION}"));
    }

    #[test]
    fn ten_shot_places_ten_rows_before_separator() {
        let t = PromptTemplate::detection();
        let examples: Vec<_> =
            (0..10).map(|i| ex([&i.to_string(), "2", "3", "4"], TrafficLabel::ALL[i % 2], i)).collect();
        let doc = build_detection_prompt(&examples, &ex(["9", "9", "9", "9"], TrafficLabel::Ddos, 99), &t);
        assert_eq!(doc.text.matches("###").count(), 1);
        let before = &doc.text[..doc.separator_offset.unwrap()];
        assert_eq!(before.matches("| Label: ").count(), 10);
        assert!(doc.test_row_span.0 > doc.separator_offset.unwrap());
        assert!(!doc.test_row().contains("Label"));
        for (i, e) in examples.iter().enumerate() {
            let row = render_row(e, true, &t);
            let pos = doc.text.find(&row).unwrap();
            if i > 0 {
                assert!(pos > doc.text.find(&render_row(&examples[i - 1], true, &t)).unwrap());
            }
        }
    }

    #[test]
    fn reasoning_prompt_variants_share_feature_row() {
        let t = PromptTemplate::reasoning();
        let e = ex(["80", "5", "1", "0.5"], TrafficLabel::Benign, 3);
        let blind = build_reasoning_prompt(&e, &t, false);
        let shown = build_reasoning_prompt(&e, &t, true);
        assert!(!blind.test_row().contains("Benign"));
        assert!(!blind.test_row().contains(LABEL_FIELD));
        assert_eq!(shown.test_row().matches("Benign").count(), 1);
        assert!(shown.test_row().starts_with(blind.test_row()));
        assert!(shown.label_shown && !blind.label_shown);
        assert!(shown.text.ends_with(EXPLAIN_INSTRUCTION));
        assert_eq!(blind.mode, PromptMode::Reason);
    }

    #[test]
    fn template_validation() {
        let mut t = PromptTemplate::detection();
        assert!(t.validate().is_ok());
        t.block_separator = "####".into();
        assert!(matches!(t.validate(), Err(TemplateError::BadBlockSeparator(_))));
        t.block_separator = "##".into();
        assert!(t.validate().is_err());
        let mut t = PromptTemplate::detection();
        t.output_instruction = "Answer with the label.".into();
        assert!(matches!(t.validate(), Err(TemplateError::MissingDelimiter)));
        let mut r = PromptTemplate::reasoning();
        r.output_instruction = "Explain.".into();
        assert!(r.validate().is_ok());
        let mut t = PromptTemplate::detection();
        t.layout = "{preamble}\n{bogus}".into();
        assert!(matches!(t.validate(), Err(TemplateError::UnknownPlaceholder(p)) if p == "bogus"));
        t.layout = "{preamble}\n{instruction}".into();
        assert!(matches!(t.validate(), Err(TemplateError::MissingTest)));
    }

    #[test]
    fn custom_layout_moves_instruction() {
        let mut t = PromptTemplate::detection();
        t.layout = "{preamble}\n{instruction}\n{examples}\n{separator}\n{test}".into();
        let e = ex(["1", "2", "3", "4"], TrafficLabel::Benign, 0);
        let doc = build_detection_prompt(std::slice::from_ref(&e), &e, &t);
        assert!(doc.text.ends_with(doc.test_row()));
        assert!(doc.text.find(DETECT_INSTRUCTION).unwrap() < doc.separator_offset.unwrap());
    }
}
