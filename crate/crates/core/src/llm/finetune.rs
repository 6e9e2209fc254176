use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::flow::LabeledExample;
use crate::prompt::{build_detection_prompt, PromptTemplate};

#[derive(Debug, thiserror::Error)]
pub enum FineTuneError {
    #[error("cannot export an empty pool")]
    EmptyPool,
    #[error("writing fine-tune records: {0}")]
    Sink(#[from] std::io::Error),
    #[error("encoding fine-tune record: {0}")]
    Encode(#[from] serde_json::Error),
}

/// One prompt/completion training pair; `completion` is a bare label token.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub prompt: String,
    pub completion: String,
}

/// The fine-tuned model sees the same zero-shot prompt at inference time.
pub fn finetune_record(example: &LabeledExample, template: &PromptTemplate) -> FineTuneRecord {
    FineTuneRecord {
        prompt: build_detection_prompt(&[], example, template).text,
        completion: example.label.to_string(),
    }
}

/// Writes one JSON object per line. Returns the record count.
pub fn export_finetune_dataset<W: Write>(
    pool: &[LabeledExample],
    template: &PromptTemplate,
    mut sink: W,
) -> Result<usize, FineTuneError> {
    if pool.is_empty() {
        return Err(FineTuneError::EmptyPool);
    }
    for ex in pool {
        serde_json::to_writer(&mut sink, &finetune_record(ex, template))?;
        sink.write_all(b"\n")?;
    }
    sink.flush()?;
    Ok(pool.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FeaturePair;
    use crate::label::TrafficLabel;

    #[test]
    fn writes_one_line_per_example() {
        let pool: Vec<_> = (0..4)
            .map(|i| {
                let pairs =
                    std::array::from_fn(|j| FeaturePair { name: format!("f{j}"), value: format!("\"{i}{j}\"") });
                LabeledExample::new(pairs, TrafficLabel::ALL[i % 2], i)
            })
            .collect();
        let mut out = Vec::new();
        let t = PromptTemplate::detection();
        assert_eq!(export_finetune_dataset(&pool, &t, &mut out).unwrap(), 4);
        let text = String::from_utf8(out).unwrap();
        let records: Vec<FineTuneRecord> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(records.len(), 4);
        assert_eq!(records[1].completion, "DDOS");
        assert_eq!(records[0], finetune_record(&pool[0], &t));
        assert!(matches!(export_finetune_dataset(&[], &t, Vec::new()), Err(FineTuneError::EmptyPool)));
    }
}
