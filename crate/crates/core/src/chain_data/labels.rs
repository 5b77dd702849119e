use serde::{Deserialize, Serialize};

use super::record::ChainRecord;
use super::schema::{StepSchema, NOT_APPLICABLE, NO_ANSWER, STEP_COUNT};
use crate::error::{Error, Result};
use crate::numerics::SENTINEL;

/// Per-step class indices; [`SENTINEL`] marks a missing answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    pub labels: [i64; STEP_COUNT],
}

impl LabelVector {
    pub const SENTINEL: i64 = SENTINEL;

    pub fn diagnosis(&self) -> i64 {
        self.labels[STEP_COUNT - 1]
    }
}

/// Option answers map to their 0-based option index, `N/A` to the last
/// class and `No Answer` to [`SENTINEL`].
pub fn encode_labels(record: &ChainRecord, schema: &StepSchema) -> Result<LabelVector> {
    if record.vqa_chain.len() != STEP_COUNT || schema.len() != STEP_COUNT {
        return Err(Error::InvalidArgument(format!(
            "record `{}` has {} steps",
            record.patient_id,
            record.vqa_chain.len()
        )));
    }
    let mut labels = [0i64; STEP_COUNT];
    for (s, entry) in record.vqa_chain.iter().enumerate() {
        labels[s] = match entry.answer.as_str() {
            NOT_APPLICABLE => schema.na_index(s) as i64,
            NO_ANSWER => SENTINEL,
            other => schema
                .option_index(s, other)
                .ok_or_else(|| Error::UnresolvableAnswer {
                    step: s + 1,
                    answer: other.to_string(),
                })? as i64,
        };
    }
    Ok(LabelVector { labels })
}

/// Inverse of [`encode_labels`] for one step; `None` for the sentinel or an
/// out-of-range index.
pub fn decode_label(schema: &StepSchema, step: usize, label: i64) -> Option<&str> {
    if label == SENTINEL || label < 0 {
        return None;
    }
    let label = label as usize;
    let options = &schema.steps.get(step)?.options;
    match label.cmp(&options.len()) {
        std::cmp::Ordering::Less => Some(&options[label]),
        std::cmp::Ordering::Equal => Some(NOT_APPLICABLE),
        std::cmp::Ordering::Greater => None,
    }
}
