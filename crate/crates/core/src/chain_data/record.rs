//! `data.json` records and their validation.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::schema::{normalize, StepSchema, NOT_APPLICABLE, NO_ABNORMALITY, NO_ANSWER, STEP_COUNT};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub step: String,
    pub question: String,
    pub options: Vec<String>,
    pub answer: String,
    pub reasoning: String,
}

/// One patient case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub patient_id: String,
    pub image_path: String,
    #[serde(default)]
    pub origin: String,
    pub report: String,
    pub vqa_chain: Vec<ChainStep>,
}

impl ChainRecord {
    /// Diagnosis answer (step 7), if the chain is long enough.
    pub fn diagnosis(&self) -> Option<&str> {
        self.vqa_chain
            .get(STEP_COUNT - 1)
            .map(|s| s.answer.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    /// The record is not an object with the expected fields.
    Structure,
    StepCount,
    TemplateDrift,
    UnknownAnswer,
    NaCascade,
    DuplicateId,
}

impl Rule {
    pub fn as_str(self) -> &'static str {
        match self {
            Rule::Structure => "structure",
            Rule::StepCount => "step_count",
            Rule::TemplateDrift => "template_drift",
            Rule::UnknownAnswer => "unknown_answer",
            Rule::NaCascade => "na_cascade",
            Rule::DuplicateId => "duplicate_id",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Position of the record in the document.
    pub index: usize,
    pub patient_id: Option<String>,
    /// 1-based step number, when the violation concerns one step.
    pub step: Option<usize>,
    pub rule: Rule,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub records: Vec<ChainRecord>,
    pub violations: Vec<Violation>,
    pub total: usize,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Parses a `data.json` document (an array of records, or a single record
/// object) and checks every record against `schema`.
///
/// Only malformed JSON is an error; every record-level problem becomes a
/// [`Violation`]. Option and answer aliases are normalized in the returned
/// records.
pub fn parse_and_validate(document: &str, schema: &StepSchema) -> Result<ValidationReport> {
    let value: Value = serde_json::from_str(document).map_err(|e| Error::from_json(e, document))?;
    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        other => {
            return Ok(ValidationReport {
                records: vec![],
                violations: vec![Violation {
                    index: 0,
                    patient_id: None,
                    step: None,
                    rule: Rule::Structure,
                    message: format!("expected an array of records, found {}", json_kind(&other)),
                }],
                total: 0,
            })
        }
    };

    let mut report = ValidationReport {
        total: items.len(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    for (index, item) in items.into_iter().enumerate() {
        let id = item
            .get("patient_id")
            .and_then(Value::as_str)
            .map(str::to_string);
        let record: ChainRecord = match serde_json::from_value(item) {
            Ok(r) => r,
            Err(e) => {
                report.violations.push(Violation {
                    index,
                    patient_id: id,
                    step: None,
                    rule: Rule::Structure,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let record = normalize_record(record);
        let mut found = check_record(index, &record, schema);
        if !seen.insert(record.patient_id.clone()) {
            found.push(Violation {
                index,
                patient_id: Some(record.patient_id.clone()),
                step: None,
                rule: Rule::DuplicateId,
                message: format!("patient_id `{}` appears more than once", record.patient_id),
            });
        }
        if found.is_empty() {
            report.records.push(record);
        } else {
            report.violations.extend(found);
        }
    }
    Ok(report)
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn normalize_record(mut record: ChainRecord) -> ChainRecord {
    for step in &mut record.vqa_chain {
        for o in &mut step.options {
            *o = normalize(o).to_string();
        }
        step.answer = normalize(&step.answer).to_string();
    }
    record
}

/// All rule violations of one (already normalized) record.
pub fn check_record(index: usize, record: &ChainRecord, schema: &StepSchema) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |step: Option<usize>, rule: Rule, message: String| {
        out.push(Violation {
            index,
            patient_id: Some(record.patient_id.clone()),
            step,
            rule,
            message,
        })
    };
    if record.vqa_chain.len() != schema.len() {
        push(
            None,
            Rule::StepCount,
            format!(
                "expected {} steps, found {}",
                schema.len(),
                record.vqa_chain.len()
            ),
        );
        return out;
    }
    for (s, (entry, spec)) in record.vqa_chain.iter().zip(&schema.steps).enumerate() {
        let n = s + 1;
        if entry.step != spec.step_name {
            push(
                Some(n),
                Rule::TemplateDrift,
                format!(
                    "step name `{}` differs from `{}`",
                    entry.step, spec.step_name
                ),
            );
        }
        if entry.question != spec.question {
            push(
                Some(n),
                Rule::TemplateDrift,
                format!("question `{}` differs from template", entry.question),
            );
        }
        if entry.options != spec.options {
            push(
                Some(n),
                Rule::TemplateDrift,
                "options differ from template".to_string(),
            );
        }
        let known = entry.answer == NOT_APPLICABLE
            || entry.answer == NO_ANSWER
            || spec.options.contains(&entry.answer);
        if !known {
            push(
                Some(n),
                Rule::UnknownAnswer,
                format!("answer `{}` is not an option", entry.answer),
            );
        }
    }
    if record.vqa_chain[0].answer == NO_ABNORMALITY {
        for (s, entry) in record.vqa_chain.iter().enumerate().take(6).skip(1) {
            if entry.answer != NOT_APPLICABLE {
                push(
                    Some(s + 1),
                    Rule::NaCascade,
                    format!(
                        "step 1 is `{NO_ABNORMALITY}` but answer is `{}`",
                        entry.answer
                    ),
                );
            }
        }
    }
    out
}

/// Pretty-printed `data.json` array.
pub fn serialize_records(records: &[ChainRecord]) -> String {
    serde_json::to_string_pretty(records).expect("records serialize")
}
