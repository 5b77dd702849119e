use std::collections::BTreeMap;

use serde::Serialize;

use super::record::ChainRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transition {
    pub from: String,
    pub to: String,
    pub count: usize,
}

/// Answer flow between step `from_step` and `from_step + 1` (1-based).
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepTransitions {
    pub from_step: usize,
    pub to_step: usize,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReasoningLengths {
    pub step: usize,
    /// word count → number of records
    pub histogram: BTreeMap<usize, usize>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetStats {
    pub records: usize,
    pub per_source: BTreeMap<String, usize>,
    pub per_diagnosis: BTreeMap<String, usize>,
    pub transitions: Vec<StepTransitions>,
    pub reasoning_lengths: Vec<ReasoningLengths>,
}

/// Whitespace-separated token count; punctuation stays attached.
pub fn word_count(text: &str) -> usize {
    text.split_ascii_whitespace().count()
}

/// Counts over validated records.
pub fn compute_stats(records: &[ChainRecord]) -> DatasetStats {
    let steps = records.iter().map(|r| r.vqa_chain.len()).max().unwrap_or(0);
    let mut per_source = BTreeMap::new();
    let mut per_diagnosis = BTreeMap::new();
    let mut trans: Vec<BTreeMap<(String, String), usize>> =
        vec![BTreeMap::new(); steps.saturating_sub(1)];
    let mut lengths: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); steps];

    for r in records {
        *per_source.entry(r.origin.clone()).or_insert(0) += 1;
        if let Some(d) = r.vqa_chain.last() {
            *per_diagnosis.entry(d.answer.clone()).or_insert(0) += 1;
        }
        for (s, pair) in r.vqa_chain.windows(2).enumerate() {
            *trans[s]
                .entry((pair[0].answer.clone(), pair[1].answer.clone()))
                .or_insert(0) += 1;
        }
        for (s, entry) in r.vqa_chain.iter().enumerate() {
            *lengths[s].entry(word_count(&entry.reasoning)).or_insert(0) += 1;
        }
    }

    DatasetStats {
        records: records.len(),
        per_source,
        per_diagnosis,
        transitions: trans
            .into_iter()
            .enumerate()
            .map(|(s, m)| StepTransitions {
                from_step: s + 1,
                to_step: s + 2,
                transitions: m
                    .into_iter()
                    .map(|((from, to), count)| Transition { from, to, count })
                    .collect(),
            })
            .collect(),
        reasoning_lengths: lengths
            .into_iter()
            .enumerate()
            .map(|(s, histogram)| {
                let n: usize = histogram.values().sum();
                let total: usize = histogram.iter().map(|(w, c)| w * c).sum();
                ReasoningLengths {
                    step: s + 1,
                    mean: if n == 0 { 0.0 } else { total as f64 / n as f64 },
                    histogram,
                }
            })
            .collect(),
    }
}
