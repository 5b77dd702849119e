//! Seven-step `vqa_chain` data: template, parsing and validation, label
//! encoding, stratified splitting, statistics and a synthetic generator.

pub mod features;
pub mod labels;
pub mod record;
pub mod schema;
pub mod split;
pub mod stats;
pub mod synth;

pub use features::FeatureTable;
pub use labels::{decode_label, encode_labels, LabelVector};
pub use record::{
    parse_and_validate, serialize_records, ChainRecord, ChainStep, Rule, ValidationReport,
    Violation,
};
pub use schema::{StepSchema, StepSpec, CLASS_COUNTS, STEP_COUNT};
pub use split::{
    read_split_files, split_records, stratified_split, write_split_files, SplitCounts,
    SplitManifest, SplitRatios,
};
pub use stats::{compute_stats, DatasetStats};
pub use synth::{generate_synthetic, SyntheticData};
