use serde::{Deserialize, Serialize};

/// One step of the `vqa_chain` template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSpec {
    pub step_name: String,
    pub question: String,
    pub options: Vec<String>,
}

/// The fixed seven-step question/option template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepSchema {
    pub steps: Vec<StepSpec>,
}

pub const NOT_APPLICABLE: &str = "N/A";
pub const NO_ANSWER: &str = "No Answer";
pub const NO_ABNORMALITY: &str = "No abnormality";

/// Number of steps in every chain.
pub const STEP_COUNT: usize = 7;

/// Class counts per step: options plus the trailing N/A class.
pub const CLASS_COUNTS: [usize; STEP_COUNT] = [5, 4, 6, 7, 5, 7, 10];

/// Short names used in reports, in step order.
pub const STEP_LABELS: [&str; STEP_COUNT] = [
    "Detection",
    "Lesion distribution",
    "Radiographic pattern",
    "Anatomical location",
    "Morphologic feature",
    "Secondary effects/associated signs",
    "Diagnosis",
];

const TEMPLATE: [(&str, &str, &[&str]); STEP_COUNT] = [
    (
        "Step 1",
        "Is there any abnormal radiodensity in the lungs?",
        &[
            "No abnormality",
            "Increased opacity",
            "Decreased opacity",
            "Mixed",
        ],
    ),
    (
        "Step 2",
        "What is the distribution pattern of the abnormal findings?",
        &["Focal", "Scattered", "Diffuse"],
    ),
    (
        "Step 3",
        "What is the predominant imaging pattern?",
        &[
            "Consolidation",
            "Ground-glass opacity",
            "Reticular",
            "Cavity",
            "Nodule",
        ],
    ),
    (
        "Step 4",
        "Where is the main abnormality located?",
        &[
            "Right upper lobe",
            "Left upper lobe",
            "Lower lobes",
            "Bilateral diffuse",
            "Pleura/Chest wall",
            "Mediastinum",
        ],
    ),
    (
        "Step 5",
        "Are the lesions well-defined or have any internal characteristics?",
        &[
            "Well-circumscribed",
            "Spiculated",
            "Cavitary",
            "Scarring/Fibrosis",
        ],
    ),
    (
        "Step 6",
        "Do the lesions affect adjacent structures or cause structural changes?",
        &[
            "No effect",
            "Mediastinal shift",
            "Volume loss/atelectasis",
            "Pleural effusion",
            "Pneumothorax",
            "Hyperinflation",
        ],
    ),
    (
        "Step 7",
        "What is the most likely radiographic diagnosis?",
        &[
            "Atelectasis",
            "Cardiomegaly",
            "Effusion",
            "Infiltration",
            "Mass",
            "Nodule",
            "Pneumonia",
            "Pneumothorax",
            "Normal",
        ],
    ),
];

/// Spellings rewritten to their canonical form at parse time.
const ALIASES: [(&str, &str); 1] = [("G. Pneumonia", "Pneumonia")];

/// Canonical spelling of an option or answer string.
pub fn normalize(text: &str) -> &str {
    ALIASES
        .iter()
        .find(|(alias, _)| *alias == text)
        .map_or(text, |(_, canonical)| canonical)
}

impl StepSchema {
    pub fn standard() -> Self {
        StepSchema {
            steps: TEMPLATE
                .iter()
                .map(|(name, question, options)| StepSpec {
                    step_name: name.to_string(),
                    question: question.to_string(),
                    options: options.iter().map(|o| o.to_string()).collect(),
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.options.len() + 1).collect()
    }

    /// Label index of N/A at `step` (0-based): the last class.
    pub fn na_index(&self, step: usize) -> usize {
        self.steps[step].options.len()
    }

    pub fn option_index(&self, step: usize, answer: &str) -> Option<usize> {
        let answer = normalize(answer);
        self.steps[step].options.iter().position(|o| o == answer)
    }

    /// Step-7 option strings, i.e. the diagnosis classes.
    pub fn diagnoses(&self) -> &[String] {
        &self.steps[STEP_COUNT - 1].options
    }
}
