//! Synthetic chains with class-prototype image features.
//!
//! Each record draws a diagnosis uniformly from the step-7 options. Steps
//! 1–6 follow a fixed per-diagnosis chain ([`chain_for`]), so every step
//! label is a function of the diagnosis. The image feature of a record is
//! the one-hot prototype of its diagnosis plus isotropic Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::features::FeatureTable;
use super::record::{ChainRecord, ChainStep};
use super::schema::{StepSchema, NOT_APPLICABLE, STEP_COUNT};
use crate::error::{Error, Result};

pub struct SyntheticData {
    pub records: Vec<ChainRecord>,
    pub features: FeatureTable,
}

const ORIGINS: [&str; 3] = ["IU X-Ray", "PadChest-GR", "Med-Image-Report"];

/// Answers for steps 1–6 given a diagnosis.
pub fn chain_for(diagnosis: &str) -> [&'static str; 6] {
    match diagnosis {
        "Atelectasis" => [
            "Increased opacity",
            "Focal",
            "Consolidation",
            "Lower lobes",
            "Scarring/Fibrosis",
            "Volume loss/atelectasis",
        ],
        "Cardiomegaly" => [
            "Increased opacity",
            "Focal",
            "Consolidation",
            "Mediastinum",
            "Well-circumscribed",
            "Mediastinal shift",
        ],
        "Effusion" => [
            "Increased opacity",
            "Focal",
            "Ground-glass opacity",
            "Pleura/Chest wall",
            "Well-circumscribed",
            "Pleural effusion",
        ],
        "Infiltration" => [
            "Increased opacity",
            "Scattered",
            "Reticular",
            "Bilateral diffuse",
            "Scarring/Fibrosis",
            "No effect",
        ],
        "Mass" => [
            "Increased opacity",
            "Focal",
            "Nodule",
            "Right upper lobe",
            "Spiculated",
            "No effect",
        ],
        "Nodule" => [
            "Increased opacity",
            "Focal",
            "Nodule",
            "Left upper lobe",
            "Well-circumscribed",
            "No effect",
        ],
        "Pneumonia" => [
            "Increased opacity",
            "Diffuse",
            "Ground-glass opacity",
            "Lower lobes",
            "Cavitary",
            "No effect",
        ],
        "Pneumothorax" => [
            "Decreased opacity",
            "Focal",
            "Cavity",
            "Pleura/Chest wall",
            "Well-circumscribed",
            "Pneumothorax",
        ],
        _ => [
            "No abnormality",
            NOT_APPLICABLE,
            NOT_APPLICABLE,
            NOT_APPLICABLE,
            NOT_APPLICABLE,
            NOT_APPLICABLE,
        ],
    }
}

/// Prototype feature of diagnosis class `class`: the `class`-th unit vector.
pub fn prototype(class: usize, dim: usize) -> Vec<f64> {
    let mut p = vec![0.0; dim];
    p[class] = 1.0;
    p
}

pub fn generate_synthetic(
    n: usize,
    feature_dim: usize,
    seed: u64,
    noise: f64,
) -> Result<SyntheticData> {
    let schema = StepSchema::standard();
    let classes = schema.diagnoses().len();
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic set needs n >= 1".into()));
    }
    if feature_dim < classes + 1 {
        return Err(Error::InvalidArgument(format!(
            "feature_dim {feature_dim} is below the step-7 class count {}",
            classes + 1
        )));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise must be a finite value >= 0, got {noise}"
        )));
    }
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    let mut features = FeatureTable::new(feature_dim);
    let width = n.to_string().len().max(5);
    for i in 0..n {
        let class = rng.gen_range(0..classes);
        let diagnosis = schema.diagnoses()[class].clone();
        let id = format!("synth-{i:0width$}");
        let image_path = format!("images/{id}.png");
        let answers = chain_for(&diagnosis);
        let vqa_chain = schema
            .steps
            .iter()
            .enumerate()
            .map(|(s, spec)| {
                let answer = if s < STEP_COUNT - 1 {
                    answers[s].to_string()
                } else {
                    diagnosis.clone()
                };
                let reasoning = if answer == NOT_APPLICABLE {
                    "No abnormalities exist, making this step irrelevant.".to_string()
                } else {
                    format!("Findings consistent with {diagnosis} support the answer {answer}.")
                };
                ChainStep {
                    step: spec.step_name.clone(),
                    question: spec.question.clone(),
                    options: spec.options.clone(),
                    answer,
                    reasoning,
                }
            })
            .collect();
        let mut feat = prototype(class, feature_dim);
        for v in &mut feat {
            *v += noise * gauss.sample(&mut rng);
        }
        features.insert(image_path.clone(), feat)?;
        records.push(ChainRecord {
            patient_id: id,
            image_path,
            origin: ORIGINS[i % ORIGINS.len()].to_string(),
            report: format!("Synthetic study. Impression: {diagnosis}."),
            vqa_chain,
        });
    }
    Ok(SyntheticData { records, features })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_data::record::{parse_and_validate, serialize_records};

    #[test]
    fn generated_records_validate() {
        let data = generate_synthetic(200, 16, 3, 0.1).unwrap();
        let doc = serialize_records(&data.records);
        let report = parse_and_validate(&doc, &StepSchema::standard()).unwrap();
        assert!(report.is_clean(), "{:?}", &report.violations[..1]);
        assert_eq!(report.records, data.records);
        assert_eq!(data.features.len(), 200);
    }

    #[test]
    fn zero_noise_same_class_identical() {
        let data = generate_synthetic(50, 12, 9, 0.0).unwrap();
        let a = &data.records[0];
        let b = data.records[1..]
            .iter()
            .find(|r| r.diagnosis() == a.diagnosis())
            .expect("a repeated class among 50 draws");
        assert_eq!(
            data.features.get(&a.image_path).unwrap(),
            data.features.get(&b.image_path).unwrap()
        );
    }

    #[test]
    fn nearest_prototype_recovers_diagnosis() {
        let schema = StepSchema::standard();
        let data = generate_synthetic(1000, 64, 17, 0.1).unwrap();
        let classes = schema.diagnoses().len();
        let protos: Vec<Vec<f64>> = (0..classes).map(|c| prototype(c, 64)).collect();
        let correct = data
            .records
            .iter()
            .filter(|r| {
                let f = data.features.get(&r.image_path).unwrap();
                let best = (0..classes)
                    .min_by(|&a, &b| {
                        let da: f64 = f.iter().zip(&protos[a]).map(|(x, y)| (x - y).powi(2)).sum();
                        let db: f64 = f.iter().zip(&protos[b]).map(|(x, y)| (x - y).powi(2)).sum();
                        da.total_cmp(&db)
                    })
                    .unwrap();
                schema.diagnoses()[best] == r.diagnosis().unwrap()
            })
            .count();
        assert!(correct as f64 / 1000.0 >= 0.99, "{correct}");
    }

    #[test]
    fn small_feature_dim_rejected() {
        assert!(generate_synthetic(10, 9, 0, 0.1).is_err());
        assert!(generate_synthetic(0, 16, 0, 0.1).is_err());
    }
}
