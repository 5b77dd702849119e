//! Per-class train/validation/test partitioning.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::labels::encode_labels;
use super::record::ChainRecord;
use super::schema::StepSchema;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub per_class: BTreeMap<String, SplitCounts>,
}

impl SplitManifest {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

// Products like 0.7·30 land just below the integer in binary floating point.
fn floor_fraction(ratio: f64, n: usize) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// `floor(train·n)` / `floor(val·n)` / remainder for a class of size `n`.
pub fn class_counts(ratios: SplitRatios, n: usize) -> SplitCounts {
    let train = floor_fraction(ratios.train, n);
    let val = floor_fraction(ratios.val, n);
    SplitCounts {
        train,
        val,
        test: n - train - val,
    }
}

/// Stratified split of `(id, class)` pairs.
///
/// Within each class the ids are sorted, shuffled with a generator seeded by
/// `seed`, and cut into train/val/test. Classes are visited in sorted order,
/// so the result does not depend on the input order.
pub fn stratified_split(
    items: &[(String, String)],
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitManifest> {
    let sum = ratios.train + ratios.val + ratios.test;
    let in_range = [ratios.train, ratios.val, ratios.test]
        .iter()
        .all(|r| (0.0..=1.0).contains(r));
    if !in_range || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be in [0, 1] and sum to 1, got {ratios:?}"
        )));
    }
    let mut by_class: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (id, class) in items {
        by_class.entry(class).or_default().push(id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = SplitManifest::default();
    for (class, mut ids) in by_class {
        ids.sort_unstable();
        ids.shuffle(&mut rng);
        let counts = class_counts(ratios, ids.len());
        let (train, rest) = ids.split_at(counts.train);
        let (val, test) = rest.split_at(counts.val);
        manifest.train.extend(train.iter().map(|s| s.to_string()));
        manifest.val.extend(val.iter().map(|s| s.to_string()));
        manifest.test.extend(test.iter().map(|s| s.to_string()));
        manifest.per_class.insert(class.to_string(), counts);
    }
    Ok(manifest)
}

/// Stratifies validated records by their step-7 diagnosis.
pub fn split_records(
    records: &[ChainRecord],
    schema: &StepSchema,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitManifest> {
    let items = records
        .iter()
        .map(|r| {
            let diag = encode_labels(r, schema)?.diagnosis();
            let class = super::labels::decode_label(schema, 6, diag).ok_or_else(|| {
                Error::InvalidArgument(format!("record `{}` has no diagnosis", r.patient_id))
            })?;
            Ok((r.patient_id.clone(), class.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    stratified_split(&items, ratios, seed)
}

pub const SPLIT_FILES: [&str; 3] = ["train.csv", "val.csv", "test.csv"];

/// Writes `train.csv`, `val.csv`, `test.csv`: one id per LF-terminated line.
pub fn write_split_files(dir: &Path, manifest: &SplitManifest) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (file, ids) in SPLIT_FILES
        .iter()
        .zip([&manifest.train, &manifest.val, &manifest.test])
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(file))?);
        for id in ids {
            f.write_all(id.as_bytes())?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    Ok(())
}

/// Reads the three split files; `per_class` is left empty.
pub fn read_split_files(dir: &Path) -> Result<SplitManifest> {
    let read = |file: &str| -> Result<Vec<String>> {
        Ok(std::fs::read_to_string(dir.join(file))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect())
    };
    Ok(SplitManifest {
        train: read(SPLIT_FILES[0])?,
        val: read(SPLIT_FILES[1])?,
        test: read(SPLIT_FILES[2])?,
        per_class: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn items(class_sizes: &[(&str, usize)]) -> Vec<(String, String)> {
        class_sizes
            .iter()
            .flat_map(|(c, n)| (0..*n).map(move |i| (format!("{c}-{i}"), c.to_string())))
            .collect()
    }

    #[test]
    fn distribution_table_rows() {
        let r = SplitRatios::default();
        assert_eq!(
            class_counts(r, 6787),
            SplitCounts {
                train: 4750,
                val: 1018,
                test: 1019
            }
        );
        assert_eq!(
            class_counts(r, 41),
            SplitCounts {
                train: 28,
                val: 6,
                test: 7
            }
        );
        assert_eq!(
            class_counts(r, 1),
            SplitCounts {
                train: 0,
                val: 0,
                test: 1
            }
        );
        assert_eq!(class_counts(r, 30).train, 21);
    }

    #[test]
    fn empty_input_gives_empty_manifest() {
        let m = stratified_split(&[], SplitRatios::default(), 0).unwrap();
        assert!(m.is_empty() && m.per_class.is_empty());
    }

    #[test]
    fn bad_ratios_rejected() {
        let r = SplitRatios {
            train: 0.8,
            val: 0.15,
            test: 0.15,
        };
        assert!(stratified_split(&items(&[("a", 3)]), r, 0).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m =
            stratified_split(&items(&[("a", 20), ("b", 7)]), SplitRatios::default(), 5).unwrap();
        write_split_files(dir.path(), &m).unwrap();
        let text = std::fs::read_to_string(dir.path().join("val.csv")).unwrap();
        assert!(text.ends_with('\n') && !text.contains('\r'));
        let back = read_split_files(dir.path()).unwrap();
        assert_eq!((back.train, back.val, back.test), (m.train, m.val, m.test));
    }

    proptest! {
        #[test]
        fn disjoint_exhaustive_deterministic(sizes in proptest::collection::vec(0usize..60, 1..6), seed in any::<u64>()) {
            let named: Vec<(String, usize)> = sizes.iter().enumerate().map(|(i, n)| (format!("c{i}"), *n)).collect();
            let refs: Vec<(&str, usize)> = named.iter().map(|(c, n)| (c.as_str(), *n)).collect();
            let all = items(&refs);
            let m = stratified_split(&all, SplitRatios::default(), seed).unwrap();
            let mut seen = HashSet::new();
            for id in m.train.iter().chain(&m.val).chain(&m.test) {
                prop_assert!(seen.insert(id.clone()));
            }
            prop_assert_eq!(seen.len(), all.len());
            let mut reversed = all.clone();
            reversed.reverse();
            prop_assert_eq!(&stratified_split(&reversed, SplitRatios::default(), seed).unwrap(), &m);
            for (class, c) in &m.per_class {
                let n = (c.train + c.val + c.test) as f64;
                prop_assert!(((c.train as f64 / n) - 0.70).abs() < 1.0 / n, "{}", class);
            }
        }
    }
}
