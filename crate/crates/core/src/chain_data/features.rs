//! Image feature tables: `image_path` → fixed-length `f64` vector.
//!
//! Stored either as a JSON object (`{"path": [..], ...}`) or as CSV rows
//! `path,v0,v1,...` without a header. The format is chosen by file extension.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    dim: usize,
    rows: BTreeMap<String, Vec<f64>>,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        FeatureTable {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, path: impl Into<String>, values: Vec<f64>) -> Result<()> {
        if values.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "feature vector has {} values, table dimension is {}",
                values.len(),
                self.dim
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "feature_table",
            });
        }
        self.rows.insert(path.into(), values);
        Ok(())
    }

    pub fn get(&self, path: &str) -> Result<&[f64]> {
        self.rows
            .get(path)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownImage(path.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.rows.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    fn from_rows(rows: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let dim = rows.values().next().map_or(0, Vec::len);
        let mut table = FeatureTable::new(dim);
        for (k, v) in rows {
            table.insert(k, v)?;
        }
        Ok(table)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.rows).expect("feature rows serialize")
    }

    pub fn from_json(src: &str) -> Result<Self> {
        let rows: BTreeMap<String, Vec<f64>> =
            serde_json::from_str(src).map_err(|e| Error::from_json(e, src))?;
        Self::from_rows(rows)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.rows {
            out.push_str(k);
            for x in v {
                write!(out, ",{x:?}").expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(src: &str) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (lineno, line) in src.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            let path = fields.next().unwrap_or_default().to_string();
            let values = fields
                .map(|f| {
                    f.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidArgument(format!(
                            "line {}: bad feature value `{f}`: {e}",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.insert(path, values);
        }
        Self::from_rows(rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = if is_csv(path) {
            self.to_csv()
        } else {
            self.to_json()
        };
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if is_csv(path) {
            Self::from_csv(&text)
        } else {
            Self::from_json(&text)
        }
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}
