//! Named parameter storage, initialization and JSON checkpoints.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A trainable tensor and its unique name.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Parameters keyed by name, iterated in lexicographic order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::InvalidArgument(format!(
                "duplicate parameter `{name}`"
            )));
        }
        self.params.insert(name, tensor.with_grad());
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))
    }

    pub fn bind(&self, graph: &mut Graph, name: &str) -> Result<Var> {
        graph.param(name, self.get(name)?)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Moves all parameters of `other` in; names must not collide.
    pub fn extend(&mut self, other: ParamStore) -> Result<()> {
        for (k, v) in other.params {
            self.insert(k, v)?;
        }
        Ok(())
    }

    /// Parameters whose names start with `prefix`.
    pub fn filter_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Bit-exact equality of every value.
    pub fn bit_identical(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|((ka, a), (kb, b))| {
                    ka == kb
                        && a.shape == b.shape
                        && a.data
                            .iter()
                            .zip(&b.data)
                            .all(|(x, y)| x.to_bits() == y.to_bits())
                })
    }

    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, StoredTensor> = self
            .params
            .iter()
            .map(|(k, v)| {
                (
                    k.as_str(),
                    StoredTensor {
                        shape: v.shape.clone(),
                        data: v.data.clone(),
                    },
                )
            })
            .collect();
        serde_json::to_string(&map).expect("parameter map serializes")
    }

    pub fn from_json(src: &str) -> Result<Self> {
        let map: BTreeMap<String, StoredTensor> =
            serde_json::from_str(src).map_err(|e| Error::from_json(e, src))?;
        let mut store = ParamStore::new();
        for (k, v) in map {
            store.insert(k, Tensor::new(v.shape, v.data)?)?;
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Uniform in `[-1/√fan_in, 1/√fan_in]`.
pub fn uniform_init(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and data agree")
}

/// Fully connected layer: `y = x·Wᵀ + b`, `W` stored `[out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: Option<String>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = format!("{name}/weight");
        store.insert(&weight, uniform_init(rng, &[out_dim, in_dim], in_dim))?;
        let bias = if bias {
            let b = format!("{name}/bias");
            store.insert(&b, Tensor::zeros(&[out_dim]))?;
            Some(b)
        } else {
            None
        };
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = store.bind(graph, &self.weight)?;
        let b = match &self.bias {
            Some(b) => Some(store.bind(graph, b)?),
            None => None,
        };
        graph.linear(x, w, b)
    }

    /// Overwrites weights (and bias) with zeros.
    pub fn zero(&self, store: &mut ParamStore) -> Result<()> {
        store.get_mut(&self.weight)?.data.fill(0.0);
        if let Some(b) = &self.bias {
            store.get_mut(b)?.data.fill(0.0);
        }
        Ok(())
    }
}

/// Row-wise layer normalization with learnable gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: String,
    pub beta: String,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        let gamma = format!("{name}/gamma");
        let beta = format!("{name}/beta");
        let mut ones = Tensor::zeros(&[dim]);
        ones.data.fill(1.0);
        store.insert(&gamma, ones)?;
        store.insert(&beta, Tensor::zeros(&[dim]))?;
        Ok(LayerNorm {
            gamma,
            beta,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let g = store.bind(graph, &self.gamma)?;
        let b = store.bind(graph, &self.beta)?;
        graph.layer_norm(x, g, b, self.eps)
    }
}
