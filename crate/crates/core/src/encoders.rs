//! Learnable step-prompt embeddings and the frozen image-feature source.

use rand::Rng;

use crate::chain_data::FeatureTable;
use crate::error::{Error, Result};
use crate::numerics::{uniform_init, Graph, Linear, ParamStore, Tensor, Var};

/// One trainable vector per step prompt, stored as a `[steps, dim]` parameter.
#[derive(Debug, Clone)]
pub struct PromptTable {
    pub name: String,
    pub steps: usize,
    pub dim: usize,
}

impl PromptTable {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        steps: usize,
        dim: usize,
    ) -> Result<Self> {
        store.insert(name, uniform_init(rng, &[steps, dim], dim))?;
        Ok(PromptTable {
            name: name.to_string(),
            steps,
            dim,
        })
    }

    pub fn zero(&self, store: &mut ParamStore) -> Result<()> {
        store.get_mut(&self.name)?.data.fill(0.0);
        Ok(())
    }

    /// The `[steps, dim]` step vectors, bound for differentiation.
    pub fn encode_prompts(&self, graph: &mut Graph, store: &ParamStore) -> Result<Var> {
        let v = store.bind(graph, &self.name)?;
        let shape = graph.shape(v);
        if shape != [self.steps, self.dim] {
            return Err(Error::shape(
                "encode_prompts",
                shape,
                &[self.steps, self.dim],
            ));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureTarget {
    Teacher,
    Student,
}

/// Read-only raw image vectors. Gradients stop here: lookups enter the
/// graph as constants, so only the projections applied on top train.
#[derive(Debug, Clone)]
pub struct ImageFeatureSource {
    table: FeatureTable,
}

impl ImageFeatureSource {
    pub fn new(table: FeatureTable) -> Self {
        ImageFeatureSource { table }
    }

    pub fn raw_dim(&self) -> usize {
        self.table.dim()
    }

    pub fn table(&self) -> &FeatureTable {
        &self.table
    }

    /// `[B, raw_dim]` raw features for `paths`.
    pub fn raw_batch<S: AsRef<str>>(&self, paths: &[S]) -> Result<Tensor> {
        let dim = self.table.dim();
        let mut data = Vec::with_capacity(paths.len() * dim);
        for p in paths {
            data.extend_from_slice(self.table.get(p.as_ref())?);
        }
        Tensor::new(vec![paths.len(), dim], data)
    }

    /// Looks up `paths` and applies `projection` (the teacher's or student's).
    pub fn image_features<S: AsRef<str>>(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        projection: &Linear,
        paths: &[S],
    ) -> Result<Var> {
        let raw = graph.constant(self.raw_batch(paths)?)?;
        projection.forward(graph, store, raw)
    }
}
