//! Gated recurrent cell.
//!
//! `h' = (1 − z)⊙ĥ + z⊙h` with
//! `z = σ(W_z[x;h] + b_z)`, `r = σ(W_r[x;h] + b_r)`, `ĥ = tanh(W_h[x; r⊙h] + b_h)`.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Linear, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GruCell {
    pub update: Linear,
    pub reset: Linear,
    pub candidate: Linear,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Result<Self> {
        let cat = input_dim + hidden_dim;
        Ok(GruCell {
            update: Linear::new(store, rng, &format!("{name}/update"), cat, hidden_dim, true)?,
            reset: Linear::new(store, rng, &format!("{name}/reset"), cat, hidden_dim, true)?,
            candidate: Linear::new(
                store,
                rng,
                &format!("{name}/candidate"),
                cat,
                hidden_dim,
                true,
            )?,
            input_dim,
            hidden_dim,
        })
    }

    pub fn zero(&self, store: &mut ParamStore) -> Result<()> {
        self.update.zero(store)?;
        self.reset.zero(store)?;
        self.candidate.zero(store)
    }

    /// `x: [B, input_dim]`, `h: [B, hidden_dim]` → `[B, hidden_dim]`.
    pub fn forward(&self, graph: &mut Graph, store: &ParamStore, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (graph.shape(x).to_vec(), graph.shape(h).to_vec());
        let ok = xs.len() == 2
            && hs.len() == 2
            && xs[0] == hs[0]
            && xs[1] == self.input_dim
            && hs[1] == self.hidden_dim;
        if !ok {
            return Err(Error::shape("gru_cell", &xs, &hs));
        }
        let xh = graph.concat(&[x, h], 1)?;
        let z = self.update.forward(graph, store, xh)?;
        let z = graph.sigmoid(z)?;
        let r = self.reset.forward(graph, store, xh)?;
        let r = graph.sigmoid(r)?;
        let rh = graph.mul(r, h)?;
        let xrh = graph.concat(&[x, rh], 1)?;
        let cand = self.candidate.forward(graph, store, xrh)?;
        let cand = graph.tanh(cand)?;
        // ĥ + z⊙(h − ĥ)
        let diff = graph.sub(h, cand)?;
        let gated = graph.mul(z, diff)?;
        graph.add(cand, gated)
    }
}
