//! Chain student: image features only, one linear head per step and a
//! shared residual update between steps.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain_data::CLASS_COUNTS;
use crate::encoders::ImageFeatureSource;
use crate::error::{Error, Result};
use crate::numerics::{Graph, Linear, ParamStore, Tensor, Var};
use crate::teacher::{check_compatible, shape_of, step_widths};

#[derive(Debug, Clone, PartialEq)]
pub struct StudentConfig {
    pub hidden_dim: usize,
    pub raw_dim: usize,
    /// Output width of the per-step similarity projections.
    pub proj_dim: usize,
    pub class_counts: Vec<usize>,
    pub seed: u64,
}

impl Default for StudentConfig {
    fn default() -> Self {
        StudentConfig {
            hidden_dim: 512,
            raw_dim: 64,
            proj_dim: 256,
            class_counts: CLASS_COUNTS.to_vec(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudentOutput {
    pub logits: Vec<Var>,
    /// `V_s`: per-step projections of the feature the step head saw.
    pub projections: Vec<Var>,
    /// Feature before each step (`f_0 .. f_{S-1}`).
    pub features: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct StudentModel {
    pub config: StudentConfig,
    pub params: ParamStore,
    pub image_proj: Linear,
    pub heads: Vec<Linear>,
    pub update: Linear,
    pub ch_proj: Vec<Linear>,
}

pub const PREFIX: &str = "student";

impl StudentModel {
    pub fn new(config: StudentConfig) -> Result<Self> {
        if config.class_counts.is_empty() {
            return Err(Error::InvalidArgument(
                "student needs at least one step".into(),
            ));
        }
        let d = config.hidden_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let p = |s: &str| format!("{PREFIX}/{s}");
        let image_proj = Linear::new(
            &mut params,
            &mut rng,
            &p("image_proj"),
            config.raw_dim,
            d,
            true,
        )?;
        let heads = config
            .class_counts
            .iter()
            .enumerate()
            .map(|(s, &c)| Linear::new(&mut params, &mut rng, &p(&format!("head/{s}")), d, c, true))
            .collect::<Result<Vec<_>>>()?;
        let update = Linear::new(&mut params, &mut rng, &p("update"), d, d, true)?;
        let ch_proj = (0..config.class_counts.len())
            .map(|s| {
                Linear::new(
                    &mut params,
                    &mut rng,
                    &p(&format!("ch_proj/{s}")),
                    d,
                    config.proj_dim,
                    true,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(StudentModel {
            config,
            params,
            image_proj,
            heads,
            update,
            ch_proj,
        })
    }

    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        check_compatible(&self.params, &store)?;
        self.params = store;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    pub fn forward<S: AsRef<str>>(
        &self,
        graph: &mut Graph,
        source: &ImageFeatureSource,
        paths: &[S],
    ) -> Result<StudentOutput> {
        self.forward_raw(graph, source.raw_batch(paths)?)
    }

    /// Predict at step `s` from `f_{s-1}`, then `f_s = f_{s-1} + update(f_{s-1})`.
    pub fn forward_raw(&self, graph: &mut Graph, raw: Tensor) -> Result<StudentOutput> {
        if raw.shape.first().copied().unwrap_or(0) == 0 {
            return Err(Error::InvalidArgument(
                "student forward on an empty batch".into(),
            ));
        }
        let raw = graph.constant(raw)?;
        let mut f = self.image_proj.forward(graph, &self.params, raw)?;
        let steps = self.heads.len();
        let mut out = StudentOutput {
            logits: Vec::with_capacity(steps),
            projections: Vec::with_capacity(steps),
            features: Vec::with_capacity(steps),
        };
        for s in 0..steps {
            out.features.push(f);
            out.logits
                .push(self.heads[s].forward(graph, &self.params, f)?);
            out.projections
                .push(self.ch_proj[s].forward(graph, &self.params, f)?);
            if s + 1 < steps {
                let delta = self.update.forward(graph, &self.params, f)?;
                f = graph.add(f, delta)?;
            }
        }
        Ok(out)
    }
}

impl StudentConfig {
    /// Reads the architecture back from a student checkpoint.
    pub fn infer(store: &ParamStore) -> Result<Self> {
        let p = |s: &str| format!("{PREFIX}/{s}");
        let proj = shape_of(store, &p("image_proj/weight"))?;
        let (hidden_dim, raw_dim) = (proj[0], proj[1]);
        let proj_dim = shape_of(store, &p("ch_proj/0/weight"))?[0];
        Ok(StudentConfig {
            hidden_dim,
            raw_dim,
            proj_dim,
            class_counts: step_widths(store, |s| p(&format!("head/{s}/weight"))),
            ..StudentConfig::default()
        })
    }
}

impl StudentModel {
    /// Model whose architecture and weights come from `store`.
    pub fn from_params(store: ParamStore) -> Result<Self> {
        let mut model = StudentModel::new(StudentConfig::infer(&store)?)?;
        model.load_params(store)?;
        Ok(model)
    }
}
