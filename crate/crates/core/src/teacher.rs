//! Graph-attention memory teacher.
//!
//! Every example carries a graph of `steps + 1` nodes: the step prompt
//! vectors followed by a memory node. For each step the graph is rebuilt
//! with the current memory, passed through the stacked GAT layers, and the
//! updated step and memory nodes are fused into a step context. The step
//! classifier sees the image embedding and that context. Its softmaxed
//! prediction, mapped through the classifier's output weights, is written
//! back into memory by a GRU cell before the next step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::chain_data::CLASS_COUNTS;
use crate::encoders::{ImageFeatureSource, PromptTable};
use crate::error::{Error, Result};
use crate::numerics::{
    uniform_init, AttentionLayout, Graph, GruCell, LayerNorm, Linear, ParamStore, Tensor, Var,
    DROPOUT_RATE, LEAKY_SLOPE,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub raw_dim: usize,
    pub dropout: f64,
    pub class_counts: Vec<usize>,
    pub seed: u64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        TeacherConfig {
            hidden_dim: 768,
            heads: 4,
            layers: 2,
            raw_dim: 64,
            dropout: DROPOUT_RATE,
            class_counts: CLASS_COUNTS.to_vec(),
            seed: 0,
        }
    }
}

impl TeacherConfig {
    pub fn steps(&self) -> usize {
        self.class_counts.len()
    }

    /// Nodes per example graph: one per step plus the memory node.
    pub fn nodes(&self) -> usize {
        self.steps() + 1
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }
}

/// One multi-head attention layer over fully connected node graphs,
/// followed by a residual connection and layer norm.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub projection: Linear,
    pub att_src: String,
    pub att_dst: String,
    pub norm: LayerNorm,
    pub heads: usize,
    pub head_dim: usize,
}

impl GatLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!(
                "hidden dim {dim} is not divisible by {heads} heads"
            )));
        }
        let head_dim = dim / heads;
        let projection = Linear::new(store, rng, &format!("{name}/projection"), dim, dim, false)?;
        let att_src = format!("{name}/att_src");
        let att_dst = format!("{name}/att_dst");
        store.insert(&att_src, uniform_init(rng, &[heads, head_dim], head_dim))?;
        store.insert(&att_dst, uniform_init(rng, &[heads, head_dim], head_dim))?;
        let norm = LayerNorm::new(store, &format!("{name}/norm"), dim)?;
        Ok(GatLayer {
            projection,
            att_src,
            att_dst,
            norm,
            heads,
            head_dim,
        })
    }

    /// `x: [groups·nodes, dim]`. Returns the layer output and the attention
    /// node (whose coefficients [`Graph::attention_coefficients`] exposes).
    pub fn forward(
        &self,
        graph: &mut Graph,
        store: &ParamStore,
        x: Var,
        groups: usize,
        nodes: usize,
    ) -> Result<(Var, Var)> {
        let z = self.projection.forward(graph, store, x)?;
        let src = store.bind(graph, &self.att_src)?;
        let dst = store.bind(graph, &self.att_dst)?;
        let layout = AttentionLayout {
            groups,
            nodes,
            heads: self.heads,
            head_dim: self.head_dim,
        };
        let att = graph.graph_attention(z, src, dst, layout, LEAKY_SLOPE)?;
        let res = graph.add(att, x)?;
        Ok((self.norm.forward(graph, store, res)?, att))
    }
}

/// `[v; c_s] → hidden (ReLU) → C_s`.
#[derive(Debug, Clone)]
pub struct StepClassifier {
    pub hidden: Linear,
    pub out: Linear,
}

/// Everything the teacher produces for one batch.
#[derive(Debug, Clone)]
pub struct TeacherOutput {
    /// `[B, C_s]` per step.
    pub logits: Vec<Var>,
    /// Teacher-projected image embedding `[B, d]`.
    pub image: Var,
    /// Memory before step 1 and after each write-back (`steps + 1` entries).
    pub memories: Vec<Var>,
    /// Attention nodes, `layers` per step, in evaluation order.
    pub attention: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct TeacherModel {
    pub config: TeacherConfig,
    pub params: ParamStore,
    pub prompts: PromptTable,
    pub memory_init: String,
    pub image_proj: Linear,
    pub gat: Vec<GatLayer>,
    pub fusion: Linear,
    pub fusion_norm: LayerNorm,
    pub classifiers: Vec<StepClassifier>,
    pub pred2mem: Linear,
    pub gru: GruCell,
}

pub const PREFIX: &str = "teacher";

impl TeacherModel {
    pub fn new(config: TeacherConfig) -> Result<Self> {
        let d = config.hidden_dim;
        if config.steps() == 0 || config.layers == 0 {
            return Err(Error::InvalidArgument(
                "teacher needs at least one step and one layer".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let p = |s: &str| format!("{PREFIX}/{s}");
        let prompts = PromptTable::new(&mut params, &mut rng, &p("prompts"), config.steps(), d)?;
        let memory_init = p("memory_init");
        params.insert(&memory_init, uniform_init(&mut rng, &[1, d], d))?;
        let image_proj = Linear::new(
            &mut params,
            &mut rng,
            &p("image_proj"),
            config.raw_dim,
            d,
            true,
        )?;
        let gat = (0..config.layers)
            .map(|l| {
                GatLayer::new(
                    &mut params,
                    &mut rng,
                    &p(&format!("gat/{l}")),
                    d,
                    config.heads,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let fusion = Linear::new(&mut params, &mut rng, &p("fusion"), 2 * d, d, true)?;
        let fusion_norm = LayerNorm::new(&mut params, &p("fusion/norm"), d)?;
        let classifiers = config
            .class_counts
            .iter()
            .enumerate()
            .map(|(s, &c)| {
                Ok(StepClassifier {
                    hidden: Linear::new(
                        &mut params,
                        &mut rng,
                        &p(&format!("classifier/{s}/hidden")),
                        2 * d,
                        d,
                        true,
                    )?,
                    out: Linear::new(
                        &mut params,
                        &mut rng,
                        &p(&format!("classifier/{s}/out")),
                        d,
                        c,
                        true,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pred2mem = Linear::new(&mut params, &mut rng, &p("pred2mem"), d, d, true)?;
        let gru = GruCell::new(&mut params, &mut rng, &p("gru"), d, d)?;
        Ok(TeacherModel {
            config,
            params,
            prompts,
            memory_init,
            image_proj,
            gat,
            fusion,
            fusion_norm,
            classifiers,
            pred2mem,
            gru,
        })
    }

    /// Replaces all parameters; names and shapes must match this model.
    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        check_compatible(&self.params, &store)?;
        self.params = store;
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Stacked GAT over `[batch·nodes, d]` node features.
    pub fn gat_forward(
        &self,
        graph: &mut Graph,
        nodes: Var,
        batch: usize,
    ) -> Result<(Var, Vec<Var>)> {
        let per = self.config.nodes();
        let rows = graph.shape(nodes)[0];
        if batch == 0 || rows != batch * per {
            return Err(Error::InvalidArgument(format!(
                "gat_forward: expected {per} nodes per example, got {rows} rows for batch {batch}"
            )));
        }
        let mut x = nodes;
        let mut att = Vec::with_capacity(self.gat.len());
        for layer in &self.gat {
            let (y, a) = layer.forward(graph, &self.params, x, batch, per)?;
            att.push(a);
            x = y;
        }
        Ok((x, att))
    }

    /// Step context and logits for step `s` from GAT-updated nodes.
    /// Returns `(logits, updated memory node)`.
    pub fn teacher_step(
        &self,
        graph: &mut Graph,
        s: usize,
        updated: Var,
        image: Var,
        batch: usize,
    ) -> Result<(Var, Var)> {
        let steps = self.config.steps();
        if s >= steps {
            return Err(Error::InvalidArgument(format!(
                "step index {s} out of range [0, {steps})"
            )));
        }
        let per = self.config.nodes();
        let step_rows: Vec<usize> = (0..batch).map(|b| b * per + s).collect();
        let mem_rows: Vec<usize> = (0..batch).map(|b| b * per + steps).collect();
        let t_s = graph.gather_rows(updated, &step_rows)?;
        let m = graph.gather_rows(updated, &mem_rows)?;
        let cat = graph.concat(&[t_s, m], 1)?;
        let c = self.fusion.forward(graph, &self.params, cat)?;
        let c = self.fusion_norm.forward(graph, &self.params, c)?;
        let c = graph.relu(c)?;
        let c = graph.dropout(c, self.config.dropout)?;
        let logits = self.classify(graph, s, image, c)?;
        Ok((logits, m))
    }

    /// `f⁽ˢ⁾([v; c])`.
    pub fn classify(&self, graph: &mut Graph, s: usize, image: Var, context: Var) -> Result<Var> {
        let clf = &self.classifiers[s];
        let vc = graph.concat(&[image, context], 1)?;
        let h = clf.hidden.forward(graph, &self.params, vc)?;
        let h = graph.relu(h)?;
        clf.out.forward(graph, &self.params, h)
    }

    /// `GRU(pred2mem(softmax(logits)·W_cls), memory)`.
    pub fn memory_writeback(
        &self,
        graph: &mut Graph,
        s: usize,
        logits: Var,
        memory: Var,
    ) -> Result<Var> {
        let w_cls = self.params.bind(graph, &self.classifiers[s].out.weight)?;
        let (ls, ws) = (graph.shape(logits).to_vec(), graph.shape(w_cls).to_vec());
        if ls.len() != 2 || ls[1] != ws[0] {
            return Err(Error::shape("memory_writeback", &ls, &ws));
        }
        let p = graph.softmax(logits, 1)?;
        let e = graph.matmul(p, w_cls)?;
        let x = self.pred2mem.forward(graph, &self.params, e)?;
        self.gru.forward(graph, &self.params, x, memory)
    }

    /// Full sequential pass over all steps for a batch of image paths.
    pub fn forward<S: AsRef<str>>(
        &self,
        graph: &mut Graph,
        source: &ImageFeatureSource,
        paths: &[S],
    ) -> Result<TeacherOutput> {
        let raw = source.raw_batch(paths)?;
        self.forward_raw(graph, raw)
    }

    /// As [`TeacherModel::forward`], from a `[B, raw_dim]` feature tensor.
    pub fn forward_raw(&self, graph: &mut Graph, raw: Tensor) -> Result<TeacherOutput> {
        let batch = raw.shape[0];
        if batch == 0 {
            return Err(Error::InvalidArgument(
                "teacher forward on an empty batch".into(),
            ));
        }
        let steps = self.config.steps();
        let per = self.config.nodes();
        let raw = graph.constant(raw)?;
        let image = self.image_proj.forward(graph, &self.params, raw)?;
        let prompts = self.prompts.encode_prompts(graph, &self.params)?;
        let m0 = self.params.bind(graph, &self.memory_init)?;
        let mut memory = graph.gather_rows(m0, &vec![0; batch])?;

        let node_rows: Vec<usize> = (0..batch)
            .flat_map(|b| (0..steps).chain(std::iter::once(steps + b)))
            .collect();
        let mut out = TeacherOutput {
            logits: Vec::with_capacity(steps),
            image,
            memories: vec![memory],
            attention: Vec::new(),
        };
        debug_assert_eq!(node_rows.len(), batch * per);
        for s in 0..steps {
            let all = graph.concat(&[prompts, memory], 0)?;
            let nodes = graph.gather_rows(all, &node_rows)?;
            let (updated, att) = self.gat_forward(graph, nodes, batch)?;
            out.attention.extend(att);
            let (logits, m_updated) = self.teacher_step(graph, s, updated, image, batch)?;
            memory = self.memory_writeback(graph, s, logits, m_updated)?;
            out.logits.push(logits);
            out.memories.push(memory);
        }
        Ok(out)
    }
}

/// Shape of parameter `name`, or an error naming it.
pub(crate) fn shape_of<'s>(store: &'s ParamStore, name: &str) -> Result<&'s [usize]> {
    Ok(&store.get(name)?.shape)
}

/// Widths of `{prefix}/{s}/...` output layers for `s = 0, 1, …`.
pub(crate) fn step_widths(store: &ParamStore, weight: impl Fn(usize) -> String) -> Vec<usize> {
    (0..)
        .map_while(|s| store.get(&weight(s)).ok().map(|t| t.shape[0]))
        .collect()
}

impl TeacherConfig {
    /// Reads the architecture back from a teacher checkpoint.
    pub fn infer(store: &ParamStore) -> Result<Self> {
        let p = |s: &str| format!("{PREFIX}/{s}");
        let hidden_dim = shape_of(store, &p("memory_init"))?[1];
        let raw_dim = shape_of(store, &p("image_proj/weight"))?[1];
        let heads = shape_of(store, &p("gat/0/att_src"))?[0];
        let layers = (0..)
            .take_while(|l| store.get(&p(&format!("gat/{l}/att_src"))).is_ok())
            .count();
        let class_counts = step_widths(store, |s| p(&format!("classifier/{s}/out/weight")));
        Ok(TeacherConfig {
            hidden_dim,
            heads,
            layers,
            raw_dim,
            class_counts,
            ..TeacherConfig::default()
        })
    }
}

impl TeacherModel {
    /// Model whose architecture and weights come from `store`.
    pub fn from_params(store: ParamStore) -> Result<Self> {
        let mut model = TeacherModel::new(TeacherConfig::infer(&store)?)?;
        model.load_params(store)?;
        Ok(model)
    }
}

pub(crate) fn check_compatible(current: &ParamStore, incoming: &ParamStore) -> Result<()> {
    if current.len() != incoming.len() {
        return Err(Error::InvalidArgument(format!(
            "checkpoint has {} parameters, model has {}",
            incoming.len(),
            current.len()
        )));
    }
    for (name, t) in current.iter() {
        let other = incoming.get(name)?;
        if other.shape != t.shape {
            return Err(Error::shape("load_params", &t.shape, &other.shape));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small(seed: u64) -> TeacherModel {
        TeacherModel::new(TeacherConfig {
            hidden_dim: 16,
            heads: 4,
            layers: 2,
            raw_dim: 6,
            seed,
            ..TeacherConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn rebuilt_from_checkpoint() {
        let t = small(4);
        let back =
            TeacherModel::from_params(ParamStore::from_json(&t.params.to_json()).unwrap()).unwrap();
        assert_eq!(back.config.hidden_dim, 16);
        assert_eq!(
            (back.config.heads, back.config.layers, back.config.raw_dim),
            (4, 2, 6)
        );
        assert_eq!(back.config.class_counts, CLASS_COUNTS.to_vec());
        assert!(back.params.bit_identical(&t.params));
        assert!(TeacherModel::from_params(t.params.filter_prefix("teacher/gat")).is_err());
    }

    fn raw(batch: usize, dim: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..batch * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![batch, dim], data).unwrap()
    }

    #[test]
    fn logits_widths_follow_schema() {
        let t = small(1);
        let mut g = Graph::new();
        let out = t.forward_raw(&mut g, raw(3, 6, 0)).unwrap();
        let widths: Vec<Vec<usize>> = out.logits.iter().map(|l| g.shape(*l).to_vec()).collect();
        let expect: Vec<Vec<usize>> = CLASS_COUNTS.iter().map(|c| vec![3, *c]).collect();
        assert_eq!(widths, expect);
        assert_eq!(out.attention.len(), 7 * 2);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let t = small(2);
        let mut g = Graph::new();
        let out = t.forward_raw(&mut g, raw(2, 6, 1)).unwrap();
        for a in &out.attention {
            let alpha = g.attention_coefficients(*a).unwrap();
            for row in alpha.chunks(8) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|v| *v >= 0.0));
            }
        }
    }

    #[test]
    fn memory_is_shared_at_start_and_evolves() {
        let t = small(3);
        let mut g = Graph::new();
        let out = t.forward_raw(&mut g, raw(2, 6, 2)).unwrap();
        let m0 = g.value(out.memories[0]);
        assert_eq!(m0.row(0), m0.row(1));
        assert_eq!(
            m0.row(0),
            t.params.get(&t.memory_init).unwrap().data.as_slice()
        );
        let moved = out
            .memories
            .windows(2)
            .any(|w| g.value(w[0]).max_abs_diff(g.value(w[1])) > 1e-6);
        assert!(moved);
    }

    #[test]
    fn zero_final_layer_gives_uniform_softmax() {
        let mut t = small(4);
        for c in t.classifiers.clone() {
            c.out.zero(&mut t.params).unwrap();
        }
        let mut g = Graph::new();
        let out = t.forward_raw(&mut g, raw(2, 6, 3)).unwrap();
        for l in &out.logits {
            assert!(g.value(*l).data.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn identical_inputs_identical_logits_and_batch_independence() {
        let t = small(5);
        let r = raw(1, 6, 4);
        let mut pair = r.data.clone();
        pair.extend(raw(1, 6, 9).data);
        let mut g2 = Graph::new();
        let both = t
            .forward_raw(&mut g2, Tensor::new(vec![2, 6], pair).unwrap())
            .unwrap();
        let mut g1 = Graph::new();
        let single = t.forward_raw(&mut g1, r.clone()).unwrap();
        for (a, b) in single.logits.iter().zip(&both.logits) {
            let (a, b) = (g1.value(*a), g2.value(*b));
            for (x, y) in a.row(0).iter().zip(b.row(0)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let mut dup = r.data.clone();
        dup.extend(&r.data);
        let mut g3 = Graph::new();
        let same = t
            .forward_raw(&mut g3, Tensor::new(vec![2, 6], dup).unwrap())
            .unwrap();
        for l in &same.logits {
            let v = g3.value(*l);
            assert_eq!(v.row(0), v.row(1));
        }
    }

    #[test]
    fn node_count_and_step_range_checked() {
        let t = small(6);
        let mut g = Graph::new();
        let bad = g.constant(Tensor::zeros(&[14, 16])).unwrap();
        assert!(t.gat_forward(&mut g, bad, 2).is_err());
        let nodes = g.constant(Tensor::zeros(&[8, 16])).unwrap();
        let img = g.constant(Tensor::zeros(&[1, 16])).unwrap();
        assert!(t.teacher_step(&mut g, 7, nodes, img, 1).is_err());
    }

    #[test]
    fn writeback_with_zero_weights_halves_memory() {
        let mut t = small(7);
        t.classifiers[2].out.zero(&mut t.params).unwrap();
        t.pred2mem.zero(&mut t.params).unwrap();
        t.gru.zero(&mut t.params).unwrap();
        let mut g = Graph::new();
        let logits = g.constant(raw(2, 6, 5)).unwrap();
        let mem = raw(2, 16, 6);
        let m = g.constant(mem.clone()).unwrap();
        let out = t.memory_writeback(&mut g, 2, logits, m).unwrap();
        for (o, v) in g.value(out).data.iter().zip(&mem.data) {
            assert!((o - 0.5 * v).abs() < 1e-15);
        }
    }

    #[test]
    fn released_defaults_run() {
        let t = TeacherModel::new(TeacherConfig::default()).unwrap();
        assert_eq!(t.config.head_dim(), 192);
        let mut g = Graph::new();
        let out = t.forward_raw(&mut g, raw(1, 64, 0)).unwrap();
        assert_eq!(g.shape(out.image), &[1, 768]);
        assert_eq!(g.shape(out.logits[6]), &[1, 10]);
    }
}
