//! Finite-difference verification of every differentiable op and of the
//! end-to-end teacher and student losses on a toy configuration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::distill::{
    hsic_scalars, loss_ch_weighted, loss_kd, softmax_rows, student_step_loss_with, ChNorm,
    DistillConfig, KlDirection,
};
use crate::error::Result;
use crate::numerics::{
    cross_entropy_masked, grad_check_param_terms, grad_check_params, AttentionLayout, Graph,
    GruCell, ParamStore, Tensor, Var, LEAKY_SLOPE, SENTINEL,
};
use crate::student::{StudentConfig, StudentModel};
use crate::teacher::{TeacherConfig, TeacherModel};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;
/// Central-difference step for single ops.
pub const STEP: f64 = 1e-5;
/// Steps for the end-to-end model losses. The larger one beats roundoff
/// on tiny coordinates, the smaller one avoids nearby ReLU kinks.
pub const MODEL_STEPS: [f64; 2] = [1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub max_relative_error: f64,
    pub coordinates: usize,
    pub passed: bool,
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape matches")
}

/// Values bounded away from zero, for ops with a kink there.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let mut t = random(rng, shape, 0.1, 2.0);
    for v in &mut t.data {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    t
}

/// `Σ y ⊙ R` for a fixed random `R`, so every output coordinate matters.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = g.constant(random(&mut rng, &shape, -1.0, 1.0))?;
    let p = g.mul(y, r)?;
    g.sum(p)
}

fn store_of(entries: Vec<(&str, Tensor)>) -> Result<ParamStore> {
    let mut s = ParamStore::new();
    for (k, t) in entries {
        s.insert(k, t)?;
    }
    Ok(s)
}

fn run<F>(name: &str, store: &ParamStore, f: F) -> Result<CheckResult>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    let errs = grad_check_params(store, f, STEP)?;
    let worst = errs.values().copied().fold(0.0, f64::max);
    Ok(CheckResult {
        name: name.to_string(),
        max_relative_error: worst,
        coordinates: store.count(),
        passed: worst <= TOLERANCE,
    })
}

fn run_terms<F>(name: &str, store: &ParamStore, f: F) -> Result<CheckResult>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Vec<Var>>,
{
    let errs = grad_check_param_terms(store, f, &MODEL_STEPS)?;
    let worst = errs.values().copied().fold(0.0, f64::max);
    Ok(CheckResult {
        name: name.to_string(),
        max_relative_error: worst,
        coordinates: store.count(),
        passed: worst <= TOLERANCE,
    })
}

fn unary<F>(name: &str, x: Tensor, seed: u64, mut op: F) -> Result<CheckResult>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    let store = store_of(vec![("x", x)])?;
    run(name, &store, |g, s| {
        let x = s.bind(g, "x")?;
        let y = op(g, x)?;
        probe(g, y, seed)
    })
}

fn binary<F>(name: &str, a: Tensor, b: Tensor, seed: u64, mut op: F) -> Result<CheckResult>
where
    F: FnMut(&mut Graph, Var, Var) -> Result<Var>,
{
    let store = store_of(vec![("a", a), ("b", b)])?;
    run(name, &store, |g, s| {
        let a = s.bind(g, "a")?;
        let b = s.bind(g, "b")?;
        let y = op(g, a, b)?;
        probe(g, y, seed)
    })
}

fn op_checks(rng: &mut ChaCha8Rng) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let m = |rng: &mut ChaCha8Rng, r, c| random(rng, &[r, c], -1.5, 1.5);

    out.push(binary(
        "matmul",
        m(rng, 3, 4),
        m(rng, 4, 2),
        1,
        |g, a, b| g.matmul(a, b),
    )?);
    let lin = store_of(vec![
        ("x", m(rng, 3, 4)),
        ("w", m(rng, 5, 4)),
        ("b", random(rng, &[5], -1.0, 1.0)),
    ])?;
    out.push(run("linear", &lin, |g, s| {
        let (x, w, b) = (s.bind(g, "x")?, s.bind(g, "w")?, s.bind(g, "b")?);
        let y = g.linear(x, w, Some(b))?;
        probe(g, y, 2)
    })?);
    out.push(binary("add", m(rng, 3, 4), m(rng, 3, 4), 3, |g, a, b| {
        g.add(a, b)
    })?);
    out.push(binary("sub", m(rng, 3, 4), m(rng, 3, 4), 4, |g, a, b| {
        g.sub(a, b)
    })?);
    out.push(binary("mul", m(rng, 3, 4), m(rng, 3, 4), 5, |g, a, b| {
        g.mul(a, b)
    })?);
    out.push(unary("scale", m(rng, 3, 4), 6, |g, x| g.scale(x, -1.7))?);
    out.push(binary(
        "concat_rows",
        m(rng, 2, 3),
        m(rng, 4, 3),
        7,
        |g, a, b| g.concat(&[a, b], 0),
    )?);
    out.push(binary(
        "concat_cols",
        m(rng, 3, 2),
        m(rng, 3, 4),
        8,
        |g, a, b| g.concat(&[a, b], 1),
    )?);
    out.push(unary("gather_rows", m(rng, 4, 3), 9, |g, x| {
        g.gather_rows(x, &[2, 0, 2, 3])
    })?);
    out.push(unary("leaky_relu", off_zero(rng, &[3, 4]), 10, |g, x| {
        g.leaky_relu(x, LEAKY_SLOPE)
    })?);
    out.push(unary("relu", off_zero(rng, &[3, 4]), 11, |g, x| g.relu(x))?);
    out.push(unary("tanh", m(rng, 3, 4), 12, |g, x| g.tanh(x))?);
    out.push(unary("sigmoid", m(rng, 3, 4), 13, |g, x| g.sigmoid(x))?);
    let ln = store_of(vec![
        ("x", m(rng, 3, 5)),
        ("gamma", random(rng, &[5], 0.5, 1.5)),
        ("beta", random(rng, &[5], -0.5, 0.5)),
    ])?;
    out.push(run("layer_norm", &ln, |g, s| {
        let (x, ga, be) = (s.bind(g, "x")?, s.bind(g, "gamma")?, s.bind(g, "beta")?);
        let y = g.layer_norm(x, ga, be, 1e-5)?;
        probe(g, y, 14)
    })?);
    out.push(unary("softmax_axis0", m(rng, 3, 4), 15, |g, x| {
        g.softmax(x, 0)
    })?);
    out.push(unary("softmax_axis1", m(rng, 3, 4), 16, |g, x| {
        g.softmax(x, 1)
    })?);
    out.push(unary("log_softmax", m(rng, 3, 4), 17, |g, x| {
        g.log_softmax(x, 1)
    })?);
    let mask: Vec<f64> = (0..12)
        .map(|i| if i % 3 == 1 { 0.0 } else { 1.0 / 0.9 })
        .collect();
    out.push(unary("dropout", m(rng, 3, 4), 18, move |g, x| {
        g.dropout_with_mask(x, mask.clone())
    })?);
    out.push(unary("mean", m(rng, 3, 4), 19, |g, x| {
        let y = g.mean(x)?;
        g.scale(y, 1.0)
    })?);
    out.push(unary("sum", m(rng, 3, 4), 20, |g, x| g.sum(x))?);

    let layout = AttentionLayout {
        groups: 2,
        nodes: 4,
        heads: 2,
        head_dim: 3,
    };
    let gat = store_of(vec![
        ("z", m(rng, 8, 6)),
        ("a_src", m(rng, 2, 3)),
        ("a_dst", m(rng, 2, 3)),
    ])?;
    out.push(run("graph_attention", &gat, |g, s| {
        let (z, a, b) = (s.bind(g, "z")?, s.bind(g, "a_src")?, s.bind(g, "a_dst")?);
        let y = g.graph_attention(z, a, b, layout, LEAKY_SLOPE)?;
        probe(g, y, 21)
    })?);

    let mut gru_store = ParamStore::new();
    let cell = GruCell::new(&mut gru_store, rng, "gru", 3, 4)?;
    gru_store.insert("x", m(rng, 2, 3))?;
    gru_store.insert("h", m(rng, 2, 4))?;
    out.push(run("gru_cell", &gru_store, |g, s| {
        let (x, h) = (s.bind(g, "x")?, s.bind(g, "h")?);
        let y = cell.forward(g, s, x, h)?;
        probe(g, y, 22)
    })?);

    let ce = store_of(vec![("logits", m(rng, 4, 5))])?;
    out.push(run("cross_entropy_masked", &ce, |g, s| {
        let l = s.bind(g, "logits")?;
        cross_entropy_masked(g, l, &[1, SENTINEL, 4, 0], SENTINEL)
    })?);

    let teacher_logits = m(rng, 4, 5);
    let kd = store_of(vec![("student", m(rng, 4, 5))])?;
    for dir in [KlDirection::TeacherTarget, KlDirection::StudentTarget] {
        out.push(run(&format!("loss_kd_{dir}_target"), &kd, |g, s| {
            let st = s.bind(g, "student")?;
            loss_kd(g, &teacher_logits, st, 2.0, &[true, true, false, true], dir)
        })?);
    }
    // w_fw is a stop-gradient weight, so it is held at its base value
    let u = m(rng, 5, 3);
    let v0 = m(rng, 5, 3);
    let w = hsic_scalars(
        &softmax_rows(&u, 2.0, false),
        &softmax_rows(&v0, 2.0, false),
        1e-8,
        ChNorm::Frobenius,
    )?
    .w_fw;
    let ch = store_of(vec![("v", v0)])?;
    out.push(run("loss_ch", &ch, |g, s| {
        let v = s.bind(g, "v")?;
        loss_ch_weighted(g, &u, v, 2.0, w, KlDirection::TeacherTarget)
    })?);
    Ok(out)
}

/// Batch size and labels of the end-to-end checks.
const BATCH: usize = 2;
const LABELS: [[i64; 7]; BATCH] = [[0, 3, 5, 6, 4, 6, 8], [1, 0, SENTINEL, 2, 0, 5, 6]];

fn labels(step: usize) -> Vec<i64> {
    LABELS.iter().map(|l| l[step]).collect()
}

/// Toy widths for the end-to-end checks.
pub const TOY_HIDDEN: usize = 16;
const TOY_RAW: usize = 6;
const TOY_PROJ: usize = 4;

fn teacher_check(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let model = TeacherModel::new(TeacherConfig {
        hidden_dim: TOY_HIDDEN,
        heads: 4,
        layers: 2,
        raw_dim: TOY_RAW,
        seed: 11,
        ..TeacherConfig::default()
    })?;
    let raw = random(rng, &[BATCH, TOY_RAW], -1.0, 1.0);
    run_terms("teacher_end_to_end", &model.params, |g, s| {
        let mut m = model.clone();
        m.params = s.clone();
        let out = m.forward_raw(g, raw.clone())?;
        (0..out.logits.len())
            .map(|st| cross_entropy_masked(g, out.logits[st], &labels(st), SENTINEL))
            .collect()
    })
}

fn student_check(rng: &mut ChaCha8Rng) -> Result<CheckResult> {
    let model = StudentModel::new(StudentConfig {
        hidden_dim: TOY_HIDDEN,
        raw_dim: TOY_RAW,
        proj_dim: TOY_PROJ,
        seed: 12,
        ..StudentConfig::default()
    })?;
    let raw = random(rng, &[BATCH, TOY_RAW], -1.0, 1.0);
    let widths = model.config.class_counts.clone();
    let t_logits: Vec<Tensor> = widths
        .iter()
        .map(|&c| random(rng, &[BATCH, c], -2.0, 2.0))
        .collect();
    let u: Vec<Tensor> = widths
        .iter()
        .map(|_| random(rng, &[BATCH, TOY_PROJ], -2.0, 2.0))
        .collect();
    let cfg = DistillConfig::default();
    let step_losses = |g: &mut Graph,
                       m: &StudentModel,
                       w: &[Option<f64>]|
     -> Result<Vec<crate::distill::StepLoss>> {
        let out = m.forward_raw(g, raw.clone())?;
        (0..out.logits.len())
            .map(|st| {
                let (l, v) = (out.logits[st], out.projections[st]);
                student_step_loss_with(g, &t_logits[st], l, &labels(st), &u[st], v, &cfg, w[st])
            })
            .collect()
    };
    // w_fw per step, held at its base value
    let mut g = Graph::new();
    let base = step_losses(&mut g, &model, &vec![None; widths.len()])?;
    let w: Vec<Option<f64>> = base.iter().map(|l| l.ch_stats.map(|s| s.w_fw)).collect();
    run_terms("student_end_to_end", &model.params, |g, s| {
        let mut m = model.clone();
        m.params = s.clone();
        let mut terms = Vec::new();
        for l in step_losses(g, &m, &w)? {
            terms.push(l.ce);
            terms.push(g.scale(l.kd, cfg.alpha_kd)?);
            terms.push(g.scale(l.ch, cfg.alpha_ch)?);
        }
        Ok(terms)
    })
}

/// Every check, in a fixed order.
pub fn gradcheck_suite() -> Result<Vec<CheckResult>> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut out = op_checks(&mut rng)?;
    out.push(teacher_check(&mut rng)?);
    out.push(student_check(&mut rng)?);
    Ok(out)
}
