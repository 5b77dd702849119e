use serde::Serialize;

use super::config::{ChNorm, DistillConfig, KlDirection};
use crate::error::{Error, Result};
use crate::numerics::graph::softmax_along;
use crate::numerics::{cross_entropy_masked, valid_rows, Graph, Tensor, Var, SENTINEL};

/// Row-wise `softmax(t / temperature)` (or its log) of a constant matrix.
pub fn softmax_rows(t: &Tensor, temperature: f64, log: bool) -> Tensor {
    let inv = 1.0 / temperature;
    let scaled: Vec<f64> = t.data.iter().map(|x| x * inv).collect();
    Tensor {
        shape: t.shape.clone(),
        data: softmax_along(&scaled, &t.shape, t.shape.len() - 1, log),
        grad: None,
        requires_grad: false,
    }
}

/// Row-mean KL between a constant teacher side and the student logits,
/// both softened by `temperature`.
fn softened_kl(
    graph: &mut Graph,
    teacher: &Tensor,
    student: Var,
    temperature: f64,
    dir: KlDirection,
) -> Result<Var> {
    let rows = teacher.shape[0] as f64;
    let scaled = graph.scale(student, 1.0 / temperature)?;
    let log_q = graph.log_softmax(scaled, 1)?;
    let log_p = softmax_rows(teacher, temperature, true);
    let terms = match dir {
        KlDirection::TeacherTarget => {
            let p = softmax_rows(teacher, temperature, false);
            let log_p = graph.constant(log_p)?;
            let diff = graph.sub(log_p, log_q)?;
            let p = graph.constant(p)?;
            graph.mul(p, diff)?
        }
        KlDirection::StudentTarget => {
            let q = graph.softmax(scaled, 1)?;
            let log_p = graph.constant(log_p)?;
            let diff = graph.sub(log_q, log_p)?;
            graph.mul(q, diff)?
        }
    };
    let total = graph.sum(terms)?;
    graph.scale(total, 1.0 / rows)
}

fn check_pair(op: &'static str, graph: &Graph, teacher: &Tensor, student: Var) -> Result<()> {
    let s = graph.shape(student);
    if teacher.shape.len() != 2 || teacher.shape != s {
        return Err(Error::shape(op, &teacher.shape, s));
    }
    Ok(())
}

/// `T² · KL(softmax(ℓ_t/T) ‖ softmax(ℓ_s/T))` averaged over rows where
/// `mask` is true. The teacher logits are constants. An all-false mask
/// yields a zero scalar with no gradient path.
pub fn loss_kd(
    graph: &mut Graph,
    teacher_logits: &Tensor,
    student_logits: Var,
    temperature: f64,
    mask: &[bool],
    dir: KlDirection,
) -> Result<Var> {
    check_pair("loss_kd", graph, teacher_logits, student_logits)?;
    if mask.len() != teacher_logits.shape[0] {
        return Err(Error::shape(
            "loss_kd",
            &teacher_logits.shape,
            &[mask.len()],
        ));
    }
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return graph.constant(Tensor::scalar(0.0));
    }
    let (t, s) = if rows.len() == mask.len() {
        (teacher_logits.clone(), student_logits)
    } else {
        (
            teacher_logits.select_rows(&rows),
            graph.gather_rows(student_logits, &rows)?,
        )
    };
    let kl = softened_kl(graph, &t, s, temperature, dir)?;
    graph.scale(kl, temperature * temperature)
}

/// Centered-Gram similarity scalars and the weight derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChStats {
    pub h_uu: f64,
    pub h_vv: f64,
    pub h_uv: f64,
    pub w_fw: f64,
}

/// `C K Kᵀ C` with `C = I − 𝟙𝟙ᵀ/n`.
fn centered_gram(k: &Tensor) -> Vec<f64> {
    let n = k.shape[0];
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = k.row(i).iter().zip(k.row(j)).map(|(a, b)| a * b).sum();
        }
    }
    let nf = n as f64;
    let row_mean: Vec<f64> = (0..n)
        .map(|i| m[i * n..(i + 1) * n].iter().sum::<f64>() / nf)
        .collect();
    let col_mean: Vec<f64> = (0..n)
        .map(|j| (0..n).map(|i| m[i * n + j]).sum::<f64>() / nf)
        .collect();
    let grand = row_mean.iter().sum::<f64>() / nf;
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] += grand - row_mean[i] - col_mean[j];
        }
    }
    m
}

/// HSIC-style scalars of the row distributions `k_u`, `k_v` (`n × p`).
///
/// `h_UV = Σ (C M_U C) ⊙ (C M_V C)`. Under [`ChNorm::Frobenius`] the self
/// terms are the same inner product of each side with itself, which makes
/// `w_fw` a cosine; under [`ChNorm::Trace`] they are `tr(C M C)`.
pub fn hsic_scalars(k_u: &Tensor, k_v: &Tensor, epsilon: f64, norm: ChNorm) -> Result<ChStats> {
    if k_u.shape.len() != 2 || k_u.shape != k_v.shape {
        return Err(Error::shape("hsic_scalars", &k_u.shape, &k_v.shape));
    }
    let n = k_u.shape[0];
    let cu = centered_gram(k_u);
    let cv = centered_gram(k_v);
    let (h_uu, h_vv) = match norm {
        ChNorm::Frobenius => (
            cu.iter().map(|a| a * a).sum::<f64>(),
            cv.iter().map(|a| a * a).sum::<f64>(),
        ),
        ChNorm::Trace => (
            (0..n).map(|i| cu[i * n + i]).sum::<f64>(),
            (0..n).map(|i| cv[i * n + i]).sum::<f64>(),
        ),
    };
    let h_uv = cu.iter().zip(&cv).map(|(a, b)| a * b).sum::<f64>();
    let w_fw = h_uv / ((h_uu + epsilon) * (h_vv + epsilon)).sqrt();
    Ok(ChStats {
        h_uu,
        h_vv,
        h_uv,
        w_fw,
    })
}

/// `w_fw · KL(K_U ‖ K_V)` with `K = softmax(·/T)` row-wise and the KL
/// averaged over rows. `u` is constant and `w_fw` is not differentiated.
pub fn loss_ch(
    graph: &mut Graph,
    u: &Tensor,
    v: Var,
    temperature: f64,
    epsilon: f64,
    norm: ChNorm,
    dir: KlDirection,
) -> Result<(Var, ChStats)> {
    check_pair("loss_ch", graph, u, v)?;
    if u.shape[0] == 0 {
        return Err(Error::InvalidArgument(
            "loss_ch needs at least one row".into(),
        ));
    }
    let k_u = softmax_rows(u, temperature, false);
    let k_v = softmax_rows(graph.value(v), temperature, false);
    let stats = hsic_scalars(&k_u, &k_v, epsilon, norm)?;
    Ok((
        loss_ch_weighted(graph, u, v, temperature, stats.w_fw, dir)?,
        stats,
    ))
}

/// `w · KL(K_U ‖ K_V)` for a given weight `w`.
pub fn loss_ch_weighted(
    graph: &mut Graph,
    u: &Tensor,
    v: Var,
    temperature: f64,
    w: f64,
    dir: KlDirection,
) -> Result<Var> {
    check_pair("loss_ch", graph, u, v)?;
    let kl = softened_kl(graph, u, v, temperature, dir)?;
    graph.scale(kl, w)
}

/// One step's student objective and its parts.
#[derive(Debug, Clone, Copy)]
pub struct StepLoss {
    pub total: Var,
    pub ce: Var,
    pub kd: Var,
    pub ch: Var,
    pub ch_stats: Option<ChStats>,
}

/// `CE + α_KD·KD + α_CH·CH` for one step. KD and CH use the rows whose
/// label is not the sentinel; teacher quantities are constants.
pub fn student_step_loss(
    graph: &mut Graph,
    teacher_logits: &Tensor,
    student_logits: Var,
    labels: &[i64],
    u: &Tensor,
    v: Var,
    config: &DistillConfig,
) -> Result<StepLoss> {
    student_step_loss_with(
        graph,
        teacher_logits,
        student_logits,
        labels,
        u,
        v,
        config,
        None,
    )
}

/// [`student_step_loss`] with `w_fw` replaced by `fixed_w` when given.
#[allow(clippy::too_many_arguments)]
pub fn student_step_loss_with(
    graph: &mut Graph,
    teacher_logits: &Tensor,
    student_logits: Var,
    labels: &[i64],
    u: &Tensor,
    v: Var,
    config: &DistillConfig,
    fixed_w: Option<f64>,
) -> Result<StepLoss> {
    check_pair("student_step_loss", graph, teacher_logits, student_logits)?;
    check_pair("student_step_loss", graph, u, v)?;
    let ce = cross_entropy_masked(graph, student_logits, labels, SENTINEL)?;
    let rows = valid_rows(labels, teacher_logits.shape[1], SENTINEL)?;
    let (kd, ch, ch_stats) = if rows.is_empty() {
        let z = graph.constant(Tensor::scalar(0.0))?;
        (z, z, None)
    } else {
        let all = rows.len() == labels.len();
        let mask = vec![true; rows.len()];
        let (t, s, u_rows, v_rows) = if all {
            (teacher_logits.clone(), student_logits, u.clone(), v)
        } else {
            (
                teacher_logits.select_rows(&rows),
                graph.gather_rows(student_logits, &rows)?,
                u.select_rows(&rows),
                graph.gather_rows(v, &rows)?,
            )
        };
        let kd = loss_kd(graph, &t, s, config.temperature, &mask, config.kl_direction)?;
        let (ch, stats) = loss_ch(
            graph,
            &u_rows,
            v_rows,
            config.temperature,
            config.epsilon,
            config.ch_norm,
            config.kl_direction,
        )?;
        match fixed_w {
            Some(w) => (
                kd,
                loss_ch_weighted(
                    graph,
                    &u_rows,
                    v_rows,
                    config.temperature,
                    w,
                    config.kl_direction,
                )?,
                Some(stats),
            ),
            None => (kd, ch, Some(stats)),
        }
    };
    let kd_w = graph.scale(kd, config.alpha_kd)?;
    let ch_w = graph.scale(ch, config.alpha_ch)?;
    let total = graph.add(ce, kd_w)?;
    let total = graph.add(total, ch_w)?;
    Ok(StepLoss {
        total,
        ce,
        kd,
        ch,
        ch_stats,
    })
}
