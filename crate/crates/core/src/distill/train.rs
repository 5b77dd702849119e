use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::DistillConfig;
use super::loss::student_step_loss;
use crate::chain_data::schema::STEP_LABELS;
use crate::chain_data::{encode_labels, ChainRecord, StepSchema};
use crate::encoders::ImageFeatureSource;
use crate::error::{Error, Result};
use crate::metrics::{per_step_metrics, StepReport};
use crate::numerics::graph::softmax_along;
use crate::numerics::{
    cross_entropy_masked, AdamWState, Graph, Linear, ParamStore, Tensor, Var, SENTINEL,
};
use crate::student::StudentModel;
use crate::teacher::TeacherModel;

/// One training example: an image key and its per-step labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: String,
    pub image_path: String,
    pub labels: Vec<i64>,
}

pub fn examples_from_records(records: &[ChainRecord], schema: &StepSchema) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            Ok(Example {
                id: r.patient_id.clone(),
                image_path: r.image_path.clone(),
                labels: encode_labels(r, schema)?.labels.to_vec(),
            })
        })
        .collect()
}

/// Teacher-side maps from the teacher image embedding to the similarity
/// space, one per step. They are never updated.
#[derive(Debug, Clone)]
pub struct ChProjections {
    pub params: ParamStore,
    pub maps: Vec<Linear>,
}

impl ChProjections {
    pub fn new(steps: usize, in_dim: usize, proj_dim: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let maps = (0..steps)
            .map(|s| {
                Linear::new(
                    &mut params,
                    &mut rng,
                    &format!("distill/ch_proj/{s}"),
                    in_dim,
                    proj_dim,
                    true,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ChProjections { params, maps })
    }

    pub fn project(&self, step: usize, features: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(features.clone())?;
        let y = self.maps[step].forward(&mut g, &self.params, x)?;
        Ok(g.value(y).clone())
    }
}

/// Detached teacher outputs used as distillation targets.
#[derive(Debug, Clone)]
pub struct TeacherTargets {
    pub logits: Vec<Tensor>,
    /// `U_s`, one `[B, p]` matrix per step.
    pub features: Vec<Tensor>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochLosses {
    pub teacher: f64,
    /// `None` during teacher-only epochs.
    pub student: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: &'static str,
    pub teacher: StepReport,
    pub student: StepReport,
    pub losses: EpochLosses,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub teacher: ParamStore,
    pub student: ParamStore,
    pub best_teacher_epoch: usize,
    pub best_student_epoch: usize,
    pub best_teacher_accuracy: f64,
    pub best_student_accuracy: f64,
    pub history: Vec<EpochLog>,
}

fn labels_for(batch: &[&Example], step: usize) -> Vec<i64> {
    batch.iter().map(|e| e.labels[step]).collect()
}

fn sum_all(graph: &mut Graph, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = graph.add(acc, t)?;
    }
    Ok(acc)
}

fn divergence(batch: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } | Error::NonFiniteGradient(_) => Error::Divergence { batch },
        other => other,
    }
}

fn step_names(steps: usize) -> Vec<String> {
    (0..steps)
        .map(|s| {
            STEP_LABELS
                .get(s)
                .map_or_else(|| format!("Step {}", s + 1), |n| n.to_string())
        })
        .collect()
}

fn report(
    names: &[String],
    probs: &[Vec<f64>],
    widths: &[usize],
    labels: &[Vec<i64>],
) -> Result<StepReport> {
    let steps = names
        .iter()
        .enumerate()
        .map(|(s, name)| {
            let p = Tensor::new(vec![labels[s].len(), widths[s]], probs[s].clone())?;
            per_step_metrics(name, &p, &labels[s], SENTINEL)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StepReport { steps })
}

/// Per-step metrics of `logits_of` over `examples`, evaluated in batches.
fn evaluate<F>(
    examples: &[Example],
    widths: &[usize],
    batch_size: usize,
    mut logits_of: F,
) -> Result<StepReport>
where
    F: FnMut(&[&Example]) -> Result<Vec<Tensor>>,
{
    let steps = widths.len();
    let mut probs = vec![Vec::new(); steps];
    let mut labels = vec![Vec::new(); steps];
    let refs: Vec<&Example> = examples.iter().collect();
    for batch in refs.chunks(batch_size.max(1)) {
        let logits = logits_of(batch)?;
        for s in 0..steps {
            probs[s].extend(softmax_along(&logits[s].data, &logits[s].shape, 1, false));
            labels[s].extend(labels_for(batch, s));
        }
    }
    report(&step_names(steps), &probs, widths, &labels)
}

fn paths<'e>(batch: &[&'e Example]) -> Vec<&'e str> {
    batch.iter().map(|e| e.image_path.as_str()).collect()
}

pub fn evaluate_teacher(
    model: &TeacherModel,
    source: &ImageFeatureSource,
    examples: &[Example],
    batch_size: usize,
) -> Result<StepReport> {
    evaluate(examples, &model.config.class_counts, batch_size, |batch| {
        let mut g = Graph::new();
        let out = model.forward(&mut g, source, &paths(batch))?;
        Ok(out.logits.iter().map(|l| g.value(*l).clone()).collect())
    })
}

pub fn evaluate_student(
    model: &StudentModel,
    source: &ImageFeatureSource,
    examples: &[Example],
    batch_size: usize,
) -> Result<StepReport> {
    evaluate(examples, &model.config.class_counts, batch_size, |batch| {
        let mut g = Graph::new();
        let out = model.forward(&mut g, source, &paths(batch))?;
        Ok(out.logits.iter().map(|l| g.value(*l).clone()).collect())
    })
}

/// Alternating teacher/student optimisation over one feature source.
pub struct Trainer<'a> {
    pub config: DistillConfig,
    pub teacher: TeacherModel,
    pub student: StudentModel,
    pub ch: ChProjections,
    source: &'a ImageFeatureSource,
    teacher_opt: AdamWState,
    student_opt: AdamWState,
    rng: ChaCha8Rng,
    batches_seen: usize,
}

impl<'a> Trainer<'a> {
    /// Builds both models from `config` at the source's feature width.
    pub fn new(config: DistillConfig, source: &'a ImageFeatureSource) -> Result<Self> {
        config.validate()?;
        let teacher = TeacherModel::new(config.teacher_config(source.raw_dim()))?;
        let student = StudentModel::new(config.student_config(source.raw_dim()))?;
        Self::with_models(config, teacher, student, source)
    }

    pub fn with_models(
        config: DistillConfig,
        teacher: TeacherModel,
        student: StudentModel,
        source: &'a ImageFeatureSource,
    ) -> Result<Self> {
        config.validate()?;
        if teacher.config.class_counts != student.config.class_counts {
            return Err(Error::Config(
                "teacher and student step widths differ".into(),
            ));
        }
        if student.config.proj_dim != config.proj_dim {
            return Err(Error::Config(format!(
                "student projects to {} but proj_dim is {}",
                student.config.proj_dim, config.proj_dim
            )));
        }
        let ch = ChProjections::new(
            teacher.config.steps(),
            teacher.config.hidden_dim,
            config.proj_dim,
            config.seed.wrapping_add(2),
        )?;
        Ok(Trainer {
            teacher_opt: AdamWState::new(config.teacher_lr, config.weight_decay),
            student_opt: AdamWState::new(config.student_lr, config.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            batches_seen: 0,
            config,
            teacher,
            student,
            ch,
            source,
        })
    }

    fn check_batch(&self, batch: &[&Example]) -> Result<()> {
        let steps = self.teacher.config.steps();
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(e) = batch.iter().find(|e| e.labels.len() != steps) {
            return Err(Error::InvalidArgument(format!(
                "example `{}` has {} labels, expected {steps}",
                e.id,
                e.labels.len()
            )));
        }
        Ok(())
    }

    /// One supervised step on the teacher; returns `Σₛ CE`.
    pub fn teacher_update(&mut self, batch: &[&Example]) -> Result<f64> {
        self.check_batch(batch)?;
        let index = self.batches_seen;
        self.batches_seen += 1;
        let seed = self.rng.gen();
        (|| {
            let mut g = Graph::training(ChaCha8Rng::seed_from_u64(seed));
            let out = self.teacher.forward(&mut g, self.source, &paths(batch))?;
            let ces = (0..out.logits.len())
                .map(|s| {
                    cross_entropy_masked(&mut g, out.logits[s], &labels_for(batch, s), SENTINEL)
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = sum_all(&mut g, &ces)?;
            let value = g.value(loss).item();
            let grads = g.backward(loss)?.by_name(&g);
            self.teacher_opt.step(&mut self.teacher.params, &grads)?;
            Ok(value)
        })()
        .map_err(divergence(index))
    }

    /// Evaluation-mode teacher pass; nothing here carries gradient.
    pub fn teacher_targets(&self, batch: &[&Example]) -> Result<TeacherTargets> {
        self.check_batch(batch)?;
        let mut g = Graph::new();
        let out = self.teacher.forward(&mut g, self.source, &paths(batch))?;
        let image = g.value(out.image).clone();
        Ok(TeacherTargets {
            logits: out.logits.iter().map(|l| g.value(*l).clone()).collect(),
            features: (0..out.logits.len())
                .map(|s| self.ch.project(s, &image))
                .collect::<Result<Vec<_>>>()?,
        })
    }

    /// One step on the student against fixed teacher targets; returns the
    /// summed step losses.
    pub fn student_update(&mut self, batch: &[&Example], targets: &TeacherTargets) -> Result<f64> {
        self.check_batch(batch)?;
        let index = self.batches_seen;
        self.batches_seen += 1;
        (|| {
            let mut g = Graph::new();
            let out = self.student.forward(&mut g, self.source, &paths(batch))?;
            let terms = (0..out.logits.len())
                .map(|s| {
                    student_step_loss(
                        &mut g,
                        &targets.logits[s],
                        out.logits[s],
                        &labels_for(batch, s),
                        &targets.features[s],
                        out.projections[s],
                        &self.config,
                    )
                    .map(|l| l.total)
                })
                .collect::<Result<Vec<_>>>()?;
            let loss = sum_all(&mut g, &terms)?;
            let value = g.value(loss).item();
            let grads = g.backward(loss)?.by_name(&g);
            self.student_opt.step(&mut self.student.params, &grads)?;
            Ok(value)
        })()
        .map_err(divergence(index))
    }

    /// Seeded shuffle of `train` into batches.
    fn batches<'e>(&mut self, train: &'e [Example]) -> Vec<Vec<&'e Example>> {
        let mut order: Vec<&Example> = train.iter().collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.config.batch_size)
            .map(<[_]>::to_vec)
            .collect()
    }

    /// One epoch; teacher-only when `pretrain`.
    pub fn run_epoch(&mut self, train: &[Example], pretrain: bool) -> Result<EpochLosses> {
        let batches = self.batches(train);
        let (mut t_sum, mut s_sum) = (0.0, 0.0);
        for batch in &batches {
            if pretrain || self.config.train_teacher {
                t_sum += self.teacher_update(batch)?;
            }
            if !pretrain {
                let targets = self.teacher_targets(batch)?;
                s_sum += self.student_update(batch, &targets)?;
            }
        }
        let n = batches.len().max(1) as f64;
        Ok(EpochLosses {
            teacher: t_sum / n,
            student: (!pretrain).then_some(s_sum / n),
        })
    }

    /// Full schedule: `pretrain_epochs` teacher-only epochs, then
    /// alternating epochs up to `epochs`. After each epoch both models are
    /// scored on `val` and the best mean per-step accuracy is kept. One
    /// JSON line per epoch goes to `log` when given.
    pub fn train(
        mut self,
        train: &[Example],
        val: &[Example],
        mut log: Option<&mut dyn Write>,
    ) -> Result<TrainOutcome> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::InvalidArgument(
                "training and validation splits must be nonempty".into(),
            ));
        }
        let mut best = TrainOutcome {
            teacher: self.teacher.params.clone(),
            student: self.student.params.clone(),
            best_teacher_epoch: 0,
            best_student_epoch: 0,
            best_teacher_accuracy: f64::NEG_INFINITY,
            best_student_accuracy: f64::NEG_INFINITY,
            history: Vec::new(),
        };
        for epoch in 1..=self.config.epochs {
            let pretrain = epoch <= self.config.pretrain_epochs;
            let losses = self.run_epoch(train, pretrain)?;
            let bs = self.config.batch_size;
            let t_rep = evaluate_teacher(&self.teacher, self.source, val, bs)?;
            let s_rep = evaluate_student(&self.student, self.source, val, bs)?;
            let (t_acc, s_acc) = (t_rep.mean_accuracy(), s_rep.mean_accuracy());
            if t_acc > best.best_teacher_accuracy {
                best.best_teacher_accuracy = t_acc;
                best.best_teacher_epoch = epoch;
                best.teacher = self.teacher.params.clone();
            }
            if !pretrain && s_acc > best.best_student_accuracy {
                best.best_student_accuracy = s_acc;
                best.best_student_epoch = epoch;
                best.student = self.student.params.clone();
            }
            let entry = EpochLog {
                epoch,
                phase: if pretrain { "pretrain" } else { "distill" },
                teacher: t_rep,
                student: s_rep,
                losses,
            };
            if let Some(w) = log.as_deref_mut() {
                writeln!(
                    w,
                    "{}",
                    serde_json::to_string(&entry).expect("log entry serializes")
                )?;
            }
            best.history.push(entry);
        }
        Ok(best)
    }
}
