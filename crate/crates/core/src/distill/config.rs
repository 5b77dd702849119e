use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::chain_data::CLASS_COUNTS;
use crate::error::{Error, Result};
use crate::numerics::DROPOUT_RATE;
use crate::student::StudentConfig;
use crate::teacher::TeacherConfig;

/// Which distribution is the KL target in the KD and CH terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KlDirection {
    /// `Σ p_teacher · (log p_teacher − log p_student)`.
    #[default]
    TeacherTarget,
    /// `Σ p_student · (log p_student − log p_teacher)`.
    StudentTarget,
}

impl FromStr for KlDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" | "teacher_target" => Ok(KlDirection::TeacherTarget),
            "student" | "student_target" => Ok(KlDirection::StudentTarget),
            _ => Err(Error::Config(format!(
                "kl_direction must be `teacher` or `student`, got `{s}`"
            ))),
        }
    }
}

impl fmt::Display for KlDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KlDirection::TeacherTarget => "teacher",
            KlDirection::StudentTarget => "student",
        })
    }
}

/// Self-similarity terms in the `w_fw` denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChNorm {
    /// `h_UU = Σ (C M_U C)²`; `w_fw` is a cosine in `[-1, 1]`.
    #[default]
    Frobenius,
    /// `h_UU = tr(C M_U C)`.
    Trace,
}

impl FromStr for ChNorm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "frobenius" => Ok(ChNorm::Frobenius),
            "trace" => Ok(ChNorm::Trace),
            _ => Err(Error::Config(format!(
                "ch_norm must be `frobenius` or `trace`, got `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillConfig {
    pub temperature: f64,
    pub alpha_kd: f64,
    pub alpha_ch: f64,
    pub proj_dim: usize,
    pub epsilon: f64,
    /// Teacher-only epochs at the start; they count toward `epochs`.
    pub pretrain_epochs: usize,
    pub teacher_lr: f64,
    pub student_lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub kl_direction: KlDirection,
    pub ch_norm: ChNorm,
    /// Supervised teacher updates during the distillation phase.
    pub train_teacher: bool,
    pub teacher_hidden: usize,
    pub student_hidden: usize,
    pub heads: usize,
    pub layers: usize,
    pub dropout: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            temperature: 2.0,
            alpha_kd: 0.5,
            alpha_ch: 1.0,
            proj_dim: 256,
            epsilon: 1e-8,
            pretrain_epochs: 2,
            teacher_lr: 5e-5,
            student_lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 8,
            epochs: 50,
            seed: 0,
            kl_direction: KlDirection::TeacherTarget,
            ch_norm: ChNorm::Frobenius,
            train_teacher: true,
            teacher_hidden: 768,
            student_hidden: 512,
            heads: 4,
            layers: 2,
            dropout: DROPOUT_RATE,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.alpha_kd >= 0.0 && self.alpha_ch >= 0.0) {
            return bad("alpha_kd and alpha_ch must be non-negative");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if !(self.teacher_lr > 0.0 && self.student_lr > 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0
            || self.proj_dim == 0
            || self.teacher_hidden == 0
            || self.student_hidden == 0
        {
            return bad("batch_size, proj_dim and hidden sizes must be positive");
        }
        if self.heads == 0 || !self.teacher_hidden.is_multiple_of(self.heads) {
            return bad("teacher_hidden must be divisible by heads");
        }
        if self.layers == 0 {
            return bad("layers must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.pretrain_epochs > self.epochs {
            return bad("pretrain_epochs exceeds epochs");
        }
        Ok(())
    }

    /// Sets one field from its `key = value` spelling. Returns `false` for
    /// keys that are not config fields.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "temperature" => self.temperature = parse(key, value)?,
            "alpha_kd" => self.alpha_kd = parse(key, value)?,
            "alpha_ch" => self.alpha_ch = parse(key, value)?,
            "proj_dim" => self.proj_dim = parse(key, value)?,
            "epsilon" => self.epsilon = parse(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, value)?,
            "teacher_lr" => self.teacher_lr = parse(key, value)?,
            "student_lr" => self.student_lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "kl_direction" => self.kl_direction = value.parse()?,
            "ch_norm" => self.ch_norm = value.parse()?,
            "train_teacher" => self.train_teacher = parse(key, value)?,
            "teacher_hidden" => self.teacher_hidden = parse(key, value)?,
            "student_hidden" => self.student_hidden = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies every known key of `entries`; unknown keys are returned.
    pub fn apply(
        &mut self,
        entries: &BTreeMap<String, String>,
    ) -> Result<BTreeMap<String, String>> {
        let mut rest = BTreeMap::new();
        for (k, v) in entries {
            if !self.set(k, v)? {
                rest.insert(k.clone(), v.clone());
            }
        }
        Ok(rest)
    }

    pub fn teacher_config(&self, raw_dim: usize) -> TeacherConfig {
        TeacherConfig {
            hidden_dim: self.teacher_hidden,
            heads: self.heads,
            layers: self.layers,
            raw_dim,
            dropout: self.dropout,
            class_counts: CLASS_COUNTS.to_vec(),
            seed: self.seed,
        }
    }

    pub fn student_config(&self, raw_dim: usize) -> StudentConfig {
        StudentConfig {
            hidden_dim: self.student_hidden,
            raw_dim,
            proj_dim: self.proj_dim,
            class_counts: CLASS_COUNTS.to_vec(),
            seed: self.seed.wrapping_add(1),
        }
    }
}

/// Parses `key = value` lines. Blank lines and `#` comments are skipped;
/// a repeated key keeps its last value.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected `key = value`",
                i + 1
            )));
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.insert(k.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    parse_config_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = DistillConfig::default();
        c.validate().unwrap();
        assert_eq!(
            (c.temperature, c.alpha_kd, c.alpha_ch, c.proj_dim),
            (2.0, 0.5, 1.0, 256)
        );
        assert_eq!(
            (c.teacher_lr, c.student_lr, c.pretrain_epochs),
            (5e-5, 1e-4, 2)
        );
    }

    #[test]
    fn file_values_and_passthrough() {
        let text = "# run\ntemperature = 3.5\nkl_direction = student\n\ndata = d.json # trailing\nseed=9\n";
        let entries = parse_config_text(text).unwrap();
        let mut c = DistillConfig::default();
        let rest = c.apply(&entries).unwrap();
        assert_eq!(c.temperature, 3.5);
        assert_eq!(c.kl_direction, KlDirection::StudentTarget);
        assert_eq!(c.seed, 9);
        assert_eq!(rest.get("data").map(String::as_str), Some("d.json"));
    }

    #[test]
    fn rejects_bad_values() {
        assert!(parse_config_text("novalue").is_err());
        let mut c = DistillConfig::default();
        assert!(c.set("epochs", "many").is_err());
        c.set("temperature", "0").unwrap();
        assert!(c.validate().is_err());
        let mut c = DistillConfig::default();
        c.set("heads", "5").unwrap();
        assert!(c.validate().is_err());
    }
}
