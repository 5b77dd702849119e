//! Distillation objective (supervised, soft-label and similarity terms) and
//! the alternating teacher/student training loop.

pub mod config;
pub mod loss;
pub mod train;

pub use config::{parse_config_text, read_config_file, ChNorm, DistillConfig, KlDirection};
pub use loss::{
    hsic_scalars, loss_ch, loss_ch_weighted, loss_kd, softmax_rows, student_step_loss,
    student_step_loss_with, ChStats, StepLoss,
};
pub use train::{
    evaluate_student, evaluate_teacher, examples_from_records, ChProjections, EpochLog,
    EpochLosses, Example, TeacherTargets, TrainOutcome, Trainer,
};
