use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: non-finite value encountered")]
    NonFinite { op: &'static str },

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("{0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes (row {row})")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        classes: usize,
    },

    #[error("step {step}: answer `{answer}` is not resolvable")]
    UnresolvableAnswer { step: usize, answer: String },

    #[error("unknown image path `{0}`")]
    UnknownImage(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("JSON parse error at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("non-finite loss at batch {batch}")]
    Divergence { batch: usize },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::ShapeMismatch {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    /// Wraps a serde_json error, translating line/column into a byte offset of `src`.
    pub fn from_json(err: serde_json::Error, src: &str) -> Self {
        let offset = byte_offset(src, err.line(), err.column());
        Error::Json {
            offset,
            message: err.to_string(),
        }
    }
}

fn byte_offset(src: &str, line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut offset = 0;
    for (i, l) in src.split_inclusive('\n').enumerate() {
        if i + 1 == line {
            return offset + column.saturating_sub(1).min(l.len());
        }
        offset += l.len();
    }
    src.len()
}
