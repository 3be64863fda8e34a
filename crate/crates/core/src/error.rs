use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed JSON at byte {offset}: {message}")]
    Json { offset: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unsupported construct `{kind}` at node {node_id}")]
    UnsupportedConstruct { kind: String, node_id: u64 },

    #[error("node {node_id} of kind `{kind}` has {count} children (max {max}) and is not a statement block")]
    NotRestructurable {
        kind: String,
        node_id: u64,
        count: usize,
        max: usize,
    },

    #[error("node {node_id} has {count} children but the model accepts at most {max}")]
    FanOut {
        node_id: u64,
        count: usize,
        max: usize,
    },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("evaluation order violated: {0}")]
    Ordering(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, tree `{tree}`")]
    Divergence { epoch: usize, tree: String },

    #[error("vocabulary version mismatch: model uses `{expected}`, input uses `{found}`")]
    VocabMismatch { expected: String, found: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Builds a [`Error::Json`] from a serde error, converting its line and
    /// column into a byte offset within `raw`.
    pub(crate) fn from_json(raw: &[u8], err: serde_json::Error) -> Self {
        let offset = byte_offset(raw, err.line(), err.column());
        Error::Json {
            offset,
            message: err.to_string(),
        }
    }
}

fn byte_offset(raw: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let mut current = 1;
    let mut line_start = 0;
    for (i, b) in raw.iter().enumerate() {
        if current == line {
            break;
        }
        if *b == b'\n' {
            current += 1;
            line_start = i + 1;
        }
    }
    (line_start + column.saturating_sub(1)).min(raw.len())
}
