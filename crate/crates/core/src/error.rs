use alloc::string::String;

/// Errors produced by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("tape was reset after this variable was recorded")]
    StaleTape,
    #[error("loss is not deterministic under a frozen seed (parameter {param})")]
    Indeterminate { param: String },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("stream is closed")]
    ClosedStream,
    #[error("alignment path error: {0}")]
    Path(String),
    #[error("index {index} out of bounds ({bound})")]
    Bounds { index: usize, bound: usize },
    #[error("token id {0} is outside the vocabulary")]
    Vocabulary(usize),
    #[error("sequence length {len} exceeds the configured maximum {max}")]
    Length { len: usize, max: usize },
    #[error("decode cache error: {0}")]
    Cache(String),
    #[error("adapter rank {rank} exceeds min(d_in, d_out) = {limit}")]
    Rank { rank: usize, limit: usize },
    #[error("oracle size limit exceeded: {0}")]
    OracleSize(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: u64, detail: String },
    #[error("latency alignment error: {hyp} emitted tokens vs {gold} gold boundaries")]
    Alignment { hyp: usize, gold: usize },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}
