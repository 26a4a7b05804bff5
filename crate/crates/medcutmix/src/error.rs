use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus line {line}: {msg}")]
    Corpus { line: usize, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown disease id {0}")]
    UnknownDisease(String),
    #[error("empty diagnostic selection")]
    EmptySelection,
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("glyph overflow: could not place {0} glyphs without overlap")]
    GlyphOverflow(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Invariant(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
