use thiserror::Error;

/// Errors surfaced by every layer of the crate. Variants are grouped so the
/// CLI can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes that cannot be combined; message carries both shapes.
    #[error("dimension mismatch: {0}")]
    Dim(String),

    /// A caller violated an operation precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid or inconsistent configuration.
    #[error("invalid config: {0}")]
    Config(String),

    /// Problems with dataset files or their contents.
    #[error("data error: {0}")]
    Data(String),

    /// Embedding/checkpoint file does not start with the expected magic bytes.
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: Vec<u8>, found: Vec<u8> },

    /// Embedding/checkpoint file version is not supported.
    #[error("unsupported format version {found} (supported: {supported})")]
    BadVersion { found: u16, supported: u16 },

    /// Stored checksum does not match the payload.
    #[error(
        "crc mismatch over bytes {start}..{end}: stored {stored:#010x}, computed {computed:#010x}"
    )]
    CrcMismatch {
        start: usize,
        end: usize,
        stored: u32,
        computed: u32,
    },

    /// File ended before the declared contents.
    #[error("truncated file: needed {needed} bytes at offset {offset}, only {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    /// A forward/backward pass produced a non-finite value.
    #[error("numeric failure in {context}: {detail}")]
    Numeric { context: String, detail: String },

    /// A metric was requested on inputs where it is undefined.
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dim(msg: impl Into<String>) -> Self {
        Error::Dim(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
