use thiserror::Error;

/// Errors produced by the quantization toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("code {code:#04x} is not a valid {encoding} bit pattern")]
    InvalidCode { encoding: &'static str, code: u8 },

    #[error("{context}: input is not finite")]
    NonFinite { context: &'static str },

    #[error("{value} exceeds the max normal of {encoding}")]
    OutOfRange { encoding: &'static str, value: f64 },

    #[error("{value} is outside the representable {encoding} scale range")]
    ScaleOutOfRange { encoding: &'static str, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("format not usable here: {0}")]
    InvalidFormat(String),

    #[error("layout error: {0}")]
    Layout(String),

    #[error("outlier width {s} is not 16-aligned; interleaving requires S mod 16 = 0")]
    MisalignedOutliers { s: usize },

    #[error("unknown format name {0:?}")]
    UnknownFormat(String),

    #[error("bad magic {0:?} (expected \"ARCT\")")]
    BadMagic([u8; 4]),

    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),

    #[error("unsupported container version {0}")]
    UnsupportedVersion(u32),

    #[error("malformed payload: {0}")]
    Payload(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
