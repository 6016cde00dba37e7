use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("byte accounting overflow in {0}")]
    Overflow(String),

    #[error("zero bandwidth allocated to {0}")]
    ZeroBandwidth(String),

    #[error("phase {phase} cannot run on {kind} clusters")]
    WrongClusterKind { phase: String, kind: String },

    #[error("dimension {dim} = {value} exceeds micro-simulator cap {cap}")]
    OverSimCap { dim: &'static str, value: u64, cap: u64 },

    #[error("vector is empty")]
    EmptyVector,

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("ratio {0} outside [0, 1)")]
    RatioOutOfRange(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("trace format: {0}")]
    TraceFormat(String),

    #[error("decode latency is identically zero; no balance point exists")]
    DegenerateDecode,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config parse: {0}")]
    Parse(#[from] toml::de::Error),

    #[error("config serialize: {0}")]
    Serialize(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
