use alloc::string::String;

/// Errors produced by the core pipeline.
///
/// Messages for the conditions named by the data contracts ("no samples",
/// "insufficient coverage", ...) are kept stable because downstream tooling
/// matches on them.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("no samples")]
    NoSamples,
    #[error("misaligned collection window")]
    MisalignedWindow,
    #[error("window outside series: {0}")]
    WindowOutOfRange(String),
    #[error("insufficient coverage")]
    InsufficientCoverage,
    #[error("onset not contained")]
    OnsetNotContained,
    #[error("empty segment")]
    EmptySegment,
    #[error("segment is not imputed")]
    NotImputed,
    #[error("cannot balance")]
    CannotBalance,
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("batch norm running statistics are uninitialized")]
    UninitializedStats,
    #[error("backward requires a scalar loss, got {0} elements")]
    NonScalarLoss(usize),
    #[error("both classes required per step")]
    MissingClass,
    #[error("loss diverged (non-finite) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("missing matched control for {0}")]
    MissingMatchedControl(String),
    #[error("one-class input")]
    OneClass,
    #[error("mode does not match model family: {0}")]
    ModeMismatch(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}
