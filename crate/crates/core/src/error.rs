use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("empty feature sequence")]
    EmptySequence,
    #[error("non-finite feature at frame {frame}, feature {feature}")]
    NonFiniteFeature { frame: usize, feature: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("negative label {0}")]
    NegativeLabel(f64),
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("inconsistent feature dimension: expected {expected}, found {found}")]
    InconsistentFeatureDimension { expected: usize, found: usize },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("intensity must be ≤ 1 (got {0})")]
    IntensityOutOfRange(f64),
    #[error("clip window [{start_s} s, {end_s} s) outside series span of {span_s} s")]
    WindowOutOfRange {
        start_s: f64,
        end_s: f64,
        span_s: f64,
    },
    #[error("series too short: need {needed} samples, have {available}")]
    SeriesTooShort { needed: usize, available: usize },
    #[error("feature sequence is already mean-subtracted")]
    AlreadyMeanSubtracted,
    #[error("forward cache does not match this network")]
    StaleCache,
    #[error("training diverged (non-finite loss) in epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("no records inside bounds [{low}, {high}]")]
    EmptySelection { low: f64, high: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }
}
