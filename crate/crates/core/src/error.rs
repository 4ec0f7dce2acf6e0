use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected:?}, got {got:?}")]
    Shape {
        op: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("zero-norm vector at row {0}")]
    ZeroNorm(usize),
    #[error("insufficient {pool} pool: need {need}, have {have}")]
    InsufficientPool {
        pool: &'static str,
        need: usize,
        have: usize,
    },
    #[error("cache does not belong to the current parameters")]
    StaleCache,
    #[error("degenerate data: {0}")]
    Degenerate(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: (usize, usize), got: (usize, usize)) -> Self {
        Error::Shape { op, expected, got }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by NaN/inf values or a failed numeric routine.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::ZeroNorm(_))
    }
}
