use crate::topology::Axis;

/// Errors raised anywhere in the crate.
///
/// Collective failures are cloned to every participant of the failed call, so
/// the type is `Clone` and carries no I/O source objects.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{0} ranks do not form a cube (no integer cube root)")]
    NotACube(usize),
    #[error("coordinate {coord} out of range for cube side {p}")]
    OutOfRange { coord: usize, p: usize },
    #[error("length mismatch in {op}: expected {expected}, got {got}")]
    LengthMismatch {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("collective desync on {group}: {detail}")]
    Desync { group: String, detail: String },
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error("deadlock: no rank can make progress ({0} ranks still blocked)")]
    Deadlock(usize),
    #[error("{dim} = {value} is not divisible by {divisor}")]
    IndivisibleShape {
        dim: &'static str,
        value: usize,
        divisor: usize,
    },
    #[error("inconsistent shard family: {0}")]
    InconsistentFamily(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("direction triple reuses axis {0}")]
    DirectionClash(Axis),
    #[error("operand layout does not match the requested directions: {0}")]
    LayoutMismatch(String),
    #[error("batch mismatch: {0}")]
    BatchMismatch(String),
    #[error("group index mismatch: activation in group {got}, parameters expect {expected}")]
    GroupMismatch { expected: u8, got: u8 },
    #[error("{heads} attention heads cannot be split over {p} ranks")]
    HeadsIndivisible { heads: usize, p: usize },
    #[error("loss evaluated to a non-finite value at parameter {0}")]
    NonFinite(usize),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("matrix file: {0}")]
    Format(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
