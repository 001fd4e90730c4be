use alloc::string::String;
use core::fmt;

/// Errors raised by the solvers, attacks and metrics.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An index lies outside the matrix dimensions.
    IndexOutOfRange { user: usize, item: usize },
    /// The same (user, item) pair was supplied twice.
    DuplicateEntry { user: usize, item: usize },
    /// A rating or parameter was NaN or infinite.
    NonFinite(&'static str),
    /// Attack budget parameters are outside their valid ranges.
    InvalidBudget(String),
    /// A solver or attack parameter is outside its valid range.
    InvalidParameter(String),
    /// The observation set is empty.
    EmptyObservations,
    /// Two inputs that must agree in shape do not.
    ShapeMismatch(String),
    /// A solver produced a non-finite objective.
    Divergence(String),
    /// The evaluation mask selects no entries.
    DegenerateMask,
    /// A linear system that should be positive definite was not.
    SingularSystem(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IndexOutOfRange { user, item } => {
                write!(f, "entry ({user}, {item}) is out of range")
            }
            Error::DuplicateEntry { user, item } => {
                write!(f, "entry ({user}, {item}) appears more than once")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidBudget(msg) => write!(f, "invalid attack budget: {msg}"),
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::EmptyObservations => f.write_str("no observed ratings"),
            Error::ShapeMismatch(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Divergence(msg) => write!(f, "solver diverged: {msg}"),
            Error::DegenerateMask => f.write_str("evaluation mask is empty"),
            Error::SingularSystem(what) => write!(f, "singular linear system in {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
