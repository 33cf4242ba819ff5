use alloc::string::String;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An input violated a documented invariant.
    Validation(String),
    /// Two buffers that must agree in shape did not.
    ShapeMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },
    /// A mesh vertex without any incident edge.
    IsolatedVertex(usize),
    /// Points whose nearest-neighbour distance is zero.
    DuplicatePoints(alloc::vec::Vec<usize>),
    /// An optimisation produced a non-finite loss.
    Diverged { iteration: usize },
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Validation(msg) => write!(f, "validation error: {msg}"),
            Error::ShapeMismatch {
                what,
                expected,
                found,
            } => write!(
                f,
                "shape mismatch for {what}: expected {expected}, found {found}"
            ),
            Error::IsolatedVertex(v) => write!(f, "vertex {v} has no incident edge"),
            Error::DuplicatePoints(idx) => {
                write!(
                    f,
                    "duplicate points give zero neighbour distance at indices {idx:?}"
                )
            }
            Error::Diverged { iteration } => {
                write!(
                    f,
                    "optimisation diverged (non-finite loss) at iteration {iteration}"
                )
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}
