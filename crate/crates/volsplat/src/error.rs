use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("cannot read {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {msg}", path.display())]
    Parse { path: PathBuf, msg: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] volsplat_core::Error),
    #[error("{0}")]
    Failed(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn read(path: &Path, source: std::io::Error) -> Self {
        Error::Read {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn write(path: &Path, source: std::io::Error) -> Self {
        Error::Write {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn parse(path: &Path, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// Process exit code: 2 for bad input or configuration, 1 for failures
    /// while running.
    pub fn exit_code(&self) -> i32 {
        use volsplat_core::Error as C;
        match self {
            Error::Read { .. } | Error::Parse { .. } | Error::Config(_) => 2,
            Error::Core(C::Diverged { .. }) => 1,
            Error::Core(_) => 2,
            Error::Write { .. } | Error::Failed(_) => 1,
        }
    }
}
