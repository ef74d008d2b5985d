use std::path::PathBuf;

/// Failures surfaced by the command-line driver, grouped by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("{}, line {line}: {message}", path.display())]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{failed} of {total} replicates failed")]
    Benchmark { failed: usize, total: usize },
    #[error(transparent)]
    Model(#[from] vdmfpca::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Output { .. } => 2,
            CliError::Data(_) | CliError::Row { .. } => 3,
            CliError::Benchmark { .. } => 4,
            CliError::Model(vdmfpca::Error::Config(_)) => 2,
            CliError::Model(_) => 3,
        }
    }

    pub(crate) fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
