use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const EXIT_VERSION: i32 = 5;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] spikemem::Error),

    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn output(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Output {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        use spikemem::Error as E;
        match self {
            CliError::Config(_) => "config",
            CliError::Output { .. } => "output",
            CliError::Core(e) => match e {
                E::Config(_) | E::Shape(_) | E::Usage(_) => "config",
                E::Numeric(_) => "numeric",
                E::Version { .. } => "version",
                E::Data(_) | E::InputTooShort { .. } | E::Io { .. } => "data",
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            "config" => EXIT_CONFIG,
            "numeric" => EXIT_NUMERIC,
            "version" => EXIT_VERSION,
            _ => EXIT_DATA,
        }
    }

    /// One-line JSON record for standard error.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Record<'a> {
            error: &'a str,
            exit_code: i32,
            message: String,
        }
        serde_json::to_string(&Record {
            error: self.kind(),
            exit_code: self.exit_code(),
            message: self.to_string(),
        })
        .expect("error record serialises")
    }
}
