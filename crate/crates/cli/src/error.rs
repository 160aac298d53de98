//! CLI failure taxonomy with stable exit codes.
//!
//! | code | kind            | meaning                                        |
//! |------|-----------------|------------------------------------------------|
//! | 0    | —               | success                                        |
//! | 1    | error           | any failure not covered below                  |
//! | 2    | missing-input   | a file named on the command line is absent     |
//! | 3    | schema          | a file exists but fails to parse or validate   |
//! | 4    | stage-order     | a prior stage's default artifact is absent     |

use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    /// An explicitly named input file does not exist.
    MissingInput(PathBuf),
    /// An input file exists but violates its documented schema.
    Schema(String),
    /// A default-path artifact of an earlier stage is missing.
    StageOrder { missing: PathBuf, hint: &'static str },
    /// Everything else.
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::MissingInput(_) => 2,
            CliError::Schema(_) => 3,
            CliError::StageOrder { .. } => 4,
            CliError::Other(_) => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::MissingInput(_) => "missing-input",
            CliError::Schema(_) => "schema",
            CliError::StageOrder { .. } => "stage-order",
            CliError::Other(_) => "error",
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::MissingInput(p) => write!(f, "missing input file: {}", p.display()),
            CliError::Schema(msg) => write!(f, "schema violation: {msg}"),
            CliError::StageOrder { missing, hint } => {
                write!(f, "stage-order violation: {} not found; {hint}", missing.display())
            }
            CliError::Other(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<partconf::Error> for CliError {
    fn from(e: partconf::Error) -> Self {
        use partconf::Error as E;
        match e {
            // Input files that parsed but describe inconsistent data.
            E::Malformed(_)
            | E::DimensionMismatch { .. }
            | E::DuplicatePatch(_)
            | E::UnknownPatch(_)
            | E::UnknownImage(_)
            | E::PatchOutsideImage { .. }
            | E::Json(_) => CliError::Schema(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
