use std::fmt;

use texdistill::Error;

/// Process exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Config,
    Data,
    Runtime,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Config,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Data,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            kind: Kind::Runtime,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::Config => EXIT_CONFIG,
            Kind::Data => EXIT_DATA,
            Kind::Runtime => EXIT_RUNTIME,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self.kind {
            Kind::Config => "configuration error",
            Kind::Data => "data error",
            Kind::Runtime => "error",
        };
        write!(f, "{label}: {}", self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidConfig { .. } | Error::InvalidPreset { .. } | Error::InvalidSpec(_) => {
                Kind::Config
            }
            Error::MissingWeights(_)
            | Error::MissingDirectory(_)
            | Error::UnpairedMask { .. }
            | Error::UndecodableImage { .. }
            | Error::EmptyDataset(_)
            | Error::SingleClass { .. }
            | Error::Image(_) => Kind::Data,
            _ => Kind::Runtime,
        };
        let message = match &e {
            Error::SingleClass {
                positives,
                negatives,
            } => format!(
                "the test set needs both good and defective images for AUROC \
                 (found {negatives} good, {positives} defective)"
            ),
            other => other.to_string(),
        };
        Self { kind, message }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::runtime(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::runtime(e.to_string())
    }
}
