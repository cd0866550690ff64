use std::fmt;
use std::path::Path;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorKind {
    Usage,
    Config,
    MissingInput,
    Format,
    Stage,
}

/// Error reported on stderr as `{"error": {...}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub stage: Option<String>,
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    fn new(kind: ErrorKind, message: String) -> Self {
        Self {
            stage: None,
            kind,
            message,
        }
    }

    pub fn usage(message: String) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn config(message: String) -> Self {
        Self::new(ErrorKind::Config, message)
    }

    pub fn missing(path: &Path, e: &dyn fmt::Display) -> Self {
        Self::new(ErrorKind::MissingInput, format!("{}: {e}", path.display()))
    }

    pub fn in_stage(mut self, stage: &str) -> Self {
        self.stage.get_or_insert_with(|| stage.to_owned());
        self
    }

    pub(crate) fn with_path(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.stage {
            Some(s) => write!(f, "{s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for CliError {}

impl From<latreg_core::Error> for CliError {
    fn from(e: latreg_core::Error) -> Self {
        use latreg_core::Error as E;
        let kind = match &e {
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ErrorKind::MissingInput,
            E::Format(_) | E::Json(_) => ErrorKind::Format,
            E::InvalidConfig(_) | E::InvalidSpec(_) | E::UnknownAttribute(_) => ErrorKind::Config,
            _ => ErrorKind::Stage,
        };
        Self::new(kind, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(ErrorKind::Format, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(ErrorKind::Stage, e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
