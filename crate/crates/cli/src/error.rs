use std::fmt;
use std::path::PathBuf;

#[derive(Debug)]
pub enum CliError {
    Core(dnsfr_core::Error),
    Config(String),
    Io(PathBuf, std::io::Error),
    /// An existing output file would be overwritten with different bytes.
    Collision(PathBuf),
    Missing(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "config",
            CliError::Io(..) => "io",
            CliError::Collision(_) => "collision",
            CliError::Missing(_) => "missing_artifact",
        }
    }

    pub fn to_json(&self, command: &str) -> serde_json::Value {
        serde_json::json!({
            "error": {
                "command": command,
                "kind": self.kind(),
                "message": self.to_string(),
            }
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(p, e) => write!(f, "io error on {}: {e}", p.display()),
            CliError::Collision(p) => write!(
                f,
                "{} already exists with different contents (pass --force to overwrite)",
                p.display()
            ),
            CliError::Missing(m) => write!(f, "{m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<dnsfr_core::Error> for CliError {
    fn from(e: dnsfr_core::Error) -> Self {
        CliError::Core(e)
    }
}
