use std::fmt;
use std::path::PathBuf;

use cwmtsne::ErrorKind;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Pipeline stage, used to attribute failures and warnings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Standardize,
    Embed,
    Transform,
    Sweep,
    Metrics,
    Report,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Load => "load",
            Stage::Standardize => "standardize",
            Stage::Embed => "embed",
            Stage::Transform => "transform",
            Stage::Sweep => "sweep",
            Stage::Metrics => "metrics",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: cwmtsne::Error,
    },

    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn stage(stage: Stage) -> impl FnOnce(cwmtsne::Error) -> CliError {
        move |source| CliError::Stage { stage, source }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Stage { source, .. } => match source.kind() {
                ErrorKind::Config => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numerical => 4,
            },
        }
    }
}
