use speckle_core::Error as CoreError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_NUMERICAL: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    /// Every problem found in a scenario, each naming its key.
    #[error("scenario {path} is invalid:\n{}", .problems.iter().map(|p| format!("  - {p}")).collect::<Vec<_>>().join("\n"))]
    Scenario { path: String, problems: Vec<String> },

    #[error("{0}")]
    Usage(String),

    #[error("{failed} of {total} acceptance criteria failed")]
    CriteriaFailed { failed: usize, total: usize },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Scenario { .. } | CliError::Usage(_) | CliError::CriteriaFailed { .. } => EXIT_VALIDATION,
            CliError::Core(e) if e.is_validation() => EXIT_VALIDATION,
            CliError::Core(CoreError::NumericalFailure { .. }) => EXIT_NUMERICAL,
            CliError::Core(_) | CliError::Io { .. } => EXIT_IO,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_map_to_distinct_codes() {
        let scen = CliError::Scenario {
            path: "s.toml".into(),
            problems: vec!["grid.n: too small".into()],
        };
        assert_eq!(scen.exit_code(), EXIT_VALIDATION);
        assert!(scen.to_string().contains("  - grid.n"));
        let num = CliError::Core(CoreError::NumericalFailure {
            context: "fit".into(),
            detail: "nan".into(),
        });
        assert_eq!(num.exit_code(), EXIT_NUMERICAL);
        let io = CliError::io(std::path::Path::new("x"), std::io::Error::other("gone"));
        assert_eq!(io.exit_code(), EXIT_IO);
        let fmt = CliError::Core(CoreError::Format {
            path: "a.csv".into(),
            detail: "bad".into(),
        });
        assert_eq!(fmt.exit_code(), EXIT_IO);
        assert_eq!(CliError::Core(CoreError::Configuration("x".into())).exit_code(), EXIT_VALIDATION);
    }
}
