use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or unreadable input. Exit 2.
    #[error("{0}")]
    Input(String),
    /// A solve did not produce an accepted result. Exit 3.
    #[error("{0}")]
    Solve(String),
    /// Files or checks that disagree with each other. Exit 4.
    #[error("{0}")]
    Consistency(String),
    /// A size guard refused the job. Exit 5.
    #[error("{0}")]
    Guard(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Solve(_) => 3,
            CliError::Consistency(_) => 4,
            CliError::Guard(_) => 5,
        }
    }
}
