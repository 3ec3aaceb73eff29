use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] shiftseq::Error),
    #[error("writing {path}: {msg}")]
    Output { path: String, msg: String },
}

impl CliError {
    /// 2 for bad input, 1 for internal or numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Core(e) if e.is_input_error() => 2,
            _ => 1,
        }
    }
}
