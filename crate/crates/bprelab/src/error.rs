use std::io;

use crate::config::ConfigError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("suite `{suite}` cannot run: {message}")]
    Precondition { suite: String, message: String },
    #[error("cannot write outputs: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Runtime(String),
}

impl HarnessError {
    /// Process exit code: every harness error is a usage, config, or
    /// precondition problem.
    pub fn exit_code(&self) -> i32 {
        1
    }
}
