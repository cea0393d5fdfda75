use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Plot(String),
    /// A check ran and did not pass.
    #[error("{0}")]
    CheckFailed(String),
    #[error(transparent)]
    Core(#[from] sgdm_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use sgdm_core::Error as E;
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) | CliError::Plot(_) | CliError::Json(_) => 2,
            CliError::CheckFailed(_) => 3,
            CliError::Core(
                E::Divergence { .. } | E::CoupledDivergence { .. } | E::PreconditionRefused(_),
            ) => 3,
            CliError::Core(_) => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        use sgdm_core::Error as E;
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Plot(_) => "plot",
            CliError::CheckFailed(_) => "check_failed",
            CliError::Json(_) => "json",
            CliError::Core(e) => match e {
                E::Parse { .. } => "parse",
                E::Degenerate(_) => "degenerate",
                E::DimensionMismatch { .. } => "dimension_mismatch",
                E::IndexOutOfRange { .. } => "index_out_of_range",
                E::InvalidHyperParams(_) => "invalid_hyperparams",
                E::Divergence { .. } | E::CoupledDivergence { .. } => "divergence",
                E::PreconditionRefused(_) => "precondition_refused",
                E::InvalidArgument(_) => "invalid_argument",
                E::Io { .. } | E::Stream(_) => "io",
                E::Json(_) => "json",
            },
        }
    }

    /// `sgdm: error code=<c> kind=<k>: <message on one line>`
    pub fn diagnostic(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("sgdm: error code={} kind={}: {msg}", self.exit_code(), self.kind())
    }
}
