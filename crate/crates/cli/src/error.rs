use std::fmt;
use std::path::Path;

use feeder_envelope::{FeederError, LoadFlowError, OpfError, QpError, TighteningError};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Input = 2,
    Divergence = 3,
    Infeasible = 4,
    SolverLimit = 5,
    Admissibility = 6,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    pub fn new(code: ExitCode, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self::new(ExitCode::Input, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::input(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<FeederError> for CliError {
    fn from(e: FeederError) -> Self {
        Self::input(format!("feeder: {e}"))
    }
}

impl From<LoadFlowError> for CliError {
    fn from(e: LoadFlowError) -> Self {
        let code = match e {
            LoadFlowError::VoltageCollapse { .. } | LoadFlowError::NotConverged { .. } => ExitCode::Divergence,
            _ => ExitCode::Input,
        };
        Self::new(code, format!("load flow: {e}"))
    }
}

impl From<QpError> for CliError {
    fn from(e: QpError) -> Self {
        let code = match e {
            QpError::NumericalBreakdown(_) | QpError::Inconclusive(_) => ExitCode::SolverLimit,
            _ => ExitCode::Input,
        };
        Self::new(code, format!("solver: {e}"))
    }
}

impl From<OpfError> for CliError {
    fn from(e: OpfError) -> Self {
        let code = match &e {
            OpfError::Infeasible { .. } | OpfError::Unbounded => ExitCode::Infeasible,
            OpfError::SolverLimit(_) => ExitCode::SolverLimit,
            OpfError::Qp(q) => return q.clone().into(),
            OpfError::Invariant(_) => ExitCode::SolverLimit,
            _ => ExitCode::Input,
        };
        let message = match &e {
            OpfError::Infeasible { rows, .. } => {
                let shown: Vec<&str> = rows.iter().take(8).map(String::as_str).collect();
                let more = rows.len().saturating_sub(shown.len());
                let tail = if more > 0 { format!(" (+{more} more)") } else { String::new() };
                format!("program is infeasible; certificate rows: {}{tail}", shown.join(", "))
            }
            _ => e.to_string(),
        };
        Self::new(code, message)
    }
}

impl From<TighteningError> for CliError {
    fn from(e: TighteningError) -> Self {
        match e {
            TighteningError::InvalidSettings(m) => Self::input(format!("settings: {m}")),
            TighteningError::LoadFlow { iteration, source } => {
                let inner = CliError::from(source);
                Self::new(inner.code, format!("iteration {iteration}: {}", inner.message))
            }
            TighteningError::Opf { iteration, source } => {
                let inner = CliError::from(source);
                Self::new(inner.code, format!("iteration {iteration}: {}", inner.message))
            }
            TighteningError::Qp(q) => q.into(),
        }
    }
}
