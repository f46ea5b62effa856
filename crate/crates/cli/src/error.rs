use routegraph::capture::CaptureError;
use routegraph::distill::DistillError;
use routegraph::econ::LedgerError;
use routegraph::http::ClientError;
use routegraph::index::IndexError;
use routegraph::orchestrator::ResolveError;
use routegraph::pay402::PayError;
use routegraph::simnet::FleetError;
use serde_json::json;
use thiserror::Error;

/// Every failure the CLI reports. Each variant owns one exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Payment(String),
    #[error("{0}")]
    Unresolvable(String),
    #[error("{0}")]
    Network(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Input(_) => 3,
            CliError::Validation(_) => 4,
            CliError::NotFound(_) => 5,
            CliError::Payment(_) => 6,
            CliError::Unresolvable(_) => 7,
            CliError::Network(_) => 8,
        }
    }

    pub fn class(&self) -> &'static str {
        match self {
            CliError::Internal(_) => "internal",
            CliError::Usage(_) => "usage",
            CliError::Input(_) => "input",
            CliError::Validation(_) => "validation",
            CliError::NotFound(_) => "not_found",
            CliError::Payment(_) => "payment",
            CliError::Unresolvable(_) => "unresolvable",
            CliError::Network(_) => "network",
        }
    }

    pub fn to_json(&self) -> String {
        json!({"error": self.class(), "message": self.to_string()}).to_string()
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}

impl From<CaptureError> for CliError {
    fn from(e: CaptureError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DistillError> for CliError {
    fn from(e: DistillError) -> Self {
        match e {
            DistillError::NoApiEntries => CliError::NotFound(e.to_string()),
            DistillError::DomainMismatch(..) => CliError::Validation(e.to_string()),
            DistillError::Io(_) | DistillError::Format(_) => CliError::Input(e.to_string()),
        }
    }
}

impl From<IndexError> for CliError {
    fn from(e: IndexError) -> Self {
        match e {
            IndexError::ValidationFailed(_) => CliError::Validation(e.to_string()),
            IndexError::EmptyIndex | IndexError::NotFound(_) => CliError::NotFound(e.to_string()),
            IndexError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<LedgerError> for CliError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::Io(_) => CliError::Internal(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<PayError> for CliError {
    fn from(e: PayError) -> Self {
        match e {
            PayError::Io(_) | PayError::Ledger(_) => CliError::Internal(e.to_string()),
            PayError::MalformedHeader(_) => CliError::Input(e.to_string()),
            _ => CliError::Payment(e.to_string()),
        }
    }
}

impl From<FleetError> for CliError {
    fn from(e: FleetError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match &e {
            ClientError::Transport(_) => CliError::Network(e.to_string()),
            ClientError::PaymentRefused { .. } => CliError::Payment(e.to_string()),
            ClientError::Status { status: 402, .. } => CliError::Payment(e.to_string()),
            ClientError::Status { status: 404 | 410, .. } => CliError::NotFound(e.to_string()),
            ClientError::Status { status: 400 | 422, .. } => CliError::Validation(e.to_string()),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<ResolveError> for CliError {
    fn from(e: ResolveError) -> Self {
        match e {
            ResolveError::InvalidIntent(_) => CliError::Usage(e.to_string()),
            ResolveError::PaymentRefused(_) => CliError::Payment(e.to_string()),
            ResolveError::DiscoveryEmpty(_) | ResolveError::Unresolvable(_) => CliError::Unresolvable(e.to_string()),
        }
    }
}
