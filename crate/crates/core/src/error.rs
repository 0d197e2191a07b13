use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DagError {
    #[error("workflow {0} contains a cycle")]
    Cyclic(String),
    #[error("invalid model profile {0}")]
    InvalidModel(String),
    #[error("duplicate model alias {0}")]
    DuplicateModel(String),
    #[error("invalid device {0}")]
    InvalidDevice(String),
    #[error("duplicate device id {0}")]
    DuplicateDevice(String),
    #[error("duplicate query id in {0}")]
    DuplicateQuery(String),
    #[error("empty query batch for {0}")]
    EmptyBatch(String),
    #[error("document error: {0}")]
    Document(String),
    #[error("invalid workflow {workflow}: {detail}")]
    Invalid { workflow: String, detail: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenError {
    #[error("import error: {0}")]
    Import(String),
    #[error("lifting error: {0}")]
    Lift(String),
    #[error(transparent)]
    Dag(#[from] DagError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("deadlock at t={clock:.3}: {detail}")]
    Deadlock { clock: f64, detail: String },
    #[error("policy {policy} produced an invalid assignment: {detail}")]
    InvalidAssignment { policy: String, detail: String },
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error(transparent)]
    Dag(#[from] DagError),
}
