//! Library-wide error type.

use crate::task_graph::ValidationReport;

/// Errors surfaced by the library.  Each variant corresponds to a distinct
/// failure class so callers (notably the CLI) can map them to stable exit
/// codes.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input file or document does not match the expected schema.
    #[error("failed to parse {what}: {detail}")]
    Parse { what: String, detail: String },

    /// Graph/machine combination failed semantic validation.
    #[error("graph validation failed:\n{0}")]
    InvalidGraph(ValidationReport),

    /// A caller-supplied argument is outside its documented domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Workload enumeration would exceed the model-size cap.
    #[error(
        "workload blow-up on processor {processor}: at least {workloads} workloads \
         would need at least {variables} variables (cap {cap})"
    )]
    WorkloadBlowUp {
        processor: usize,
        workloads: u64,
        variables: u64,
        cap: u64,
    },

    /// Switch model requested with fewer slots than frequency levels.
    #[error("switch model needs at least {needed} slots per processor, got {got}")]
    TooFewSlots { got: usize, needed: usize },

    /// A solution file could not be read back against its model.
    #[error("solution import: {0}")]
    SolutionImport(String),

    /// A solver assignment could not be decoded into a schedule.
    #[error("decode: {0}")]
    Decode(String),

    /// Discrete-event simulation failed.
    #[error("simulation: {0}")]
    Simulation(String),

    /// The instance admits no schedule under its deadline and threshold.
    #[error("no feasible schedule: {0}")]
    Infeasible(String),
    /// The solver ran out of budget before reaching any integral point.
    #[error("solver limit reached without a schedule: {0}")]
    SolverLimit(String),

    /// Exhaustive oracle refused an instance with too many binaries.
    #[error("oracle: {binaries} binary variables exceed the exhaustive limit {limit}")]
    OracleTooLarge { binaries: usize, limit: usize },

    /// The two formulations disagreed where they must coincide.
    #[error("formulation mismatch: workload optimum {workload} J, switch optimum {switch} J")]
    OracleMismatch { workload: f64, switch: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Convenience constructor for parse failures.
    pub fn parse(what: impl Into<String>, detail: impl std::fmt::Display) -> Self {
        Error::Parse {
            what: what.into(),
            detail: detail.to_string(),
        }
    }
}
