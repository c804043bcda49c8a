use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operands that must agree (paired distributions, configs) do not.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A payload breaks one of its own invariants (e.g. tallies that do not sum).
    #[error("invariant violation: {0}")]
    Invariant(String),

    /// Observed cumulative relevant draws disagree with the frozen schedule.
    #[error(
        "schedule violation in round {round}: scheduled {expected} cumulative relevant ballots, observed {actual}; amend the schedule to continue"
    )]
    ScheduleViolation {
        round: usize,
        expected: u64,
        actual: u64,
    },

    /// The audit is in a status that does not admit the requested action.
    #[error("state error: {0}")]
    State(String),

    #[error("data error: {message}")]
    Data { message: String, lines: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
