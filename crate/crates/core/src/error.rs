use thiserror::Error;

use crate::model::{FlawId, StateId, Violation};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid instance: {}", join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("analysis requires explicit instance")]
    RequiresExplicit,

    #[error("B undefined: arc {from} -> {to} leaving a flawed state has probability {prob}")]
    ArcBoundUndefined {
        from: StateId,
        to: StateId,
        prob: f64,
    },

    #[error("state {0} is outside the state space")]
    UnknownState(StateId),

    #[error("flaw {0} is outside the flaw set")]
    UnknownFlaw(FlawId),

    #[error("{0}")]
    Precondition(String),

    #[error("malformed break sequence: {0}")]
    MalformedBreakSequence(String),

    #[error("break-sequence code: {0}")]
    Code(#[from] crate::forensics::CodeError),

    #[error("leaf cap of {cap} exceeded (frontier size {frontier})")]
    CapExceeded { cap: usize, frontier: usize },

    #[error("explicit state space of {states} states exceeds the cap of {cap}")]
    TooLarge { states: u128, cap: u128 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
