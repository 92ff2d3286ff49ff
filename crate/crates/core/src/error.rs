use serde::Serialize;
use thiserror::Error;

use crate::ids::{CollaborationId, ProposalId, UserId};
use crate::lifecycle::LifecycleState;
use crate::notation::NotationError;

/// Per-proposal shortfall reported when a round cannot close.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct QuorumDeficit {
    pub proposal_id: ProposalId,
    pub voters: usize,
    pub required: usize,
}

/// Coarse family of an error, used by transports to pick a status code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Forbidden,
    Conflict,
    NotFound,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GdmError {
    #[error("a reject decision must carry a comment")]
    MissingComment,
    #[error("comment text must not be blank")]
    InvalidComment,
    #[error("a refinement decision must reference an alternative proposal")]
    MissingAlternative,
    #[error("invalid alternative: {0}")]
    InvalidAlternative(String),
    #[error("`{0}` is not an eligible decision maker")]
    NotEligible(UserId),
    #[error("rating does not match the preference kind: {0}")]
    RatingModeMismatch(String),
    #[error("rating {0} is outside 1..=5")]
    InvalidRating(u8),
    #[error("proposal `{0}` cannot conflict with itself")]
    SelfConflict(ProposalId),
    #[error("unknown proposal `{0}`")]
    UnknownProposal(ProposalId),
    #[error("unknown user `{0}`")]
    UnknownUser(UserId),
    #[error("unknown collaboration `{0}`")]
    UnknownCollaboration(CollaborationId),
    #[error("unknown policy `{0}`")]
    UnknownPolicy(String),
    #[error("unknown subject `{0}`")]
    UnknownSubject(String),
    #[error("proposal `{0}` would create a cycle in the composite tree")]
    CycleDetected(ProposalId),
    #[error("proposal `{0}` already belongs to a composite")]
    AlreadyHasParent(ProposalId),
    #[error("invalid proposal: {0}")]
    InvalidProposal(String),
    #[error("proposal `{0}` is not open for evaluation")]
    NotEvaluable(ProposalId),
    #[error("`{0}` is not the moderator")]
    NotModerator(UserId),
    #[error("command `{command}` is not allowed in state {state:?}")]
    WrongState {
        state: LifecycleState,
        command: String,
    },
    #[error("invalid policy: {}", .0.join("; "))]
    InvalidPolicy(Vec<String>),
    #[error("policy `{0}` is already registered")]
    DuplicatePolicy(String),
    #[error("no involved user satisfies the selection criteria")]
    NoEligibleActors,
    #[error("quorum not reached for {} proposal(s)", .0.len())]
    QuorumNotReached(Vec<QuorumDeficit>),
    #[error("the single re-evaluation of this collaboration has already been used")]
    SecondReevaluation,
    #[error("invalid threshold: {0}")]
    InvalidThreshold(String),
    #[error("no binding decisions for proposal `{0}`")]
    EmptyRound(ProposalId),
    #[error("there is no proposal to evaluate")]
    NoProposals,
    #[error("invalid membership: {0}")]
    InvalidMembership(String),
    #[error("user `{0}` is already involved")]
    DuplicateUser(UserId),
    #[error("invalid command: {0}")]
    InvalidCommand(String),
    #[error(transparent)]
    Notation(#[from] NotationError),
    #[error("storage error: {0}")]
    Storage(String),
    #[error("corrupt log at byte {offset}: {reason}")]
    CorruptLog { offset: u64, reason: String },
}

impl GdmError {
    /// Machine-readable code, stable across releases.
    pub fn code(&self) -> &'static str {
        use GdmError::*;
        match self {
            MissingComment => "MissingComment",
            InvalidComment => "InvalidComment",
            MissingAlternative => "MissingAlternative",
            InvalidAlternative(_) => "InvalidAlternative",
            NotEligible(_) => "NotEligible",
            RatingModeMismatch(_) => "RatingModeMismatch",
            InvalidRating(_) => "InvalidRating",
            SelfConflict(_) => "SelfConflict",
            UnknownProposal(_) => "UnknownProposal",
            UnknownUser(_) => "UnknownUser",
            UnknownCollaboration(_) => "UnknownCollaboration",
            UnknownPolicy(_) => "UnknownPolicy",
            UnknownSubject(_) => "UnknownSubject",
            CycleDetected(_) => "CycleDetected",
            AlreadyHasParent(_) => "AlreadyHasParent",
            InvalidProposal(_) => "InvalidProposal",
            NotEvaluable(_) => "NotEvaluable",
            NotModerator(_) => "NotModerator",
            WrongState { .. } => "WrongState",
            InvalidPolicy(_) => "InvalidPolicy",
            DuplicatePolicy(_) => "DuplicatePolicy",
            NoEligibleActors => "NoEligibleActors",
            QuorumNotReached(_) => "QuorumNotReached",
            SecondReevaluation => "SecondReevaluation",
            InvalidThreshold(_) => "InvalidThreshold",
            EmptyRound(_) => "EmptyRound",
            NoProposals => "NoProposals",
            InvalidMembership(_) => "InvalidMembership",
            DuplicateUser(_) => "DuplicateUser",
            InvalidCommand(_) => "InvalidCommand",
            Notation(e) => e.code(),
            Storage(_) => "StorageError",
            CorruptLog { .. } => "CorruptLog",
        }
    }

    pub fn class(&self) -> ErrorClass {
        use GdmError::*;
        match self {
            NotEligible(_) | NotModerator(_) => ErrorClass::Forbidden,
            UnknownProposal(_)
            | UnknownUser(_)
            | UnknownCollaboration(_)
            | UnknownPolicy(_)
            | UnknownSubject(_) => ErrorClass::NotFound,
            WrongState { .. }
            | QuorumNotReached(_)
            | SecondReevaluation
            | EmptyRound(_)
            | NoProposals
            | DuplicatePolicy(_) => ErrorClass::Conflict,
            Storage(_) | CorruptLog { .. } => ErrorClass::Internal,
            _ => ErrorClass::Validation,
        }
    }
}

pub type Result<T, E = GdmError> = std::result::Result<T, E>;
