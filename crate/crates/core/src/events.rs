use serde::{Deserialize, Serialize};

use crate::domain::{CollaborativeWorkProduct, CollectiveDecision, Decision, InvolvedUser, Proposal};
use crate::fraction::Fraction;
use crate::ids::{CollaborationId, ProposalId, UserId};
use crate::lifecycle::LifecycleState;
use crate::time::Timestamp;

/// Kind-specific payload of an [`Event`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventBody {
    #[serde(rename_all = "camelCase")]
    ActorAssigned { user_id: UserId, role: String },
    ProposalCreated { proposal: Proposal },
    AlternativeProposed { proposal: Proposal },
    #[serde(rename_all = "camelCase")]
    EvaluationRequested {
        user_id: UserId,
        round: u32,
        proposal_ids: Vec<ProposalId>,
    },
    DecisionRecorded { decision: Decision },
    #[serde(rename_all = "camelCase")]
    RoundClosed { round: u32, decision_count: usize },
    ThresholdMissed {
        round: u32,
        threshold: Fraction,
        undecided: Vec<ProposalId>,
    },
    ThresholdAdjusted { value: Fraction },
    #[serde(rename_all = "camelCase")]
    CollectiveDecisionPublished {
        proposal_id: ProposalId,
        round: u32,
        decision: CollectiveDecision,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        score: Option<Fraction>,
    },
    #[serde(rename_all = "camelCase")]
    CollaborationClosed { work_product: CollaborativeWorkProduct },
    StateChanged {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        from: Option<LifecycleState>,
        to: LifecycleState,
        command: String,
    },
    #[serde(rename_all = "camelCase")]
    ConflictAdded { proposal_id: ProposalId, other_id: ProposalId },
    ProposalRevised { proposal: Proposal },
    #[serde(rename_all = "camelCase")]
    ProposalWithdrawn { proposal_id: ProposalId },
    #[serde(rename_all = "camelCase")]
    MembershipChanged { involved_users: Vec<InvolvedUser> },
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::ActorAssigned { .. } => "ActorAssigned",
            EventBody::ProposalCreated { .. } => "ProposalCreated",
            EventBody::AlternativeProposed { .. } => "AlternativeProposed",
            EventBody::EvaluationRequested { .. } => "EvaluationRequested",
            EventBody::DecisionRecorded { .. } => "DecisionRecorded",
            EventBody::RoundClosed { .. } => "RoundClosed",
            EventBody::ThresholdMissed { .. } => "ThresholdMissed",
            EventBody::ThresholdAdjusted { .. } => "ThresholdAdjusted",
            EventBody::CollectiveDecisionPublished { .. } => "CollectiveDecisionPublished",
            EventBody::CollaborationClosed { .. } => "CollaborationClosed",
            EventBody::StateChanged { .. } => "StateChanged",
            EventBody::ConflictAdded { .. } => "ConflictAdded",
            EventBody::ProposalRevised { .. } => "ProposalRevised",
            EventBody::ProposalWithdrawn { .. } => "ProposalWithdrawn",
            EventBody::MembershipChanged { .. } => "MembershipChanged",
        }
    }

    /// The proposal this event is about, used to reach its subscribers.
    pub fn proposal_id(&self) -> Option<&ProposalId> {
        match self {
            EventBody::ProposalCreated { proposal }
            | EventBody::AlternativeProposed { proposal }
            | EventBody::ProposalRevised { proposal } => Some(&proposal.proposal_id),
            EventBody::DecisionRecorded { decision } => Some(&decision.proposal_id),
            EventBody::CollectiveDecisionPublished { proposal_id, .. }
            | EventBody::ConflictAdded { proposal_id, .. }
            | EventBody::ProposalWithdrawn { proposal_id } => Some(proposal_id),
            _ => None,
        }
    }

    /// A user the event is addressed to personally.
    pub fn addressee(&self) -> Option<&UserId> {
        match self {
            EventBody::ActorAssigned { user_id, .. } | EventBody::EvaluationRequested { user_id, .. } => {
                Some(user_id)
            }
            _ => None,
        }
    }
}

/// A published state change. `seq` is gap-free per collaboration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Event {
    pub seq: u64,
    pub collaboration_id: CollaborationId,
    pub at: Timestamp,
    #[serde(flatten)]
    pub body: EventBody,
}

impl Event {
    pub fn kind(&self) -> &'static str {
        self.body.kind()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn event_json_is_flat() {
        let e = Event {
            seq: 3,
            collaboration_id: "c".into(),
            at: Timestamp::from_millis(0),
            body: EventBody::RoundClosed { round: 1, decision_count: 4 },
        };
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["kind"], "RoundClosed");
        assert_eq!(v["payload"]["decisionCount"], 4);
        assert_eq!(v["seq"], 3);
        let back: Event = serde_json::from_value(v).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn kind_matches_serialized_tag() {
        let body = EventBody::ThresholdAdjusted { value: Fraction::ONE };
        let v = serde_json::to_value(&body).unwrap();
        assert_eq!(v["kind"], body.kind());
    }
}
