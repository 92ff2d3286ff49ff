//! The collaboration state machine.
//!
//! [`create`] and [`apply`] are pure: they take a fully resolved command and
//! return the next collaboration value together with the events it caused.
//! Anything that needs a clock, an id source or a registry happens earlier,
//! when a request is resolved into a [`Command`].

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate, quorum_deficits, RoundInput, ThresholdRule, Verdict};
use crate::domain::{
    validate_decision, validate_membership, Collaboration, CollaborativeWorkProduct, CollectiveDecision,
    Decision, InvolvedUser, Proposal, ProposalBody, ProposalKind, ProposalStore,
};
use crate::error::{GdmError, Result};
use crate::events::EventBody;
use crate::fraction::Fraction;
use crate::ids::{CollaborationId, ProposalId, UserId};
use crate::policy::{eligible_decision_makers, validate_policy, AgreementThreshold, DecisionPolicy};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LifecycleState {
    Draft,
    Configured,
    MethodChosen,
    Notified,
    Elaboration,
    EvaluationOpen,
    EvaluationClosed,
    Aggregated,
    AdjustingProposals,
    AwaitingModeratorChoice,
    Closed,
}

impl fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transition {
    pub from: LifecycleState,
    pub to: LifecycleState,
    pub actor_id: UserId,
    pub command: String,
    pub at: Timestamp,
}

/// Every legal `(from, command, to)` triple.
pub const TRANSITIONS: &[(LifecycleState, &str, LifecycleState)] = {
    use LifecycleState::*;
    &[
        (Draft, "defineSituation", Configured),
        (Configured, "chooseMethod", MethodChosen),
        (MethodChosen, "notifyActors", Notified),
        (Notified, "notifyActors", Elaboration),
        (Elaboration, "openEvaluation", EvaluationOpen),
        (EvaluationOpen, "closeRound", EvaluationClosed),
        (EvaluationClosed, "closeRound", Aggregated),
        (Aggregated, "closeRound", Closed),
        (Aggregated, "closeRound", AdjustingProposals),
        (Aggregated, "closeRound", AwaitingModeratorChoice),
        (AwaitingModeratorChoice, "moderatorChoice", Aggregated),
        (AwaitingModeratorChoice, "moderatorChoice", EvaluationOpen),
        (Aggregated, "moderatorChoice", Closed),
        (Aggregated, "moderatorChoice", AwaitingModeratorChoice),
        (AdjustingProposals, "adjustProposals", EvaluationOpen),
    ]
};

pub fn is_legal_transition(from: LifecycleState, command: &str, to: LifecycleState) -> bool {
    TRANSITIONS
        .iter()
        .any(|(f, c, t)| *f == from && *c == command && *t == to)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "choice", rename_all = "camelCase")]
pub enum ModeratorChoice {
    AdjustThreshold { value: Fraction },
    Reevaluate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "camelCase")]
pub enum ProposalEdit {
    #[serde(rename_all = "camelCase")]
    Withdraw { proposal_id: ProposalId },
    #[serde(rename_all = "camelCase")]
    Revise { proposal_id: ProposalId, body: ProposalBody },
    AttachAlternative { proposal: Proposal },
}

/// A command with every input fixed, so applying it is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "args", rename_all = "camelCase")]
pub enum Command {
    #[serde(rename_all = "camelCase")]
    CreateCollaboration {
        intent: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline: Option<Timestamp>,
        involved_users: Vec<InvolvedUser>,
    },
    AddInvolvedUser { user: InvolvedUser },
    #[serde(rename_all = "camelCase")]
    RemoveInvolvedUser { user_id: UserId },
    DefineSituation {
        intent: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        deadline: Option<Timestamp>,
    },
    #[serde(rename_all = "camelCase")]
    ChooseMethod {
        policy: DecisionPolicy,
        rule: ThresholdRule,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        threshold_override: Option<Fraction>,
    },
    NotifyActors,
    AddProposal { proposal: Proposal },
    #[serde(rename_all = "camelCase")]
    AddConflict { proposal_id: ProposalId, other_id: ProposalId },
    OpenEvaluation,
    SubmitDecision { decision: Decision },
    CloseRound,
    ModeratorChoice { choice: ModeratorChoice },
    AdjustProposals { edits: Vec<ProposalEdit> },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::CreateCollaboration { .. } => "createCollaboration",
            Command::AddInvolvedUser { .. } => "addInvolvedUser",
            Command::RemoveInvolvedUser { .. } => "removeInvolvedUser",
            Command::DefineSituation { .. } => "defineSituation",
            Command::ChooseMethod { .. } => "chooseMethod",
            Command::NotifyActors => "notifyActors",
            Command::AddProposal { .. } => "addProposal",
            Command::AddConflict { .. } => "addConflict",
            Command::OpenEvaluation => "openEvaluation",
            Command::SubmitDecision { .. } => "submitDecision",
            Command::CloseRound => "closeRound",
            Command::ModeratorChoice { .. } => "moderatorChoice",
            Command::AdjustProposals { .. } => "adjustProposals",
        }
    }
}

/// A resolved command plus who issued it and when.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CommandEnvelope {
    pub collaboration_id: CollaborationId,
    pub actor: UserId,
    pub at: Timestamp,
    pub command: Command,
}

pub type Applied = (Collaboration, Vec<EventBody>);

/// Builds a new collaboration in `Draft`.
pub fn create(env: &CommandEnvelope) -> Result<Applied> {
    let Command::CreateCollaboration {
        intent,
        deadline,
        involved_users,
    } = &env.command
    else {
        return Err(GdmError::UnknownCollaboration(env.collaboration_id.clone()));
    };
    validate_membership(involved_users)?;
    let moderator = involved_users.iter().find(|u| u.is_moderator);
    if moderator.map(|m| &m.user_id) != Some(&env.actor) {
        return Err(GdmError::NotModerator(env.actor.clone()));
    }
    let collab = Collaboration {
        collaboration_id: env.collaboration_id.clone(),
        intent: intent.clone(),
        deadline: *deadline,
        created_at: env.at,
        involved_users: involved_users.clone(),
        adopted_policy_id: None,
        adopted_policy: None,
        threshold: None,
        eligible_dms: BTreeSet::new(),
        proposals: ProposalStore::default(),
        current_round: 0,
        state: LifecycleState::Draft,
        threshold_override: None,
        reevaluated: false,
        decisions: Vec::new(),
        results: Default::default(),
        transitions: Vec::new(),
        work_product: None,
    };
    let events = vec![EventBody::StateChanged {
        from: None,
        to: LifecycleState::Draft,
        command: env.command.name().to_string(),
    }];
    Ok((collab, events))
}

/// Applies `env` to a copy of `collab`. On error nothing changes.
pub fn apply(collab: &Collaboration, env: &CommandEnvelope) -> Result<Applied> {
    if env.collaboration_id != collab.collaboration_id {
        return Err(GdmError::UnknownCollaboration(env.collaboration_id.clone()));
    }
    let mut step = Step {
        c: collab.clone(),
        events: Vec::new(),
        actor: &env.actor,
        at: env.at,
        command: env.command.name(),
    };
    step.run(&env.command)?;
    Ok((step.c, step.events))
}

struct Step<'a> {
    c: Collaboration,
    events: Vec<EventBody>,
    actor: &'a UserId,
    at: Timestamp,
    command: &'static str,
}

impl Step<'_> {
    fn require_state(&self, allowed: &[LifecycleState]) -> Result<()> {
        if allowed.contains(&self.c.state) {
            Ok(())
        } else {
            Err(GdmError::WrongState {
                state: self.c.state,
                command: self.command.to_string(),
            })
        }
    }

    fn require_moderator(&self) -> Result<()> {
        if self.c.user(self.actor).is_none() {
            return Err(GdmError::UnknownUser(self.actor.clone()));
        }
        if self.c.is_moderator(self.actor) {
            Ok(())
        } else {
            Err(GdmError::NotModerator(self.actor.clone()))
        }
    }

    fn require_contributor(&self) -> Result<()> {
        if self.c.user(self.actor).is_none() {
            return Err(GdmError::UnknownUser(self.actor.clone()));
        }
        if self.c.is_eligible(self.actor) || self.c.is_moderator(self.actor) {
            Ok(())
        } else {
            Err(GdmError::NotEligible(self.actor.clone()))
        }
    }

    fn goto(&mut self, to: LifecycleState) -> Result<()> {
        let from = self.c.state;
        if !is_legal_transition(from, self.command, to) {
            return Err(GdmError::WrongState {
                state: from,
                command: self.command.to_string(),
            });
        }
        self.c.state = to;
        self.c.transitions.push(Transition {
            from,
            to,
            actor_id: self.actor.clone(),
            command: self.command.to_string(),
            at: self.at,
        });
        self.events.push(EventBody::StateChanged {
            from: Some(from),
            to,
            command: self.command.to_string(),
        });
        Ok(())
    }

    fn run(&mut self, command: &Command) -> Result<()> {
        use LifecycleState::*;
        if self.c.state == Closed {
            return self.require_state(&[]);
        }
        match command {
            Command::CreateCollaboration { .. } => Err(GdmError::InvalidCommand(format!(
                "collaboration `{}` already exists",
                self.c.collaboration_id
            ))),
            Command::AddInvolvedUser { user } => {
                self.require_state(&[Draft, Configured])?;
                self.require_moderator()?;
                let mut users = self.c.involved_users.clone();
                users.push(user.clone());
                validate_membership(&users)?;
                self.c.involved_users = users;
                self.events.push(EventBody::MembershipChanged {
                    involved_users: self.c.involved_users.clone(),
                });
                Ok(())
            }
            Command::RemoveInvolvedUser { user_id } => {
                self.require_state(&[Draft, Configured])?;
                self.require_moderator()?;
                if self.c.user(user_id).is_none() {
                    return Err(GdmError::UnknownUser(user_id.clone()));
                }
                let users: Vec<InvolvedUser> = self
                    .c
                    .involved_users
                    .iter()
                    .filter(|u| u.user_id != *user_id)
                    .cloned()
                    .collect();
                validate_membership(&users)?;
                self.c.involved_users = users;
                self.events.push(EventBody::MembershipChanged {
                    involved_users: self.c.involved_users.clone(),
                });
                Ok(())
            }
            Command::DefineSituation { intent, deadline } => {
                self.require_state(&[Draft])?;
                self.require_moderator()?;
                if intent.trim().is_empty() {
                    return Err(GdmError::InvalidCommand("intent must not be empty".into()));
                }
                self.c.intent = intent.clone();
                self.c.deadline = *deadline;
                self.goto(Configured)
            }
            Command::ChooseMethod {
                policy,
                rule,
                threshold_override,
            } => {
                self.require_state(&[Configured])?;
                self.require_moderator()?;
                let mut violations = validate_policy(policy);
                if rule.level != policy.co_decision.threshold {
                    violations.push("threshold rule does not match the policy level".into());
                }
                if rule.level == AgreementThreshold::Strict && rule.value != Fraction::ONE {
                    violations.push("strict threshold is always 1".into());
                }
                if let Some(v) = threshold_override {
                    if rule.level == AgreementThreshold::Strict && *v != Fraction::ONE {
                        violations.push("a strict threshold cannot be overridden".into());
                    }
                }
                if !violations.is_empty() {
                    return Err(GdmError::InvalidPolicy(violations));
                }
                if let Some(v) = threshold_override {
                    check_threshold(*v)?;
                }
                let eligible = eligible_decision_makers(&self.c.involved_users, policy)?;
                self.c.adopted_policy_id = Some(policy.policy_id.clone());
                self.c.adopted_policy = Some(policy.clone());
                self.c.threshold = Some(*rule);
                self.c.threshold_override = *threshold_override;
                self.c.eligible_dms = eligible;
                self.goto(MethodChosen)
            }
            Command::NotifyActors => {
                self.require_state(&[MethodChosen])?;
                self.require_moderator()?;
                self.goto(Notified)?;
                for dm in self.c.eligible_dms.clone() {
                    self.events.push(EventBody::ActorAssigned {
                        user_id: dm,
                        role: "decisionMaker".into(),
                    });
                }
                for adv in self.c.advisors() {
                    self.events.push(EventBody::ActorAssigned {
                        user_id: adv,
                        role: "advisor".into(),
                    });
                }
                self.request_evaluation(1);
                self.goto(Elaboration)
            }
            Command::AddProposal { proposal } => {
                let is_alt = matches!(proposal.kind, ProposalKind::Alternative { .. });
                if is_alt {
                    self.require_state(&[Elaboration, EvaluationOpen, AdjustingProposals])?;
                } else {
                    self.require_state(&[Elaboration])?;
                }
                self.require_contributor()?;
                self.insert_proposal(proposal)
            }
            Command::AddConflict { proposal_id, other_id } => {
                self.require_state(&[Elaboration, EvaluationOpen, AdjustingProposals])?;
                self.require_contributor()?;
                if self.c.proposals.add_conflict(proposal_id, other_id)? {
                    self.events.push(EventBody::ConflictAdded {
                        proposal_id: proposal_id.clone(),
                        other_id: other_id.clone(),
                    });
                }
                Ok(())
            }
            Command::OpenEvaluation => {
                self.require_state(&[Elaboration])?;
                self.require_moderator()?;
                self.open_round()
            }
            Command::SubmitDecision { decision } => {
                self.require_state(&[EvaluationOpen])?;
                if decision.decision_maker_id != *self.actor {
                    return Err(GdmError::NotEligible(self.actor.clone()));
                }
                if decision.round != self.c.current_round {
                    return Err(GdmError::InvalidCommand(format!(
                        "round {} is not open (current round is {})",
                        decision.round, self.c.current_round
                    )));
                }
                let pref = self
                    .c
                    .preference_kind()
                    .ok_or_else(|| GdmError::InvalidCommand("no policy has been chosen".into()))?;
                validate_decision(decision, pref, &self.c)?;
                self.c.decisions.push(decision.clone());
                self.events.push(EventBody::DecisionRecorded {
                    decision: decision.clone(),
                });
                Ok(())
            }
            Command::CloseRound => {
                self.require_state(&[EvaluationOpen])?;
                self.require_moderator()?;
                let weights = self.c.weights();
                let input = RoundInput::from_collaboration(&self.c, &weights, self.c.current_round)?;
                if input.proposals.is_empty() {
                    return Err(GdmError::NoProposals);
                }
                let deficits = quorum_deficits(&input);
                if !deficits.is_empty() {
                    return Err(GdmError::QuorumNotReached(deficits));
                }
                let count = input.decisions.len();
                self.goto(EvaluationClosed)?;
                self.events.push(EventBody::RoundClosed {
                    round: self.c.current_round,
                    decision_count: count,
                });
                self.goto(Aggregated)?;
                self.route()
            }
            Command::ModeratorChoice { choice } => {
                self.require_state(&[AwaitingModeratorChoice])?;
                self.require_moderator()?;
                match choice {
                    ModeratorChoice::AdjustThreshold { value } => {
                        check_threshold(*value)?;
                        self.c.threshold_override = Some(*value);
                        self.events.push(EventBody::ThresholdAdjusted { value: *value });
                        self.goto(Aggregated)?;
                        self.route()
                    }
                    ModeratorChoice::Reevaluate => {
                        if self.c.reevaluated {
                            return Err(GdmError::SecondReevaluation);
                        }
                        self.c.reevaluated = true;
                        self.open_round()
                    }
                }
            }
            Command::AdjustProposals { edits } => {
                self.require_state(&[AdjustingProposals])?;
                self.require_contributor()?;
                for edit in edits {
                    self.apply_edit(edit)?;
                }
                self.open_round()
            }
        }
    }

    fn insert_proposal(&mut self, proposal: &Proposal) -> Result<()> {
        if proposal.author_id != *self.actor {
            return Err(GdmError::InvalidProposal("author must be the issuing actor".into()));
        }
        if proposal.collective_decision != CollectiveDecision::Pending || proposal.withdrawn {
            return Err(GdmError::InvalidProposal("new proposals start pending".into()));
        }
        self.c.proposals.insert(proposal.clone())?;
        let stored = self.c.proposals.get(&proposal.proposal_id)?.clone();
        match &stored.kind {
            ProposalKind::Alternative { refines, conflictual, .. } => {
                let conflict = conflictual.then(|| refines.clone());
                self.events.push(EventBody::AlternativeProposed { proposal: stored.clone() });
                if let Some(other) = conflict {
                    self.events.push(EventBody::ConflictAdded {
                        proposal_id: stored.proposal_id.clone(),
                        other_id: other,
                    });
                }
            }
            _ => self.events.push(EventBody::ProposalCreated { proposal: stored }),
        }
        Ok(())
    }

    fn apply_edit(&mut self, edit: &ProposalEdit) -> Result<()> {
        match edit {
            ProposalEdit::Withdraw { proposal_id } => {
                let p = self.c.proposals.get_mut(proposal_id)?;
                if !p.is_evaluable() {
                    return Err(GdmError::NotEvaluable(proposal_id.clone()));
                }
                p.withdrawn = true;
                p.collective_decision = CollectiveDecision::Rejected;
                self.events.push(EventBody::ProposalWithdrawn {
                    proposal_id: proposal_id.clone(),
                });
                Ok(())
            }
            ProposalEdit::Revise { proposal_id, body } => {
                if body.text.trim().is_empty() {
                    return Err(GdmError::InvalidProposal("empty body".into()));
                }
                let p = self.c.proposals.get_mut(proposal_id)?;
                if !p.is_evaluable() {
                    return Err(GdmError::NotEvaluable(proposal_id.clone()));
                }
                match &mut p.kind {
                    ProposalKind::Elementary { body: b } | ProposalKind::Alternative { body: b, .. } => {
                        *b = body.clone();
                    }
                    ProposalKind::Composite { .. } => unreachable!("composites are not evaluable"),
                }
                p.title = body.text.clone();
                let revised = p.clone();
                self.events.push(EventBody::ProposalRevised { proposal: revised });
                Ok(())
            }
            ProposalEdit::AttachAlternative { proposal } => {
                if !matches!(proposal.kind, ProposalKind::Alternative { .. }) {
                    return Err(GdmError::InvalidAlternative(
                        "only alternative proposals can be attached".into(),
                    ));
                }
                self.insert_proposal(proposal)
            }
        }
    }

    fn open_round(&mut self) -> Result<()> {
        if self.c.proposals.evaluable().next().is_none() {
            return Err(GdmError::NoProposals);
        }
        self.c.current_round += 1;
        self.goto(LifecycleState::EvaluationOpen)?;
        self.request_evaluation(self.c.current_round);
        Ok(())
    }

    fn request_evaluation(&mut self, round: u32) {
        let proposal_ids: Vec<ProposalId> = self.c.proposals.evaluable().map(|p| p.proposal_id.clone()).collect();
        for dm in self.c.eligible_dms.clone() {
            self.events.push(EventBody::EvaluationRequested {
                user_id: dm,
                round,
                proposal_ids: proposal_ids.clone(),
            });
        }
    }

    /// Aggregates the current round and moves to the state the result calls for.
    fn route(&mut self) -> Result<()> {
        use LifecycleState::*;
        let weights = self.c.weights();
        let round = self.c.current_round;
        let outcome = {
            let input = RoundInput::from_collaboration(&self.c, &weights, round)?;
            aggregate(&input)?
        };
        for (id, o) in &outcome.outcomes {
            self.c.results.insert(id.clone(), o.clone());
        }
        let policy = self
            .c
            .adopted_policy
            .clone()
            .ok_or_else(|| GdmError::InvalidCommand("no policy has been chosen".into()))?;
        if outcome.converged {
            return self.finalize(&outcome.outcomes);
        }
        let undecided: Vec<ProposalId> = outcome
            .outcomes
            .values()
            .filter(|o| o.verdict == Verdict::Undecided)
            .map(|o| o.proposal_id.clone())
            .collect();
        self.events.push(EventBody::ThresholdMissed {
            round,
            threshold: self.c.threshold.map(|r| r.effective(self.c.threshold_override)).unwrap_or(Fraction::ONE),
            undecided,
        });
        if policy.is_iterative() {
            if round < policy.max_rounds {
                self.goto(AdjustingProposals)
            } else {
                self.finalize(&outcome.outcomes)
            }
        } else if self.c.reevaluated {
            self.finalize(&outcome.outcomes)
        } else {
            self.goto(AwaitingModeratorChoice)
        }
    }

    /// Fixes every collective decision and closes. Undecided proposals end unresolved.
    fn finalize(
        &mut self,
        outcomes: &std::collections::BTreeMap<ProposalId, crate::aggregation::ProposalOutcome>,
    ) -> Result<()> {
        for (id, o) in outcomes {
            let decision = match o.verdict {
                Verdict::Undecided => CollectiveDecision::Unresolved,
                v => v.final_decision(),
            };
            self.c.proposals.get_mut(id)?.collective_decision = decision;
            self.events.push(EventBody::CollectiveDecisionPublished {
                proposal_id: id.clone(),
                round: o.round,
                decision,
                score: Some(o.tally.score),
            });
        }
        let composites: Vec<ProposalId> = self
            .c
            .proposals
            .iter()
            .filter(|p| p.is_composite())
            .map(|p| p.proposal_id.clone())
            .collect();
        for id in composites {
            let decision = self.c.proposals.composite_status(&id)?;
            self.c.proposals.get_mut(&id)?.collective_decision = decision;
            self.events.push(EventBody::CollectiveDecisionPublished {
                proposal_id: id,
                round: self.c.current_round,
                decision,
                score: None,
            });
        }
        let approved = self
            .c
            .proposals
            .iter()
            .filter(|p| !p.is_composite() && p.collective_decision == CollectiveDecision::Approved)
            .map(|p| p.proposal_id.clone())
            .collect();
        let wp = CollaborativeWorkProduct {
            collaboration_id: self.c.collaboration_id.clone(),
            approved_proposal_ids: approved,
            closed_at: self.at,
            final_round: self.c.current_round,
        };
        self.c.work_product = Some(wp.clone());
        self.goto(LifecycleState::Closed)?;
        self.events.push(EventBody::CollaborationClosed { work_product: wp });
        Ok(())
    }
}

fn check_threshold(v: Fraction) -> Result<()> {
    if v.is_positive() && v <= Fraction::ONE {
        Ok(())
    } else {
        Err(GdmError::InvalidThreshold(format!("{v} is outside (0, 1]")))
    }
}
