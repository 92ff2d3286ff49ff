//! Client-facing requests and their resolution into deterministic commands.

use serde::{Deserialize, Serialize};

use crate::aggregation::{derive_kind, ThresholdValues};
use crate::domain::{AgreementKind, Collaboration, Comment, Decision, InvolvedUser, Proposal, ProposalBody, ProposalKind};
use crate::error::{GdmError, Result};
use crate::fraction::Fraction;
use crate::ids::{IdGenerator, ProposalId, UserId};
use crate::lifecycle::{Command, ModeratorChoice, ProposalEdit};
use crate::notation::{parse, RelationshipRegistry};
use crate::policy::{PolicyOverrides, PolicyRepository, PreferenceKind};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BodyFormat {
    /// Notation when the text starts like `Name[`, free text otherwise.
    #[default]
    Auto,
    Text,
    Notation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DraftKind {
    Elementary,
    Alternative,
    Composite,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ProposalDraft {
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<DraftKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    #[serde(default)]
    pub format: BodyFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refines: Option<ProposalId>,
    #[serde(default)]
    pub conflictual: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ProposalId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "edit", rename_all = "camelCase")]
pub enum EditDraft {
    #[serde(rename_all = "camelCase")]
    Withdraw { proposal_id: ProposalId },
    #[serde(rename_all = "camelCase")]
    Revise {
        proposal_id: ProposalId,
        body: String,
        #[serde(default)]
        format: BodyFormat,
    },
    AttachAlternative { proposal: ProposalDraft },
}

/// What a client asks for. Identifiers, timestamps, policy lookups and
/// parsing are filled in by [`resolve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", content = "args", rename_all = "camelCase")]
pub enum Request {
    #[serde(rename_all = "camelCase")]
    CreateCollaboration {
        #[serde(default)]
        intent: String,
        #[serde(default)]
        deadline: Option<Timestamp>,
        #[serde(default)]
        involved_users: Vec<InvolvedUser>,
    },
    AddInvolvedUser { user: InvolvedUser },
    #[serde(rename_all = "camelCase")]
    RemoveInvolvedUser { user_id: UserId },
    DefineSituation {
        intent: String,
        #[serde(default)]
        deadline: Option<Timestamp>,
    },
    #[serde(rename_all = "camelCase")]
    ChooseMethod {
        policy: String,
        #[serde(flatten)]
        overrides: PolicyOverrides,
        #[serde(default)]
        threshold_override: Option<Fraction>,
    },
    NotifyActors {},
    AddProposal(ProposalDraft),
    #[serde(rename_all = "camelCase")]
    AddConflict { proposal_id: ProposalId, other_id: ProposalId },
    OpenEvaluation {},
    #[serde(rename_all = "camelCase")]
    SubmitDecision {
        proposal_id: ProposalId,
        #[serde(default)]
        kind: Option<AgreementKind>,
        #[serde(default)]
        rating: Option<u8>,
        #[serde(default)]
        comment: Option<String>,
        #[serde(default)]
        alternative_id: Option<ProposalId>,
    },
    CloseRound {},
    ModeratorChoice(ModeratorChoice),
    AdjustProposals {
        #[serde(default)]
        edits: Vec<EditDraft>,
    },
}

impl Request {
    pub fn is_create(&self) -> bool {
        matches!(self, Request::CreateCollaboration { .. })
    }
}

/// Services a request may draw on while being resolved.
pub struct ResolveContext<'a> {
    pub actor: &'a UserId,
    pub at: Timestamp,
    pub ids: &'a IdGenerator,
    pub policies: &'a PolicyRepository,
    pub registry: &'a RelationshipRegistry,
    pub thresholds: ThresholdValues,
}

/// Resolves `req` against the current collaboration. Returns the command and
/// the identifier of anything it creates.
pub fn resolve(req: &Request, collab: Option<&Collaboration>, ctx: &ResolveContext<'_>) -> Result<(Command, Option<String>)> {
    let cmd = match req {
        Request::CreateCollaboration {
            intent,
            deadline,
            involved_users,
        } => Command::CreateCollaboration {
            intent: intent.clone(),
            deadline: *deadline,
            involved_users: involved_users.clone(),
        },
        Request::AddInvolvedUser { user } => Command::AddInvolvedUser { user: user.clone() },
        Request::RemoveInvolvedUser { user_id } => Command::RemoveInvolvedUser {
            user_id: user_id.clone(),
        },
        Request::DefineSituation { intent, deadline } => Command::DefineSituation {
            intent: intent.clone(),
            deadline: *deadline,
        },
        Request::ChooseMethod {
            policy,
            overrides,
            threshold_override,
        } => {
            let base = ctx.policies.get(policy).map_err(|e| match e {
                GdmError::UnknownPolicy(name) => GdmError::InvalidPolicy(vec![format!("unknown policy `{name}`")]),
                other => other,
            })?;
            let policy = overrides.apply(&base);
            Command::ChooseMethod {
                rule: ctx.thresholds.rule(policy.co_decision.threshold),
                policy,
                threshold_override: *threshold_override,
            }
        }
        Request::NotifyActors {} => Command::NotifyActors,
        Request::AddProposal(draft) => {
            let proposal = build_proposal(draft, ctx)?;
            let id = proposal.proposal_id.to_string();
            return Ok((Command::AddProposal { proposal }, Some(id)));
        }
        Request::AddConflict { proposal_id, other_id } => Command::AddConflict {
            proposal_id: proposal_id.clone(),
            other_id: other_id.clone(),
        },
        Request::OpenEvaluation {} => Command::OpenEvaluation,
        Request::SubmitDecision {
            proposal_id,
            kind,
            rating,
            comment,
            alternative_id,
        } => {
            let collab = collab.ok_or_else(|| GdmError::InvalidCommand("no collaboration".into()))?;
            let pref = collab.preference_kind().unwrap_or(PreferenceKind::YesNo);
            let comment = comment
                .as_ref()
                .map(|text| Comment::new(ctx.actor.clone(), text.clone(), ctx.at))
                .transpose()?;
            let mut decision = Decision {
                decision_maker_id: ctx.actor.clone(),
                proposal_id: proposal_id.clone(),
                round: collab.current_round,
                kind: kind.unwrap_or(AgreementKind::Approval),
                rating: *rating,
                comment,
                alternative_id: alternative_id.clone(),
                submitted_at: ctx.at,
                binding: collab.is_eligible(ctx.actor) || !collab.advisors().contains(ctx.actor),
            };
            if kind.is_none() {
                if rating.is_none() {
                    return Err(GdmError::InvalidCommand("a decision needs a kind or a rating".into()));
                }
                decision.kind = derive_kind(&decision, pref);
            }
            Command::SubmitDecision { decision }
        }
        Request::CloseRound {} => Command::CloseRound,
        Request::ModeratorChoice(choice) => Command::ModeratorChoice { choice: choice.clone() },
        Request::AdjustProposals { edits } => {
            let edits = edits
                .iter()
                .map(|e| {
                    Ok(match e {
                        EditDraft::Withdraw { proposal_id } => ProposalEdit::Withdraw {
                            proposal_id: proposal_id.clone(),
                        },
                        EditDraft::Revise {
                            proposal_id,
                            body,
                            format,
                        } => ProposalEdit::Revise {
                            proposal_id: proposal_id.clone(),
                            body: build_body(body, *format, ctx.registry)?,
                        },
                        EditDraft::AttachAlternative { proposal } => {
                            let mut draft = proposal.clone();
                            draft.kind.get_or_insert(DraftKind::Alternative);
                            ProposalEdit::AttachAlternative {
                                proposal: build_proposal(&draft, ctx)?,
                            }
                        }
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Command::AdjustProposals { edits }
        }
    };
    Ok((cmd, None))
}

fn looks_like_notation(text: &str) -> bool {
    let t = text.trim_start();
    let head: String = t.chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect();
    !head.is_empty() && t[head.len()..].trim_start().starts_with('[')
}

pub fn build_body(text: &str, format: BodyFormat, registry: &RelationshipRegistry) -> Result<ProposalBody> {
    let notation = match format {
        BodyFormat::Text => false,
        BodyFormat::Notation => true,
        BodyFormat::Auto => looks_like_notation(text),
    };
    if !notation {
        return Ok(ProposalBody::text(text));
    }
    let c = parse(text, registry)?;
    Ok(ProposalBody {
        text: c.to_string(),
        correspondence: Some(c),
    })
}

fn build_proposal(draft: &ProposalDraft, ctx: &ResolveContext<'_>) -> Result<Proposal> {
    let kind = draft.kind.unwrap_or(if draft.refines.is_some() {
        DraftKind::Alternative
    } else if !draft.children.is_empty() {
        DraftKind::Composite
    } else {
        DraftKind::Elementary
    });
    let body = || -> Result<ProposalBody> {
        let text = draft
            .body
            .as_deref()
            .ok_or_else(|| GdmError::InvalidProposal("body is required".into()))?;
        build_body(text, draft.format, ctx.registry)
    };
    let kind = match kind {
        DraftKind::Elementary => ProposalKind::Elementary { body: body()? },
        DraftKind::Alternative => ProposalKind::Alternative {
            body: body()?,
            refines: draft
                .refines
                .clone()
                .ok_or_else(|| GdmError::InvalidAlternative("`refines` is required".into()))?,
            conflictual: draft.conflictual,
        },
        DraftKind::Composite => ProposalKind::Composite {
            children: draft.children.clone(),
        },
    };
    let title = match (&draft.title, &kind) {
        (Some(t), _) => t.clone(),
        (None, ProposalKind::Elementary { body } | ProposalKind::Alternative { body, .. }) => body.text.clone(),
        (None, ProposalKind::Composite { .. }) => {
            return Err(GdmError::InvalidProposal("a composite needs a title".into()))
        }
    };
    Ok(Proposal {
        proposal_id: ProposalId::new(ctx.ids.next(ctx.at)),
        title,
        author_id: ctx.actor.clone(),
        created_at: ctx.at,
        collective_decision: crate::domain::CollectiveDecision::Pending,
        conflicts_with: Default::default(),
        withdrawn: false,
        kind,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::notation::NotationError;

    #[test]
    fn request_json_shapes() {
        let r: Request = serde_json::from_str(r#"{"command":"notifyActors","args":{}}"#).unwrap();
        assert_eq!(r, Request::NotifyActors {});
        let r: Request = serde_json::from_str(
            r#"{"command":"chooseMethod","args":{"policy":"MajorityDeciding","threshold":"medium"}}"#,
        )
        .unwrap();
        match r {
            Request::ChooseMethod { policy, overrides, .. } => {
                assert_eq!(policy, "MajorityDeciding");
                assert!(overrides.threshold.is_some());
            }
            other => panic!("{other:?}"),
        }
        let r: Request = serde_json::from_str(
            r#"{"command":"addProposal","args":{"body":"Induction[BP:Task -> SD:Operation]","refines":"x","conflictual":true}}"#,
        )
        .unwrap();
        assert!(matches!(r, Request::AddProposal(ProposalDraft { conflictual: true, .. })));
        let r: Request =
            serde_json::from_str(r#"{"command":"moderatorChoice","args":{"choice":"adjustThreshold","value":0.5}}"#)
                .unwrap();
        assert_eq!(
            r,
            Request::ModeratorChoice(ModeratorChoice::AdjustThreshold { value: "1/2".parse().unwrap() })
        );
    }

    #[test]
    fn bodies_parse_as_notation_when_shaped_like_it() {
        let reg = RelationshipRegistry::default();
        let b = build_body("Dependency[BP:Task → SD:Operation]", BodyFormat::Auto, &reg).unwrap();
        assert_eq!(b.text, "Dependency[BP:Task -> SD:Operation]");
        assert!(b.correspondence.is_some());
        let plain = build_body("rename the task", BodyFormat::Auto, &reg).unwrap();
        assert!(plain.correspondence.is_none());
        let err = build_body("Similarity[BP:Task -> SD:Operation]", BodyFormat::Auto, &reg).unwrap_err();
        assert!(matches!(err, GdmError::Notation(NotationError::ArrowMismatch { .. })));
        let forced = build_body("Similarity[x", BodyFormat::Text, &reg).unwrap();
        assert_eq!(forced.text, "Similarity[x");
    }
}
