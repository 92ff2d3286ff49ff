//! Collaboration concepts shared by every other module.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aggregation::{ProposalOutcome, ThresholdRule};
use crate::error::{GdmError, Result};
use crate::fraction::Fraction;
use crate::ids::{CollaborationId, ProposalId, UserId};
use crate::lifecycle::{LifecycleState, Transition};
use crate::notation::Correspondence;
use crate::policy::{DecisionPolicy, PreferenceKind};
use crate::time::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AgreementKind {
    Approval,
    Reject,
    Refinement,
}

impl AgreementKind {
    pub const ALL: [AgreementKind; 3] = [
        AgreementKind::Approval,
        AgreementKind::Reject,
        AgreementKind::Refinement,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgreementKind::Approval => "approval",
            AgreementKind::Reject => "reject",
            AgreementKind::Refinement => "refinement",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Comment {
    pub author_id: UserId,
    pub text: String,
    pub created_at: Timestamp,
}

impl Comment {
    pub fn new(author_id: UserId, text: impl Into<String>, created_at: Timestamp) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(GdmError::InvalidComment);
        }
        Ok(Comment {
            author_id,
            text,
            created_at,
        })
    }
}

/// One actor's evaluation of one proposal in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Decision {
    pub decision_maker_id: UserId,
    pub proposal_id: ProposalId,
    pub round: u32,
    pub kind: AgreementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<Comment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative_id: Option<ProposalId>,
    pub submitted_at: Timestamp,
    /// False for advice under an advisory policy.
    pub binding: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct InvolvedUser {
    pub user_id: UserId,
    pub display_name: String,
    #[serde(default)]
    pub is_moderator: bool,
    pub expertise_level: Fraction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub viewpoint: Option<String>,
}

impl InvolvedUser {
    pub fn new(user_id: &str, expertise_level: Fraction) -> Self {
        InvolvedUser {
            user_id: UserId::from(user_id),
            display_name: user_id.to_string(),
            is_moderator: false,
            expertise_level,
            viewpoint: None,
        }
    }

    pub fn moderator(mut self) -> Self {
        self.is_moderator = true;
        self
    }

    pub fn with_viewpoint(mut self, viewpoint: &str) -> Self {
        self.viewpoint = Some(viewpoint.to_string());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum CollectiveDecision {
    Pending,
    Approved,
    Rejected,
    /// The group never converged before the round budget ran out.
    Unresolved,
}

impl CollectiveDecision {
    pub fn as_str(&self) -> &'static str {
        match self {
            CollectiveDecision::Pending => "pending",
            CollectiveDecision::Approved => "approved",
            CollectiveDecision::Rejected => "rejected",
            CollectiveDecision::Unresolved => "unresolved",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProposalBody {
    pub text: String,
    /// Present when the body was written in correspondence notation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correspondence: Option<Correspondence>,
}

impl ProposalBody {
    pub fn text(text: impl Into<String>) -> Self {
        ProposalBody {
            text: text.into(),
            correspondence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ProposalKind {
    Elementary {
        body: ProposalBody,
    },
    #[serde(rename_all = "camelCase")]
    Alternative {
        body: ProposalBody,
        refines: ProposalId,
        conflictual: bool,
    },
    Composite {
        children: Vec<ProposalId>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Proposal {
    pub proposal_id: ProposalId,
    pub title: String,
    pub author_id: UserId,
    pub created_at: Timestamp,
    pub collective_decision: CollectiveDecision,
    #[serde(default)]
    pub conflicts_with: BTreeSet<ProposalId>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub withdrawn: bool,
    #[serde(flatten)]
    pub kind: ProposalKind,
}

impl Proposal {
    pub fn elementary(id: &str, author: &str, body: ProposalBody, at: Timestamp) -> Self {
        Proposal {
            proposal_id: ProposalId::from(id),
            title: body.text.clone(),
            author_id: UserId::from(author),
            created_at: at,
            collective_decision: CollectiveDecision::Pending,
            conflicts_with: BTreeSet::new(),
            withdrawn: false,
            kind: ProposalKind::Elementary { body },
        }
    }

    pub fn alternative(
        id: &str,
        author: &str,
        body: ProposalBody,
        refines: &str,
        conflictual: bool,
        at: Timestamp,
    ) -> Self {
        Proposal {
            kind: ProposalKind::Alternative {
                body,
                refines: ProposalId::from(refines),
                conflictual,
            },
            ..Proposal::elementary(id, author, ProposalBody::text(""), at)
        }
        .retitled()
    }

    pub fn composite(id: &str, author: &str, title: &str, children: &[&str], at: Timestamp) -> Self {
        Proposal {
            proposal_id: ProposalId::from(id),
            title: title.to_string(),
            author_id: UserId::from(author),
            created_at: at,
            collective_decision: CollectiveDecision::Pending,
            conflicts_with: BTreeSet::new(),
            withdrawn: false,
            kind: ProposalKind::Composite {
                children: children.iter().map(|c| ProposalId::from(*c)).collect(),
            },
        }
    }

    fn retitled(mut self) -> Self {
        if let Some(body) = self.body() {
            self.title = body.text.clone();
        }
        self
    }

    pub fn body(&self) -> Option<&ProposalBody> {
        match &self.kind {
            ProposalKind::Elementary { body } | ProposalKind::Alternative { body, .. } => Some(body),
            ProposalKind::Composite { .. } => None,
        }
    }

    pub fn is_composite(&self) -> bool {
        matches!(self.kind, ProposalKind::Composite { .. })
    }

    /// Elementary (including alternative) and not withdrawn.
    pub fn is_evaluable(&self) -> bool {
        !self.is_composite() && !self.withdrawn
    }

    pub fn refines(&self) -> Option<&ProposalId> {
        match &self.kind {
            ProposalKind::Alternative { refines, .. } => Some(refines),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self.kind {
            ProposalKind::Elementary { .. } => "elementary",
            ProposalKind::Alternative { .. } => "alternative",
            ProposalKind::Composite { .. } => "composite",
        }
    }
}

/// The proposals of one collaboration. Conflict links are kept symmetric and
/// the composite structure is kept a forest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProposalStore {
    proposals: BTreeMap<ProposalId, Proposal>,
}

impl ProposalStore {
    pub fn get(&self, id: &ProposalId) -> Result<&Proposal> {
        self.proposals
            .get(id)
            .ok_or_else(|| GdmError::UnknownProposal(id.clone()))
    }

    pub fn get_mut(&mut self, id: &ProposalId) -> Result<&mut Proposal> {
        self.proposals
            .get_mut(id)
            .ok_or_else(|| GdmError::UnknownProposal(id.clone()))
    }

    pub fn contains(&self, id: &ProposalId) -> bool {
        self.proposals.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.proposals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.proposals.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Proposal> {
        self.proposals.values()
    }

    pub fn ids(&self) -> impl Iterator<Item = &ProposalId> {
        self.proposals.keys()
    }

    /// Proposals currently open to evaluation, ordered by id.
    pub fn evaluable(&self) -> impl Iterator<Item = &Proposal> {
        self.proposals.values().filter(|p| p.is_evaluable())
    }

    pub fn parent_of(&self, id: &ProposalId) -> Option<&ProposalId> {
        self.proposals.values().find_map(|p| match &p.kind {
            ProposalKind::Composite { children } if children.contains(id) => Some(&p.proposal_id),
            _ => None,
        })
    }

    pub fn insert(&mut self, proposal: Proposal) -> Result<()> {
        let id = proposal.proposal_id.clone();
        if self.proposals.contains_key(&id) {
            return Err(GdmError::InvalidProposal(format!("duplicate proposal id `{id}`")));
        }
        if !proposal.conflicts_with.is_empty() {
            return Err(GdmError::InvalidProposal(
                "conflicts are added after creation".into(),
            ));
        }
        let mut conflict_with_refined = None;
        match &proposal.kind {
            ProposalKind::Elementary { body } => {
                if body.text.trim().is_empty() {
                    return Err(GdmError::InvalidProposal("empty body".into()));
                }
            }
            ProposalKind::Alternative {
                body,
                refines,
                conflictual,
            } => {
                if body.text.trim().is_empty() {
                    return Err(GdmError::InvalidProposal("empty body".into()));
                }
                let target = self
                    .proposals
                    .get(refines)
                    .ok_or_else(|| GdmError::UnknownProposal(refines.clone()))?;
                if target.is_composite() {
                    return Err(GdmError::InvalidAlternative(format!(
                        "`{refines}` is composite; alternatives refine elementary proposals"
                    )));
                }
                if *conflictual {
                    conflict_with_refined = Some(refines.clone());
                }
            }
            ProposalKind::Composite { children } => {
                if children.is_empty() {
                    return Err(GdmError::InvalidProposal(
                        "a composite needs at least one child".into(),
                    ));
                }
                let mut seen = BTreeSet::new();
                for child in children {
                    if *child == id {
                        return Err(GdmError::CycleDetected(id.clone()));
                    }
                    if !seen.insert(child) {
                        return Err(GdmError::InvalidProposal(format!(
                            "child `{child}` listed twice"
                        )));
                    }
                    if !self.proposals.contains_key(child) {
                        return Err(GdmError::UnknownProposal(child.clone()));
                    }
                    if self.parent_of(child).is_some() {
                        return Err(GdmError::AlreadyHasParent(child.clone()));
                    }
                }
            }
        }
        self.proposals.insert(id.clone(), proposal);
        if let Some(refined) = conflict_with_refined {
            self.add_conflict(&id, &refined)?;
        }
        Ok(())
    }

    /// Links two elementary proposals as mutually exclusive. Returns whether
    /// the store changed.
    pub fn add_conflict(&mut self, p: &ProposalId, q: &ProposalId) -> Result<bool> {
        if p == q {
            return Err(GdmError::SelfConflict(p.clone()));
        }
        for id in [p, q] {
            if self.get(id)?.is_composite() {
                return Err(GdmError::InvalidProposal(format!(
                    "`{id}` is composite; conflicts relate elementary proposals"
                )));
            }
        }
        let added = self.get_mut(p)?.conflicts_with.insert(q.clone());
        let added_back = self.get_mut(q)?.conflicts_with.insert(p.clone());
        debug_assert_eq!(added, added_back);
        Ok(added)
    }

    /// Appends `child` to the composite `parent`.
    pub fn attach_child(&mut self, parent: &ProposalId, child: &ProposalId) -> Result<()> {
        self.get(child)?;
        if !self.get(parent)?.is_composite() {
            return Err(GdmError::InvalidProposal(format!("`{parent}` is not composite")));
        }
        if self.parent_of(child).is_some() {
            return Err(GdmError::AlreadyHasParent(child.clone()));
        }
        let mut cursor = Some(parent.clone());
        while let Some(current) = cursor {
            if current == *child {
                return Err(GdmError::CycleDetected(child.clone()));
            }
            cursor = self.parent_of(&current).cloned();
        }
        if let ProposalKind::Composite { children } = &mut self.get_mut(parent)?.kind {
            children.push(child.clone());
        }
        Ok(())
    }

    /// Conjunction over leaves: rejected if any leaf is rejected, otherwise
    /// unresolved if any leaf is unresolved, approved if every leaf is
    /// approved, pending otherwise.
    pub fn composite_status(&self, id: &ProposalId) -> Result<CollectiveDecision> {
        let mut statuses = Vec::new();
        self.collect_leaf_statuses(id, &mut BTreeSet::new(), &mut statuses)?;
        Ok(combine_leaf_statuses(&statuses))
    }

    fn collect_leaf_statuses<'a>(
        &'a self,
        id: &'a ProposalId,
        path: &mut BTreeSet<&'a ProposalId>,
        out: &mut Vec<CollectiveDecision>,
    ) -> Result<()> {
        if !path.insert(id) {
            return Err(GdmError::CycleDetected(id.clone()));
        }
        let proposal = self.get(id)?;
        match &proposal.kind {
            ProposalKind::Composite { children } => {
                for child in children {
                    self.collect_leaf_statuses(child, path, out)?;
                }
            }
            _ => out.push(proposal.collective_decision),
        }
        path.remove(id);
        Ok(())
    }
}

pub fn combine_leaf_statuses(statuses: &[CollectiveDecision]) -> CollectiveDecision {
    use CollectiveDecision::*;
    if statuses.contains(&Rejected) {
        Rejected
    } else if statuses.contains(&Unresolved) {
        Unresolved
    } else if !statuses.is_empty() && statuses.iter().all(|s| *s == Approved) {
        Approved
    } else {
        Pending
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CollaborativeWorkProduct {
    pub collaboration_id: CollaborationId,
    pub approved_proposal_ids: BTreeSet<ProposalId>,
    pub closed_at: Timestamp,
    pub final_round: u32,
}

/// A decision session. Mutated only through the lifecycle module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Collaboration {
    pub collaboration_id: CollaborationId,
    pub intent: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<Timestamp>,
    pub created_at: Timestamp,
    pub involved_users: Vec<InvolvedUser>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adopted_policy_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adopted_policy: Option<DecisionPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<ThresholdRule>,
    pub eligible_dms: BTreeSet<UserId>,
    pub proposals: ProposalStore,
    pub current_round: u32,
    pub state: LifecycleState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_override: Option<Fraction>,
    #[serde(default)]
    pub reevaluated: bool,
    /// Every accepted submission, in arrival order.
    pub decisions: Vec<Decision>,
    /// Latest aggregation result per proposal.
    pub results: BTreeMap<ProposalId, ProposalOutcome>,
    pub transitions: Vec<Transition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_product: Option<CollaborativeWorkProduct>,
}

impl Collaboration {
    pub fn user(&self, id: &UserId) -> Option<&InvolvedUser> {
        self.involved_users.iter().find(|u| u.user_id == *id)
    }

    pub fn moderator(&self) -> Option<&InvolvedUser> {
        self.involved_users.iter().find(|u| u.is_moderator)
    }

    pub fn is_moderator(&self, id: &UserId) -> bool {
        self.user(id).is_some_and(|u| u.is_moderator)
    }

    pub fn is_eligible(&self, id: &UserId) -> bool {
        self.eligible_dms.contains(id)
    }

    pub fn is_advisory(&self) -> bool {
        self.adopted_policy.as_ref().is_some_and(|p| p.advisory)
    }

    /// Involved users who may give non-binding advice.
    pub fn advisors(&self) -> BTreeSet<UserId> {
        if !self.is_advisory() {
            return BTreeSet::new();
        }
        self.involved_users
            .iter()
            .map(|u| u.user_id.clone())
            .filter(|id| !self.eligible_dms.contains(id))
            .collect()
    }

    pub fn preference_kind(&self) -> Option<PreferenceKind> {
        self.adopted_policy
            .as_ref()
            .map(|p| p.co_decision.preference_kind)
    }

    pub fn weights(&self) -> BTreeMap<UserId, Fraction> {
        self.involved_users
            .iter()
            .map(|u| (u.user_id.clone(), u.expertise_level))
            .collect()
    }

    pub fn decisions_in_round(&self, round: u32) -> impl Iterator<Item = &Decision> {
        self.decisions.iter().filter(move |d| d.round == round)
    }

    /// Checks invariants that span several fields.
    pub fn check_invariants(&self) -> Result<()> {
        validate_membership(&self.involved_users)?;
        for id in &self.eligible_dms {
            if self.user(id).is_none() {
                return Err(GdmError::InvalidMembership(format!(
                    "eligible decision maker `{id}` is not involved"
                )));
            }
        }
        if self.work_product.is_some() != (self.state == LifecycleState::Closed) {
            return Err(GdmError::InvalidCommand(
                "work product must exist exactly when closed".into(),
            ));
        }
        for p in self.proposals.iter() {
            if p.conflicts_with.contains(&p.proposal_id) {
                return Err(GdmError::SelfConflict(p.proposal_id.clone()));
            }
            for q in &p.conflicts_with {
                if !self.proposals.get(q)?.conflicts_with.contains(&p.proposal_id) {
                    return Err(GdmError::InvalidProposal(format!(
                        "conflict `{}`-`{q}` is not symmetric",
                        p.proposal_id
                    )));
                }
            }
        }
        if let Some(wp) = &self.work_product {
            for id in &wp.approved_proposal_ids {
                let p = self.proposals.get(id)?;
                if p.collective_decision != CollectiveDecision::Approved {
                    return Err(GdmError::InvalidProposal(format!("`{id}` is not approved")));
                }
                if p.conflicts_with.iter().any(|q| wp.approved_proposal_ids.contains(q)) {
                    return Err(GdmError::InvalidProposal(format!(
                        "work product contains conflicting proposals around `{id}`"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Exactly one moderator, unique ids, positive weights.
pub fn validate_membership(users: &[InvolvedUser]) -> Result<()> {
    let moderators = users.iter().filter(|u| u.is_moderator).count();
    if moderators != 1 {
        return Err(GdmError::InvalidMembership(format!(
            "expected exactly one moderator, found {moderators}"
        )));
    }
    let mut seen = BTreeSet::new();
    for u in users {
        if u.user_id.as_str().trim().is_empty() {
            return Err(GdmError::InvalidMembership("empty user id".into()));
        }
        if !seen.insert(&u.user_id) {
            return Err(GdmError::DuplicateUser(u.user_id.clone()));
        }
        if !u.expertise_level.is_positive() {
            return Err(GdmError::InvalidMembership(format!(
                "expertise level of `{}` must be positive",
                u.user_id
            )));
        }
    }
    Ok(())
}

/// Checks a decision against the collaboration it is submitted to.
pub fn validate_decision(d: &Decision, pref: PreferenceKind, collab: &Collaboration) -> Result<()> {
    let proposal = collab.proposals.get(&d.proposal_id)?;
    if collab.user(&d.decision_maker_id).is_none() {
        return Err(GdmError::UnknownUser(d.decision_maker_id.clone()));
    }
    let allowed = if d.binding {
        collab.is_eligible(&d.decision_maker_id)
    } else {
        collab.advisors().contains(&d.decision_maker_id)
    };
    if !allowed {
        return Err(GdmError::NotEligible(d.decision_maker_id.clone()));
    }
    if !proposal.is_evaluable() {
        return Err(GdmError::NotEvaluable(d.proposal_id.clone()));
    }
    if d.round == 0 {
        return Err(GdmError::InvalidCommand("rounds start at 1".into()));
    }
    if let Some(comment) = &d.comment {
        if comment.text.trim().is_empty() {
            return Err(GdmError::InvalidComment);
        }
    }
    match d.kind {
        AgreementKind::Reject if d.comment.is_none() => return Err(GdmError::MissingComment),
        AgreementKind::Refinement => {
            let alt_id = d.alternative_id.as_ref().ok_or(GdmError::MissingAlternative)?;
            let alt = collab.proposals.get(alt_id)?;
            if alt.refines() != Some(&d.proposal_id) {
                return Err(GdmError::InvalidAlternative(format!(
                    "`{alt_id}` does not refine `{}`",
                    d.proposal_id
                )));
            }
        }
        _ => {}
    }
    match (pref, d.rating) {
        (PreferenceKind::Rating, None) => {
            return Err(GdmError::RatingModeMismatch(
                "this collaboration evaluates by rating".into(),
            ))
        }
        (PreferenceKind::YesNo, Some(_)) => {
            return Err(GdmError::RatingModeMismatch(
                "this collaboration evaluates by yes/no".into(),
            ))
        }
        (PreferenceKind::Rating, Some(r)) if !(1..=5).contains(&r) => {
            return Err(GdmError::InvalidRating(r))
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(ms: i64) -> Timestamp {
        Timestamp::from_millis(ms)
    }

    fn pid(s: &str) -> ProposalId {
        ProposalId::from(s)
    }

    fn store_with(ids: &[&str]) -> ProposalStore {
        let mut store = ProposalStore::default();
        for (i, id) in ids.iter().enumerate() {
            store
                .insert(Proposal::elementary(id, "u", ProposalBody::text(*id), t(i as i64)))
                .unwrap();
        }
        store
    }

    #[test]
    fn add_conflict_is_symmetric_and_idempotent() {
        let mut store = store_with(&["dep", "ind"]);
        assert!(store.add_conflict(&pid("dep"), &pid("ind")).unwrap());
        assert!(store.get(&pid("dep")).unwrap().conflicts_with.contains(&pid("ind")));
        assert!(store.get(&pid("ind")).unwrap().conflicts_with.contains(&pid("dep")));
        let before = store.clone();
        assert!(!store.add_conflict(&pid("ind"), &pid("dep")).unwrap());
        assert_eq!(store, before);
    }

    #[test]
    fn add_conflict_errors() {
        let mut store = store_with(&["a"]);
        assert_eq!(
            store.add_conflict(&pid("a"), &pid("a")),
            Err(GdmError::SelfConflict(pid("a")))
        );
        assert_eq!(
            store.add_conflict(&pid("a"), &pid("zz")),
            Err(GdmError::UnknownProposal(pid("zz")))
        );
    }

    #[test]
    fn conflictual_alternative_links_back() {
        let mut store = store_with(&["dep"]);
        store
            .insert(Proposal::alternative(
                "ind",
                "claire",
                ProposalBody::text("Induction[BP:Task -> SD:Operation]"),
                "dep",
                true,
                t(9),
            ))
            .unwrap();
        assert!(store.get(&pid("dep")).unwrap().conflicts_with.contains(&pid("ind")));
        let err = store
            .insert(Proposal::alternative("x", "c", ProposalBody::text("x"), "nope", false, t(10)))
            .unwrap_err();
        assert_eq!(err, GdmError::UnknownProposal(pid("nope")));
    }

    #[test]
    fn composite_structure_stays_a_forest() {
        let mut store = store_with(&["a", "b", "c"]);
        store.insert(Proposal::composite("x", "u", "X", &["a", "b"], t(5))).unwrap();
        let err = store
            .insert(Proposal::composite("y", "u", "Y", &["b"], t(6)))
            .unwrap_err();
        assert_eq!(err, GdmError::AlreadyHasParent(pid("b")));
        let err = store
            .insert(Proposal::composite("z", "u", "Z", &["z"], t(6)))
            .unwrap_err();
        assert_eq!(err, GdmError::CycleDetected(pid("z")));
        store.insert(Proposal::composite("y", "u", "Y", &["x"], t(7))).unwrap();
        assert_eq!(
            store.attach_child(&pid("x"), &pid("y")),
            Err(GdmError::CycleDetected(pid("y")))
        );
        store.attach_child(&pid("y"), &pid("c")).unwrap();
        assert_eq!(store.parent_of(&pid("c")), Some(&pid("y")));
    }

    /// Brute-force table over every pair of leaf statuses, written directly
    /// from the rule text.
    #[test]
    fn composite_status_over_all_leaf_pairs() {
        use CollectiveDecision::*;
        let all = [Pending, Approved, Rejected, Unresolved];
        for a in all {
            for b in all {
                let expected = if a == Rejected || b == Rejected {
                    Rejected
                } else if a == Unresolved || b == Unresolved {
                    Unresolved
                } else if a == Approved && b == Approved {
                    Approved
                } else {
                    Pending
                };
                let mut store = store_with(&["a", "b"]);
                store.get_mut(&pid("a")).unwrap().collective_decision = a;
                store.get_mut(&pid("b")).unwrap().collective_decision = b;
                store.insert(Proposal::composite("c", "u", "C", &["a", "b"], t(3))).unwrap();
                assert_eq!(store.composite_status(&pid("c")).unwrap(), expected, "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn nested_composites_use_leaves() {
        let mut store = store_with(&["a", "b", "c"]);
        for id in ["a", "b", "c"] {
            store.get_mut(&pid(id)).unwrap().collective_decision = CollectiveDecision::Approved;
        }
        store.insert(Proposal::composite("x", "u", "X", &["a", "b"], t(5))).unwrap();
        store.insert(Proposal::composite("y", "u", "Y", &["x", "c"], t(6))).unwrap();
        assert_eq!(store.composite_status(&pid("y")).unwrap(), CollectiveDecision::Approved);
        store.get_mut(&pid("c")).unwrap().collective_decision = CollectiveDecision::Pending;
        assert_eq!(store.composite_status(&pid("y")).unwrap(), CollectiveDecision::Pending);
    }

    #[test]
    fn membership_needs_one_moderator() {
        let one = Fraction::ONE;
        let ok = vec![InvolvedUser::new("m", one).moderator(), InvolvedUser::new("a", one)];
        assert!(validate_membership(&ok).is_ok());
        let none = vec![InvolvedUser::new("a", one)];
        assert!(matches!(validate_membership(&none), Err(GdmError::InvalidMembership(_))));
        let two = vec![InvolvedUser::new("m", one).moderator(), InvolvedUser::new("n", one).moderator()];
        assert!(validate_membership(&two).is_err());
        let zero = vec![InvolvedUser::new("m", Fraction::ZERO).moderator()];
        assert!(validate_membership(&zero).is_err());
        let dup = vec![InvolvedUser::new("m", one).moderator(), InvolvedUser::new("m", one)];
        assert_eq!(validate_membership(&dup), Err(GdmError::DuplicateUser(UserId::from("m"))));
    }

    #[test]
    fn proposal_json_shape() {
        let p = Proposal::alternative("ind", "claire", ProposalBody::text("Induction"), "dep", true, t(0));
        let json = serde_json::to_value(&p).unwrap();
        assert_eq!(json["type"], "alternative");
        assert_eq!(json["refines"], "dep");
        assert_eq!(json["collectiveDecision"], "pending");
        let back: Proposal = serde_json::from_value(json).unwrap();
        assert_eq!(back, p);
    }

    proptest! {
        #[test]
        fn conflict_symmetry_survives_any_sequence(
            pairs in prop::collection::vec((0usize..6, 0usize..7), 0..40)
        ) {
            let names = ["a", "b", "c", "d", "e", "f"];
            let mut store = store_with(&names);
            for (i, j) in pairs {
                let p = pid(names[i]);
                let q = pid(names.get(j).copied().unwrap_or("missing"));
                let _ = store.add_conflict(&p, &q);
            }
            for p in store.iter() {
                prop_assert!(!p.conflicts_with.contains(&p.proposal_id));
                for q in &p.conflicts_with {
                    prop_assert!(store.get(q).unwrap().conflicts_with.contains(&p.proposal_id));
                }
            }
        }

        #[test]
        fn composite_insertions_never_make_two_parents(
            ops in prop::collection::vec((0usize..8, prop::collection::vec(0usize..8, 1..4)), 0..12)
        ) {
            let mut store = store_with(&["l0", "l1", "l2", "l3"]);
            for (next, (attach_to, children)) in ops.into_iter().enumerate() {
                let ids: Vec<ProposalId> = store.ids().cloned().collect();
                let kids: Vec<&str> = children.iter().map(|k| ids[k % ids.len()].as_str()).collect();
                let id = format!("c{next}");
                let _ = store.insert(Proposal::composite(&id, "u", &id, &kids, t(100)));
                let target = &ids[attach_to % ids.len()];
                let _ = store.attach_child(&pid(&id), target);
            }
            let mut parents: BTreeMap<ProposalId, usize> = BTreeMap::new();
            for p in store.iter() {
                if let ProposalKind::Composite { children } = &p.kind {
                    for c in children {
                        *parents.entry(c.clone()).or_default() += 1;
                    }
                }
            }
            prop_assert!(parents.values().all(|n| *n == 1));
            for id in store.ids() {
                if store.get(id).unwrap().is_composite() {
                    prop_assert!(store.composite_status(id).is_ok());
                }
            }
        }
    }
}
