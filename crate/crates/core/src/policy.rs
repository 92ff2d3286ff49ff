//! Decision policies: their structure, validation, manual entries and the
//! selection of eligible decision makers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::domain::InvolvedUser;
use crate::error::{GdmError, Result};
use crate::fraction::Fraction;
use crate::ids::UserId;

/// Placeholder in `explicitUserIds` that stands for the collaboration's moderator.
pub const MODERATOR_SELECTOR: &str = "@moderator";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionProcessKind {
    #[serde(rename = "directVote", alias = "voteDirect")]
    DirectVote,
    #[serde(rename = "consensus2vote")]
    Consensus2Vote,
    #[serde(rename = "negotiation2vote", alias = "negociation2vote")]
    Negotiation2Vote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum AgreementThreshold {
    Low,
    Medium,
    High,
    Strict,
}

impl AgreementThreshold {
    pub const ALL: [AgreementThreshold; 4] = [
        AgreementThreshold::Low,
        AgreementThreshold::Medium,
        AgreementThreshold::High,
        AgreementThreshold::Strict,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AgreementThreshold::Low => "low",
            AgreementThreshold::Medium => "medium",
            AgreementThreshold::High => "high",
            AgreementThreshold::Strict => "strict",
        }
    }
}

impl fmt::Display for AgreementThreshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum PreferenceKind {
    Rating,
    YesNo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoDecisionMethod {
    pub process_kind: DecisionProcessKind,
    pub threshold: AgreementThreshold,
    pub preference_kind: PreferenceKind,
}

/// Conjunction of up to three clauses; absent clauses impose nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SelectionCriteria {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_expertise: Option<Fraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_viewpoints: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub explicit_user_ids: Option<BTreeSet<String>>,
}

impl SelectionCriteria {
    pub fn has_clause(&self) -> bool {
        self.min_expertise.is_some()
            || self.allowed_viewpoints.is_some()
            || self.explicit_user_ids.is_some()
    }

    pub fn admits(&self, user: &InvolvedUser, moderator: Option<&UserId>) -> bool {
        if let Some(min) = self.min_expertise {
            if user.expertise_level < min {
                return false;
            }
        }
        if let Some(views) = &self.allowed_viewpoints {
            match &user.viewpoint {
                Some(v) if views.contains(v) => {}
                _ => return false,
            }
        }
        if let Some(ids) = &self.explicit_user_ids {
            let listed = ids.contains(user.user_id.as_str())
                || (ids.contains(MODERATOR_SELECTOR) && moderator == Some(&user.user_id));
            if !listed {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ParticipationType {
    Democratic,
    Restricted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParticipationMethod {
    #[serde(rename = "type")]
    pub kind: ParticipationType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<SelectionCriteria>,
}

impl ParticipationMethod {
    pub fn democratic() -> Self {
        ParticipationMethod {
            kind: ParticipationType::Democratic,
            criteria: None,
        }
    }

    pub fn restricted(criteria: SelectionCriteria) -> Self {
        ParticipationMethod {
            kind: ParticipationType::Restricted,
            criteria: Some(criteria),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PatternDescriptor {
    pub name: String,
    pub intent: String,
    pub applications: Vec<String>,
    pub solution: String,
    pub known_uses: Vec<String>,
    pub related_patterns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum IterationClass {
    SingleElection,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecisionPolicy {
    pub policy_id: String,
    pub descriptor: PatternDescriptor,
    pub co_decision: CoDecisionMethod,
    pub participation: ParticipationMethod,
    pub iteration_class: IterationClass,
    pub max_rounds: u32,
    #[serde(default)]
    pub advisory: bool,
}

impl DecisionPolicy {
    pub fn is_iterative(&self) -> bool {
        self.iteration_class == IterationClass::Iterative
    }

    fn is_named(&self, name: &str) -> bool {
        let target = normalize_name(name);
        normalize_name(&self.policy_id) == target || normalize_name(&self.descriptor.name) == target
    }
}

/// Case-insensitive, ignoring spaces, dashes and underscores.
pub fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| !c.is_whitespace() && *c != '-' && *c != '_')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Returns every violated policy invariant; empty means valid.
pub fn validate_policy(p: &DecisionPolicy) -> Vec<String> {
    let mut v = Vec::new();
    if p.policy_id.trim().is_empty() {
        v.push("policyId must not be empty".to_string());
    }
    if p.descriptor.name.trim().is_empty() {
        v.push("descriptor name must not be empty".to_string());
    }
    if p.max_rounds == 0 {
        v.push("maxRounds must be positive".to_string());
    }
    if p.iteration_class == IterationClass::SingleElection && p.max_rounds != 1 {
        v.push("single-election policies run exactly one round (maxRounds = 1)".to_string());
    }
    match (&p.participation.kind, &p.participation.criteria) {
        (ParticipationType::Democratic, Some(_)) => {
            v.push("democratic participation takes no selection criteria".to_string())
        }
        (ParticipationType::Restricted, None) => {
            v.push("restricted participation requires selection criteria".to_string())
        }
        (ParticipationType::Restricted, Some(c)) => {
            if !c.has_clause() {
                v.push("selection criteria need at least one clause".to_string());
            }
            if matches!(c.min_expertise, Some(m) if !m.is_positive()) {
                v.push("minExpertise must be positive".to_string());
            }
            if matches!(&c.allowed_viewpoints, Some(s) if s.is_empty()) {
                v.push("allowedViewpoints must not be empty".to_string());
            }
            if matches!(&c.explicit_user_ids, Some(s) if s.is_empty()) {
                v.push("explicitUserIds must not be empty".to_string());
            }
        }
        (ParticipationType::Democratic, None) => {}
    }
    let threshold = p.co_decision.threshold;
    if p.is_named("ConsentingTogether") {
        if threshold != AgreementThreshold::Strict {
            v.push("ConsentingTogether: strict threshold required".to_string());
        }
        if !p.is_iterative() {
            v.push("ConsentingTogether: iterative class required".to_string());
        }
    }
    if p.is_named("NegotiatingTogether") {
        if threshold == AgreementThreshold::Strict {
            v.push("NegotiatingTogether: threshold must be below strict".to_string());
        }
        if !p.is_iterative() {
            v.push("NegotiatingTogether: iterative class required".to_string());
        }
    }
    if p.is_named("MajorityDeciding") {
        if p.participation.kind != ParticipationType::Democratic {
            v.push("MajorityDeciding: democratic participation required".to_string());
        }
        if p.co_decision.process_kind != DecisionProcessKind::DirectVote {
            v.push("MajorityDeciding: directVote process required".to_string());
        }
        if p.is_iterative() {
            v.push("MajorityDeciding: single-election class required".to_string());
        }
    }
    for name in ["Delegating", "TakingAdvice"] {
        if p.is_named(name) && p.participation.kind != ParticipationType::Restricted {
            v.push(format!("{name}: restricted participation required"));
        }
    }
    if p.advisory {
        if p.is_iterative() {
            v.push("advisory policies are single-election".to_string());
        }
        let single = p
            .participation
            .criteria
            .as_ref()
            .and_then(|c| c.explicit_user_ids.as_ref())
            .is_some_and(|ids| ids.len() == 1);
        if !single {
            v.push("advisory policies name exactly one final decision maker in explicitUserIds".to_string());
        }
    }
    v
}

/// Users admitted by the policy's participation method.
pub fn eligible_decision_makers(
    users: &[InvolvedUser],
    policy: &DecisionPolicy,
) -> Result<BTreeSet<UserId>> {
    let moderator = users.iter().find(|u| u.is_moderator).map(|u| &u.user_id);
    let chosen: BTreeSet<UserId> = match (&policy.participation.kind, &policy.participation.criteria) {
        (ParticipationType::Democratic, _) => users.iter().map(|u| u.user_id.clone()).collect(),
        (ParticipationType::Restricted, Some(c)) => users
            .iter()
            .filter(|u| c.admits(u, moderator))
            .map(|u| u.user_id.clone())
            .collect(),
        (ParticipationType::Restricted, None) => {
            return Err(GdmError::InvalidPolicy(vec![
                "restricted participation requires selection criteria".into(),
            ]))
        }
    };
    if chosen.is_empty() {
        return Err(GdmError::NoEligibleActors);
    }
    Ok(chosen)
}

/// Per-collaboration adjustments accepted when a policy is chosen.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PolicyOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<AgreementThreshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub process_kind: Option<DecisionProcessKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preference_kind: Option<PreferenceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration_class: Option<IterationClass>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_rounds: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criteria: Option<SelectionCriteria>,
}

impl PolicyOverrides {
    pub fn apply(&self, base: &DecisionPolicy) -> DecisionPolicy {
        let mut p = base.clone();
        if let Some(t) = self.threshold {
            p.co_decision.threshold = t;
        }
        if let Some(k) = self.process_kind {
            p.co_decision.process_kind = k;
        }
        if let Some(k) = self.preference_kind {
            p.co_decision.preference_kind = k;
        }
        if let Some(c) = self.iteration_class {
            p.iteration_class = c;
            if c == IterationClass::SingleElection && self.max_rounds.is_none() {
                p.max_rounds = 1;
            } else if c == IterationClass::Iterative && self.max_rounds.is_none() && p.max_rounds == 1 {
                p.max_rounds = DEFAULT_MAX_ROUNDS;
            }
        }
        if let Some(n) = self.max_rounds {
            p.max_rounds = n;
        }
        if let Some(c) = &self.criteria {
            p.participation.criteria = Some(c.clone());
        }
        p
    }
}

pub const DEFAULT_MAX_ROUNDS: u32 = 5;

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

fn policy(
    id: &str,
    descriptor: PatternDescriptor,
    co_decision: CoDecisionMethod,
    participation: ParticipationMethod,
    iteration_class: IterationClass,
    advisory: bool,
) -> DecisionPolicy {
    let max_rounds = match iteration_class {
        IterationClass::Iterative => DEFAULT_MAX_ROUNDS,
        IterationClass::SingleElection => 1,
    };
    DecisionPolicy {
        policy_id: id.to_string(),
        descriptor,
        co_decision,
        participation,
        iteration_class,
        max_rounds,
        advisory,
    }
}

fn yes_no(process_kind: DecisionProcessKind, threshold: AgreementThreshold) -> CoDecisionMethod {
    CoDecisionMethod {
        process_kind,
        threshold,
        preference_kind: PreferenceKind::YesNo,
    }
}

/// The five policies shipped with every repository.
pub fn builtin_policies() -> Vec<DecisionPolicy> {
    use AgreementThreshold::*;
    use DecisionProcessKind::*;
    vec![
        policy(
            "Delegating",
            PatternDescriptor {
                name: "Delegating".into(),
                intent: "Hand the decision to a chosen subset of the group selected by explicit criteria."
                    .into(),
                applications: strings(&[
                    "A few members hold most of the relevant expertise.",
                    "The whole group cannot be consulted within the available time.",
                ]),
                solution: "The moderator states the selection criteria. Only the selected delegates \
                           evaluate the proposals, over one or several rounds, and their weighted \
                           verdict is final. Process kind and threshold may be tuned per collaboration."
                    .into(),
                known_uses: strings(&["Expert committees", "Technical review boards"]),
                related_patterns: strings(&["MajorityDeciding", "TakingAdvice"]),
            },
            yes_no(DirectVote, Medium),
            ParticipationMethod::restricted(SelectionCriteria {
                min_expertise: Some(Fraction::ONE),
                ..SelectionCriteria::default()
            }),
            IterationClass::Iterative,
            false,
        ),
        policy(
            "TakingAdvice",
            PatternDescriptor {
                name: "Taking Advice".into(),
                intent: "Let one accountable person decide after hearing non-binding advice from the others."
                    .into(),
                applications: strings(&[
                    "Accountability rests with a single role.",
                    "Input from peers is useful but must not bind the outcome.",
                ]),
                solution: "A single final decision maker is named in the criteria. Other involved users \
                           submit advice that is recorded but excluded from the tally. One round is held \
                           and the final decision maker's position is the outcome."
                    .into(),
                known_uses: strings(&["Architect sign-off after design review"]),
                related_patterns: strings(&["Delegating"]),
            },
            yes_no(DirectVote, Low),
            ParticipationMethod::restricted(SelectionCriteria {
                explicit_user_ids: Some([MODERATOR_SELECTOR.to_string()].into()),
                ..SelectionCriteria::default()
            }),
            IterationClass::SingleElection,
            true,
        ),
        policy(
            "MajorityDeciding",
            PatternDescriptor {
                name: "Majority Deciding".into(),
                intent: "Reach a decision that takes into account the opinions of all the stakeholders. \
                         The proposal(s) approved by the majority of the group is (are) adopted."
                    .into(),
                applications: strings(&[
                    "decision makers competencies and weights are almost equal.",
                    "time constraints: it requires less time since it is done in a single turn.",
                ]),
                solution: "This pattern enactment goes through five steps. First, the moderator defines \
                           the collaboration characteristics (intent and duration). Then, he/she sets the \
                           threshold and preferenceKind of the codecision method (the processKind is set to \
                           voteDirect). Afterwards, he/she notifies the actors concerned to whom he/she \
                           assigns the role decision maker. If the proposals are not already established, \
                           decision makers start by drawing up the list of proposals. Then, they express \
                           their individual preferences. At the end, a tool (or possibly the moderator) \
                           aggregates individual preferences and proposals exceeding the threshold are \
                           approved and constitute the group decision. Several proposals can be approved \
                           if they are not conflicting."
                    .into(),
                known_uses: strings(&[
                    "Single-round elections either held in face-to-face or by electronic vote.",
                ]),
                related_patterns: strings(&[
                    "Delegating",
                    "Majority Deciding and Delegating differ in the type of participation and the actors' \
                     weight. Delegating makes a prior choice of the involved actors while Majority deciding \
                     is democratic.",
                ]),
            },
            yes_no(DirectVote, Low),
            ParticipationMethod::democratic(),
            IterationClass::SingleElection,
            false,
        ),
        policy(
            "ConsentingTogether",
            PatternDescriptor {
                name: "Consenting Together".into(),
                intent: "Adopt only what every decision maker accepts.".into(),
                applications: strings(&[
                    "Outcomes that everyone must actively support.",
                    "Small groups with room for several rounds.",
                ]),
                solution: "All involved users evaluate. A proposal passes only with unanimous weighted \
                           approval. Proposals that fall short are revised and evaluated again, up to a \
                           bounded number of rounds."
                    .into(),
                known_uses: strings(&["Consent-based governance circles"]),
                related_patterns: strings(&["NegotiatingTogether"]),
            },
            yes_no(Consensus2Vote, Strict),
            ParticipationMethod::democratic(),
            IterationClass::Iterative,
            false,
        ),
        policy(
            "NegotiatingTogether",
            PatternDescriptor {
                name: "Negotiating Together".into(),
                intent: "Converge through successive revisions on proposals that a large share of the group accepts."
                    .into(),
                applications: strings(&[
                    "Diverging viewpoints that can be bridged by reworking proposals.",
                    "Unanimity is unrealistic but a broad agreement is needed.",
                ]),
                solution: "All involved users evaluate. Proposals below the agreed threshold go back for \
                           adjustment and a new round, until they pass or the round budget is spent."
                    .into(),
                known_uses: strings(&["Standards working groups"]),
                related_patterns: strings(&["ConsentingTogether", "MajorityDeciding"]),
            },
            yes_no(Negotiation2Vote, High),
            ParticipationMethod::democratic(),
            IterationClass::Iterative,
            false,
        ),
    ]
}

/// Registry of policies keyed by normalized name. Reads run concurrently;
/// registration takes the write lock.
#[derive(Debug)]
pub struct PolicyRepository {
    policies: RwLock<BTreeMap<String, DecisionPolicy>>,
}

impl Default for PolicyRepository {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl PolicyRepository {
    pub fn empty() -> Self {
        PolicyRepository {
            policies: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn with_builtins() -> Self {
        let repo = Self::empty();
        for p in builtin_policies() {
            repo.register(p).expect("builtin policies are valid");
        }
        repo
    }

    pub fn register(&self, policy: DecisionPolicy) -> Result<()> {
        let violations = validate_policy(&policy);
        if !violations.is_empty() {
            return Err(GdmError::InvalidPolicy(violations));
        }
        let id_key = normalize_name(&policy.policy_id);
        let name_key = normalize_name(&policy.descriptor.name);
        let mut map = self.policies.write();
        let clash = map.contains_key(&id_key)
            || map.contains_key(&name_key)
            || map.values().any(|p| normalize_name(&p.descriptor.name) == name_key);
        if clash {
            return Err(GdmError::DuplicatePolicy(policy.policy_id));
        }
        map.insert(id_key, policy);
        Ok(())
    }

    /// Looks up by policy id or descriptor name.
    pub fn get(&self, name: &str) -> Result<DecisionPolicy> {
        let key = normalize_name(name);
        let map = self.policies.read();
        map.get(&key)
            .or_else(|| map.values().find(|p| normalize_name(&p.descriptor.name) == key))
            .cloned()
            .ok_or_else(|| GdmError::UnknownPolicy(name.to_string()))
    }

    pub fn describe(&self, name: &str) -> Result<PatternDescriptor> {
        self.get(name).map(|p| p.descriptor)
    }

    pub fn list(&self) -> Vec<DecisionPolicy> {
        self.policies.read().values().cloned().collect()
    }
}
