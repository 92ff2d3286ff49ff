//! Turns the binding decisions of a closed round into collective outcomes.
//!
//! Everything here is a pure function of its inputs and uses exact rational
//! arithmetic, so outcomes never depend on floating point rounding.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::domain::{AgreementKind, Collaboration, CollectiveDecision, Decision};
use crate::error::{GdmError, QuorumDeficit, Result};
use crate::fraction::Fraction;
use crate::ids::{ProposalId, UserId};
use crate::policy::{AgreementThreshold, PreferenceKind};
use crate::time::Timestamp;

/// Numeric values of the named threshold levels. Strict is always 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThresholdValues {
    pub low: Fraction,
    pub medium: Fraction,
    pub high: Fraction,
}

impl Default for ThresholdValues {
    fn default() -> Self {
        ThresholdValues {
            low: Fraction::new(1, 2).unwrap(),
            medium: Fraction::new(2, 3).unwrap(),
            high: Fraction::new(4, 5).unwrap(),
        }
    }
}

impl ThresholdValues {
    pub fn value(&self, level: AgreementThreshold) -> Fraction {
        match level {
            AgreementThreshold::Low => self.low,
            AgreementThreshold::Medium => self.medium,
            AgreementThreshold::High => self.high,
            AgreementThreshold::Strict => Fraction::ONE,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("low", self.low), ("medium", self.medium), ("high", self.high)] {
            if !v.is_positive() || v > Fraction::ONE {
                return Err(GdmError::InvalidThreshold(format!("{name} must lie in (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn rule(&self, level: AgreementThreshold) -> ThresholdRule {
        ThresholdRule {
            level,
            value: self.value(level),
        }
    }
}

/// A named level together with the value it resolved to when the policy was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThresholdRule {
    pub level: AgreementThreshold,
    pub value: Fraction,
}

impl ThresholdRule {
    pub fn effective(&self, threshold_override: Option<Fraction>) -> Fraction {
        threshold_override.unwrap_or(self.value)
    }

    /// Low is exceeded strictly, strict needs exactly 1, the rest are met
    /// with `>=`. An override is always met with `>=`.
    pub fn meets(&self, score: Fraction, threshold_override: Option<Fraction>) -> bool {
        if let Some(v) = threshold_override {
            return score >= v;
        }
        match self.level {
            AgreementThreshold::Low => score > self.value,
            AgreementThreshold::Strict => score == Fraction::ONE,
            AgreementThreshold::Medium | AgreementThreshold::High => score >= self.value,
        }
    }
}

/// Default numeric mapping of a level.
pub fn threshold_value(level: AgreementThreshold) -> Fraction {
    ThresholdValues::default().value(level)
}

/// `meets` under the default mapping.
pub fn meets(score: Fraction, level: AgreementThreshold, threshold_override: Option<Fraction>) -> bool {
    ThresholdValues::default().rule(level).meets(score, threshold_override)
}

/// Kind used for tallying: yes/no keeps the submitted kind, ratings map
/// 4..=5 to approval, 1..=2 to reject and 3 to refinement.
pub fn derive_kind(d: &Decision, pref: PreferenceKind) -> AgreementKind {
    match (pref, d.rating) {
        (PreferenceKind::Rating, Some(r)) if r >= 4 => AgreementKind::Approval,
        (PreferenceKind::Rating, Some(r)) if r <= 2 => AgreementKind::Reject,
        (PreferenceKind::Rating, Some(_)) => AgreementKind::Refinement,
        _ => d.kind,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum DerivedOutcome {
    Approved,
    NotApproved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoundTally {
    pub proposal_id: ProposalId,
    pub round: u32,
    pub weighted_approval: Fraction,
    pub total_weight: Fraction,
    pub score: Fraction,
    pub derived_outcome: DerivedOutcome,
    pub voter_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_rating: Option<Fraction>,
}

/// Weighted share of approvals among the submitted binding decisions.
/// Abstainers count in neither sum. `derived_outcome` is left at
/// `NotApproved` until a threshold is applied.
pub fn approval_score(
    proposal_id: &ProposalId,
    round: u32,
    decisions: &[&Decision],
    weights: &BTreeMap<UserId, Fraction>,
    pref: PreferenceKind,
) -> Result<RoundTally> {
    let relevant = decisions
        .iter()
        .copied()
        .filter(|d| d.binding && d.proposal_id == *proposal_id);
    tally(proposal_id, round, relevant, weights, pref)
}

fn tally<'d>(
    proposal_id: &ProposalId,
    round: u32,
    decisions: impl Iterator<Item = &'d Decision>,
    weights: &BTreeMap<UserId, Fraction>,
    pref: PreferenceKind,
) -> Result<RoundTally> {
    let mut approval = Fraction::ZERO;
    let mut total = Fraction::ZERO;
    let mut rating_sum = Fraction::ZERO;
    let mut rated_weight = Fraction::ZERO;
    let mut voters = 0;
    for d in decisions {
        let w = *weights
            .get(&d.decision_maker_id)
            .ok_or_else(|| GdmError::UnknownUser(d.decision_maker_id.clone()))?;
        voters += 1;
        total = total + w;
        if derive_kind(d, pref) == AgreementKind::Approval {
            approval = approval + w;
        }
        if let Some(r) = d.rating {
            rating_sum = rating_sum + w * Fraction::from_integer(r as i128);
            rated_weight = rated_weight + w;
        }
    }
    if voters == 0 {
        return Err(GdmError::EmptyRound(proposal_id.clone()));
    }
    let mean_rating = (pref == PreferenceKind::Rating && rated_weight.is_positive())
        .then(|| rating_sum / rated_weight);
    Ok(RoundTally {
        proposal_id: proposal_id.clone(),
        round,
        weighted_approval: approval,
        total_weight: total,
        score: approval / total,
        derived_outcome: DerivedOutcome::NotApproved,
        voter_count: voters,
        mean_rating,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Verdict {
    /// Met the threshold and won its conflict set, if any.
    Approved,
    /// The non-approving share alone meets the threshold.
    Rejected,
    /// Neither side reached the threshold.
    Undecided,
    /// Lost to another member of its conflict set.
    ConflictEliminated,
}

impl Verdict {
    pub fn final_decision(&self) -> CollectiveDecision {
        match self {
            Verdict::Approved => CollectiveDecision::Approved,
            Verdict::Rejected | Verdict::ConflictEliminated => CollectiveDecision::Rejected,
            Verdict::Undecided => CollectiveDecision::Pending,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProposalOutcome {
    pub proposal_id: ProposalId,
    pub round: u32,
    pub tally: RoundTally,
    pub threshold: Fraction,
    pub meets: bool,
    pub verdict: Verdict,
    /// Other members of the conflict set, empty when unconstrained.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflict_set: Vec<ProposalId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict_winner: Option<ProposalId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RoundOutcome {
    pub round: u32,
    pub outcomes: BTreeMap<ProposalId, ProposalOutcome>,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ProposalRef<'a> {
    pub id: &'a ProposalId,
    pub created_at: Timestamp,
    pub conflicts_with: &'a BTreeSet<ProposalId>,
}

/// Everything aggregation needs to know about one closed round.
#[derive(Debug, Clone)]
pub struct RoundInput<'a> {
    pub round: u32,
    pub proposals: Vec<ProposalRef<'a>>,
    /// Decisions of the round in arrival order; later ones win.
    pub decisions: Vec<&'a Decision>,
    pub weights: &'a BTreeMap<UserId, Fraction>,
    pub eligible: &'a BTreeSet<UserId>,
    pub preference: PreferenceKind,
    pub rule: ThresholdRule,
    pub threshold_override: Option<Fraction>,
}

impl<'a> RoundInput<'a> {
    /// Builds the input for `round` from the collaboration's evaluable proposals.
    pub fn from_collaboration(
        collab: &'a Collaboration,
        weights: &'a BTreeMap<UserId, Fraction>,
        round: u32,
    ) -> Result<Self> {
        let rule = collab
            .threshold
            .ok_or_else(|| GdmError::InvalidCommand("no policy has been chosen".into()))?;
        let preference = collab
            .preference_kind()
            .ok_or_else(|| GdmError::InvalidCommand("no policy has been chosen".into()))?;
        Ok(RoundInput {
            round,
            proposals: collab
                .proposals
                .evaluable()
                .map(|p| ProposalRef {
                    id: &p.proposal_id,
                    created_at: p.created_at,
                    conflicts_with: &p.conflicts_with,
                })
                .collect(),
            decisions: collab.decisions_in_round(round).collect(),
            weights,
            eligible: &collab.eligible_dms,
            preference,
            rule,
            threshold_override: collab.threshold_override,
        })
    }

    /// Position of each proposal in `proposals`.
    fn index(&self) -> BTreeMap<&'a ProposalId, usize> {
        self.proposals.iter().enumerate().map(|(i, p)| (p.id, i)).collect()
    }

    /// The last binding decision of each eligible actor on each listed
    /// proposal, grouped by proposal index.
    fn effective_decisions(&self, index: &BTreeMap<&'a ProposalId, usize>) -> Vec<(usize, &'a Decision)> {
        let mut latest: Vec<(usize, usize, &'a Decision)> = self
            .decisions
            .iter()
            .enumerate()
            .filter(|(_, d)| d.binding && d.round == self.round && self.eligible.contains(&d.decision_maker_id))
            .filter_map(|(arrival, d)| index.get(&d.proposal_id).map(|p| (*p, arrival, *d)))
            .collect();
        // Newest first within each (proposal, actor) group, so dedup keeps it.
        latest.sort_unstable_by(|a, b| {
            a.0.cmp(&b.0)
                .then_with(|| a.2.decision_maker_id.cmp(&b.2.decision_maker_id))
                .then(b.1.cmp(&a.1))
        });
        latest.dedup_by(|later, kept| later.0 == kept.0 && later.2.decision_maker_id == kept.2.decision_maker_id);
        latest.into_iter().map(|(p, _, d)| (p, d)).collect()
    }
}

/// Splits decisions grouped by proposal index into one slice per proposal.
fn per_proposal<'d, 'a>(count: usize, latest: &'d [(usize, &'a Decision)]) -> Vec<&'d [(usize, &'a Decision)]> {
    let mut out = Vec::with_capacity(count);
    let mut rest = latest;
    for i in 0..count {
        let n = rest.iter().take_while(|(p, _)| *p == i).count();
        let (head, tail) = rest.split_at(n);
        out.push(head);
        rest = tail;
    }
    out
}

/// Binding voters needed per proposal: half the eligible actors, rounded up.
pub fn quorum_size(eligible: usize) -> usize {
    eligible.div_ceil(2)
}

pub fn quorum_deficits(input: &RoundInput<'_>) -> Vec<QuorumDeficit> {
    let latest = input.effective_decisions(&input.index());
    deficits(input, &per_proposal(input.proposals.len(), &latest))
}

fn deficits(input: &RoundInput<'_>, groups: &[&[(usize, &Decision)]]) -> Vec<QuorumDeficit> {
    let required = quorum_size(input.eligible.len());
    input
        .proposals
        .iter()
        .zip(groups)
        .filter(|(_, g)| g.len() < required)
        .map(|(p, g)| QuorumDeficit {
            proposal_id: p.id.clone(),
            voters: g.len(),
            required,
        })
        .collect()
}

/// Scores every proposal, applies the threshold, resolves conflict sets and
/// reports whether the round converged.
pub fn aggregate(input: &RoundInput<'_>) -> Result<RoundOutcome> {
    if input.proposals.is_empty() {
        return Err(GdmError::NoProposals);
    }
    let index = input.index();
    let latest = input.effective_decisions(&index);
    let groups = per_proposal(input.proposals.len(), &latest);
    let short = deficits(input, &groups);
    if !short.is_empty() {
        return Err(GdmError::QuorumNotReached(short));
    }
    let threshold = input.rule.effective(input.threshold_override);

    let mut outcomes = Vec::with_capacity(input.proposals.len());
    for (p, group) in input.proposals.iter().zip(&groups) {
        let mut tally = tally(p.id, input.round, group.iter().map(|(_, d)| *d), input.weights, input.preference)?;
        let ok = input.rule.meets(tally.score, input.threshold_override);
        if ok {
            tally.derived_outcome = DerivedOutcome::Approved;
        }
        let verdict = if ok {
            Verdict::Approved
        } else if input.rule.meets(Fraction::ONE - tally.score, input.threshold_override) {
            Verdict::Rejected
        } else {
            Verdict::Undecided
        };
        outcomes.push(ProposalOutcome {
            proposal_id: p.id.clone(),
            round: input.round,
            tally,
            threshold,
            meets: ok,
            verdict,
            conflict_set: Vec::new(),
            conflict_winner: None,
        });
    }

    for set in components(&input.proposals, &index) {
        let winner = set
            .iter()
            .copied()
            .filter(|i| outcomes[*i].meets)
            .min_by(|&a, &b| {
                let (oa, ob) = (&outcomes[a].tally, &outcomes[b].tally);
                ob.score
                    .cmp(&oa.score)
                    .then_with(|| cmp_rating(ob.mean_rating, oa.mean_rating))
                    .then_with(|| input.proposals[a].created_at.cmp(&input.proposals[b].created_at))
                    .then_with(|| input.proposals[a].id.cmp(input.proposals[b].id))
            });
        for &i in &set {
            let o = &mut outcomes[i];
            o.conflict_set = set.iter().filter(|x| **x != i).map(|x| input.proposals[*x].id.clone()).collect();
            o.conflict_winner = winner.map(|w| input.proposals[w].id.clone());
            if winner.is_some_and(|w| w != i) {
                o.verdict = Verdict::ConflictEliminated;
            }
        }
    }

    let converged = outcomes.iter().all(|o| o.verdict != Verdict::Undecided);
    Ok(RoundOutcome {
        round: input.round,
        outcomes: outcomes.into_iter().map(|o| (o.proposal_id.clone(), o)).collect(),
        converged,
    })
}

fn cmp_rating(a: Option<Fraction>, b: Option<Fraction>) -> Ordering {
    match (a, b) {
        (Some(x), Some(y)) => x.cmp(&y),
        _ => Ordering::Equal,
    }
}

/// Root of `x` under union-find with path halving.
fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Conflict components with at least two members, as proposal indices
/// sorted by id. Edges to proposals outside the list are ignored.
fn components(proposals: &[ProposalRef<'_>], index: &BTreeMap<&ProposalId, usize>) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..proposals.len()).collect();
    let mut linked = false;
    for (i, p) in proposals.iter().enumerate() {
        for other in p.conflicts_with {
            if let Some(&j) = index.get(other) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                    linked = true;
                }
            }
        }
    }
    if !linked {
        return Vec::new();
    }
    let mut sets: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..proposals.len() {
        let root = find(&mut parent, i);
        sets.entry(root).or_default().push(i);
    }
    sets.into_values()
        .filter(|s| s.len() > 1)
        .map(|mut s| {
            s.sort_by(|a, b| proposals[*a].id.cmp(proposals[*b].id));
            s
        })
        .collect()
}

/// Connected components of the conflict graph restricted to the given
/// proposals, each sorted, in order of their smallest member.
pub fn conflict_sets<'a>(proposals: &[ProposalRef<'a>]) -> Vec<Vec<&'a ProposalId>> {
    let index: BTreeMap<&ProposalId, usize> = proposals.iter().enumerate().map(|(i, p)| (p.id, i)).collect();
    let mut parent: Vec<usize> = (0..proposals.len()).collect();
    for (i, p) in proposals.iter().enumerate() {
        for other in p.conflicts_with {
            if let Some(&j) = index.get(other) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a] = b;
            }
        }
    }
    let mut sets: BTreeMap<usize, Vec<&'a ProposalId>> = BTreeMap::new();
    for (i, p) in proposals.iter().enumerate() {
        let root = find(&mut parent, i);
        sets.entry(root).or_default().push(p.id);
    }
    let mut sets: Vec<Vec<&'a ProposalId>> = sets
        .into_values()
        .map(|mut s| {
            s.sort();
            s
        })
        .collect();
    sets.sort();
    sets
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Comment;

    fn frac(s: &str) -> Fraction {
        s.parse().unwrap()
    }

    fn decision(dm: &str, p: &str, kind: AgreementKind) -> Decision {
        let at = Timestamp::from_millis(0);
        Decision {
            decision_maker_id: dm.into(),
            proposal_id: p.into(),
            round: 1,
            kind,
            rating: None,
            comment: (kind == AgreementKind::Reject).then(|| Comment::new(dm.into(), "no", at).unwrap()),
            alternative_id: None,
            submitted_at: at,
            binding: true,
        }
    }

    fn weights(ws: &[(&str, &str)]) -> BTreeMap<UserId, Fraction> {
        ws.iter().map(|(u, w)| (UserId::from(*u), frac(w))).collect()
    }

    #[test]
    fn threshold_values() {
        assert_eq!(threshold_value(AgreementThreshold::Strict), Fraction::ONE);
        assert_eq!(threshold_value(AgreementThreshold::High), frac("0.8"));
        assert_eq!(threshold_value(AgreementThreshold::Medium), frac("2/3"));
        assert_eq!(threshold_value(AgreementThreshold::Low), frac("1/2"));
    }

    /// Every split k approvals out of n equal voters, n <= 6, checked against
    /// integer cross-multiplication.
    #[test]
    fn meets_matches_vote_tables() {
        for n in 1..=6i128 {
            for k in 0..=n {
                let score = Fraction::new(k, n).unwrap();
                assert_eq!(meets(score, AgreementThreshold::Low, None), 2 * k > n);
                assert_eq!(meets(score, AgreementThreshold::Medium, None), 3 * k >= 2 * n);
                assert_eq!(meets(score, AgreementThreshold::High, None), 5 * k >= 4 * n);
                assert_eq!(meets(score, AgreementThreshold::Strict, None), k == n);
            }
        }
        assert!(!meets(frac("0.6"), AgreementThreshold::High, None));
        assert!(!meets(frac("0.5"), AgreementThreshold::Low, None));
        assert!(meets(frac("0.51"), AgreementThreshold::Low, None));
        assert!(meets(frac("0.6"), AgreementThreshold::High, Some(frac("0.5"))));
        assert!(meets(frac("0.5"), AgreementThreshold::Low, Some(frac("0.5"))));
    }

    #[test]
    fn rating_mapping_is_exhaustive() {
        let mut d = decision("a", "p", AgreementKind::Approval);
        for r in 1..=5u8 {
            d.rating = Some(r);
            let expected = match r {
                4 | 5 => AgreementKind::Approval,
                3 => AgreementKind::Refinement,
                _ => AgreementKind::Reject,
            };
            assert_eq!(derive_kind(&d, PreferenceKind::Rating), expected);
            assert_eq!(derive_kind(&d, PreferenceKind::YesNo), AgreementKind::Approval);
        }
    }

    #[test]
    fn scores() {
        let w = weights(&[("a", "1"), ("b", "1"), ("c", "1"), ("d", "1"), ("e", "1")]);
        let ds: Vec<Decision> = ["a", "b", "c"]
            .iter()
            .map(|u| decision(u, "p", AgreementKind::Approval))
            .chain(["d", "e"].iter().map(|u| decision(u, "p", AgreementKind::Reject)))
            .collect();
        let refs: Vec<&Decision> = ds.iter().collect();
        let t = approval_score(&"p".into(), 1, &refs, &w, PreferenceKind::YesNo).unwrap();
        assert_eq!(t.score, frac("3/5"));
        assert_eq!(t.voter_count, 5);

        let w = weights(&[("a", "2"), ("b", "1"), ("c", "1")]);
        let ds = [
            decision("a", "p", AgreementKind::Approval),
            decision("b", "p", AgreementKind::Reject),
            decision("c", "p", AgreementKind::Refinement),
        ];
        let refs: Vec<&Decision> = ds.iter().collect();
        let t = approval_score(&"p".into(), 1, &refs, &w, PreferenceKind::YesNo).unwrap();
        assert_eq!(t.score, frac("1/2"));
        assert_eq!(t.total_weight, frac("4"));

        assert_eq!(
            approval_score(&"p".into(), 1, &[], &w, PreferenceKind::YesNo),
            Err(GdmError::EmptyRound("p".into()))
        );
    }

    struct Fixture {
        ids: Vec<ProposalId>,
        conflicts: Vec<BTreeSet<ProposalId>>,
        created: Vec<Timestamp>,
        decisions: Vec<Decision>,
        weights: BTreeMap<UserId, Fraction>,
        eligible: BTreeSet<UserId>,
    }

    impl Fixture {
        fn new(props: &[&str], voters: &[&str]) -> Self {
            Fixture {
                ids: props.iter().map(|p| ProposalId::from(*p)).collect(),
                conflicts: props.iter().map(|_| BTreeSet::new()).collect(),
                created: (0..props.len()).map(|i| Timestamp::from_millis(i as i64)).collect(),
                decisions: Vec::new(),
                weights: voters.iter().map(|v| (UserId::from(*v), Fraction::ONE)).collect(),
                eligible: voters.iter().map(|v| UserId::from(*v)).collect(),
            }
        }

        fn conflict(&mut self, a: usize, b: usize) {
            let (ia, ib) = (self.ids[a].clone(), self.ids[b].clone());
            self.conflicts[a].insert(ib);
            self.conflicts[b].insert(ia);
        }

        fn run(&self, level: AgreementThreshold) -> Result<RoundOutcome> {
            let input = RoundInput {
                round: 1,
                proposals: (0..self.ids.len())
                    .map(|i| ProposalRef {
                        id: &self.ids[i],
                        created_at: self.created[i],
                        conflicts_with: &self.conflicts[i],
                    })
                    .collect(),
                decisions: self.decisions.iter().collect(),
                weights: &self.weights,
                eligible: &self.eligible,
                preference: PreferenceKind::YesNo,
                rule: ThresholdValues::default().rule(level),
                threshold_override: None,
            };
            aggregate(&input)
        }
    }

    #[test]
    fn conflictual_alternative_beats_its_original() {
        let mut f = Fixture::new(&["ep", "ap"], &["a", "b", "c", "d", "e"]);
        f.conflict(0, 1);
        for (i, v) in ["a", "b", "c", "d", "e"].iter().enumerate() {
            let ep = if i < 2 { AgreementKind::Approval } else { AgreementKind::Reject };
            f.decisions.push(decision(v, "ep", ep));
            f.decisions.push(decision(v, "ap", AgreementKind::Approval));
        }
        let out = f.run(AgreementThreshold::High).unwrap();
        assert_eq!(out.outcomes[&ProposalId::from("ap")].verdict, Verdict::Approved);
        assert_eq!(out.outcomes[&ProposalId::from("ep")].verdict, Verdict::ConflictEliminated);
        assert!(out.converged);
    }

    #[test]
    fn conflict_set_with_no_contender_keeps_individual_verdicts() {
        let mut f = Fixture::new(&["x", "y"], &["a", "b"]);
        f.conflict(0, 1);
        f.decisions.push(decision("a", "x", AgreementKind::Reject));
        f.decisions.push(decision("b", "x", AgreementKind::Reject));
        f.decisions.push(decision("a", "y", AgreementKind::Approval));
        f.decisions.push(decision("b", "y", AgreementKind::Reject));
        let out = f.run(AgreementThreshold::Low).unwrap();
        assert_eq!(out.outcomes[&ProposalId::from("x")].verdict, Verdict::Rejected);
        assert_eq!(out.outcomes[&ProposalId::from("y")].verdict, Verdict::Undecided);
        assert!(!out.converged);
    }

    /// Equal scores: over every creation order, the earliest proposal wins,
    /// and equal creation times fall back to the smaller id.
    #[test]
    fn tie_break_over_permutations() {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for perm in perms {
            let mut f = Fixture::new(&["p", "q", "r"], &["a"]);
            f.conflict(0, 1);
            f.conflict(1, 2);
            for (i, slot) in perm.iter().enumerate() {
                f.created[i] = Timestamp::from_millis(*slot as i64);
            }
            for p in ["p", "q", "r"] {
                f.decisions.push(decision("a", p, AgreementKind::Approval));
            }
            let out = f.run(AgreementThreshold::Medium).unwrap();
            let earliest = perm.iter().position(|s| *s == 0).unwrap();
            let winners: Vec<_> = out
                .outcomes
                .values()
                .filter(|o| o.verdict == Verdict::Approved)
                .map(|o| o.proposal_id.clone())
                .collect();
            assert_eq!(winners, vec![f.ids[earliest].clone()], "{perm:?}");
        }
        let mut f = Fixture::new(&["q", "p"], &["a"]);
        f.created = vec![Timestamp::from_millis(5); 2];
        f.conflict(0, 1);
        f.decisions.push(decision("a", "p", AgreementKind::Approval));
        f.decisions.push(decision("a", "q", AgreementKind::Approval));
        let out = f.run(AgreementThreshold::Low).unwrap();
        assert_eq!(out.outcomes[&ProposalId::from("p")].verdict, Verdict::Approved);
    }

    #[test]
    fn higher_mean_rating_breaks_score_ties() {
        let mut f = Fixture::new(&["p", "q"], &["a", "b"]);
        f.conflict(0, 1);
        let rated = |dm: &str, p: &str, r: u8| {
            let mut d = decision(dm, p, AgreementKind::Approval);
            d.rating = Some(r);
            d
        };
        f.decisions = vec![rated("a", "p", 4), rated("b", "p", 4), rated("a", "q", 5), rated("b", "q", 4)];
        let input = RoundInput {
            round: 1,
            proposals: (0..2)
                .map(|i| ProposalRef {
                    id: &f.ids[i],
                    created_at: f.created[i],
                    conflicts_with: &f.conflicts[i],
                })
                .collect(),
            decisions: f.decisions.iter().collect(),
            weights: &f.weights,
            eligible: &f.eligible,
            preference: PreferenceKind::Rating,
            rule: ThresholdValues::default().rule(AgreementThreshold::High),
            threshold_override: None,
        };
        let out = aggregate(&input).unwrap();
        assert_eq!(out.outcomes[&ProposalId::from("q")].verdict, Verdict::Approved);
        assert_eq!(out.outcomes[&ProposalId::from("p")].verdict, Verdict::ConflictEliminated);
    }

    #[test]
    fn quorum_and_last_write_wins() {
        let mut f = Fixture::new(&["p"], &["a", "b", "c", "d"]);
        f.decisions.push(decision("a", "p", AgreementKind::Approval));
        match f.run(AgreementThreshold::Low) {
            Err(GdmError::QuorumNotReached(d)) => {
                assert_eq!(d, vec![QuorumDeficit { proposal_id: "p".into(), voters: 1, required: 2 }])
            }
            other => panic!("{other:?}"),
        }
        f.decisions.push(decision("b", "p", AgreementKind::Reject));
        f.decisions.push(decision("b", "p", AgreementKind::Approval));
        let out = f.run(AgreementThreshold::Strict).unwrap();
        assert_eq!(out.outcomes[&ProposalId::from("p")].tally.score, Fraction::ONE);
    }

    #[test]
    fn non_binding_advice_is_ignored() {
        let mut f = Fixture::new(&["p"], &["boss"]);
        f.weights.insert("adv".into(), Fraction::ONE);
        let mut advice = decision("adv", "p", AgreementKind::Reject);
        advice.binding = false;
        f.decisions.push(advice);
        f.decisions.push(decision("boss", "p", AgreementKind::Approval));
        let out = f.run(AgreementThreshold::Low).unwrap();
        assert_eq!(out.outcomes[&ProposalId::from("p")].tally.voter_count, 1);
        assert_eq!(out.outcomes[&ProposalId::from("p")].verdict, Verdict::Approved);
    }

    #[test]
    fn conflict_sets_are_components() {
        let mut f = Fixture::new(&["a", "b", "c", "d"], &["x"]);
        f.conflict(0, 1);
        f.conflict(1, 2);
        let refs: Vec<ProposalRef> = (0..4)
            .map(|i| ProposalRef {
                id: &f.ids[i],
                created_at: f.created[i],
                conflicts_with: &f.conflicts[i],
            })
            .collect();
        let sets = conflict_sets(&refs);
        assert_eq!(sets.len(), 2);
        assert_eq!(sets[0].len(), 3);
        assert_eq!(sets[1], vec![&f.ids[3]]);
    }
}
