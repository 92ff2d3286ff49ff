//! Per-proposal evaluation summary: one row per proposal with its body,
//! author, each decision maker's position and the collective decision.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::aggregation::Verdict;
use crate::domain::{AgreementKind, Collaboration, CollaborativeWorkProduct, CollectiveDecision, ProposalKind};
use crate::error::{GdmError, Result};
use crate::fraction::Fraction;
use crate::ids::{CollaborationId, ProposalId, UserId};
use crate::lifecycle::LifecycleState;
use crate::policy::AgreementThreshold;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecisionCell {
    pub kind: AgreementKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternative_id: Option<ProposalId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProposalRow {
    pub proposal_id: ProposalId,
    #[serde(rename = "type")]
    pub kind: String,
    pub body: String,
    pub author: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refines: Option<ProposalId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conflicts_with: Vec<ProposalId>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<ProposalId>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub withdrawn: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<u32>,
    /// Binding decisions by decision maker; abstainers are absent.
    pub decisions: BTreeMap<UserId, DecisionCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<Fraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Fraction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflict_winner: Option<ProposalId>,
    pub collective_decision: CollectiveDecision,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Totals {
    pub approved: usize,
    pub rejected: usize,
    pub unresolved: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DecisionMakerColumn {
    pub user_id: UserId,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub collaboration_id: CollaborationId,
    pub intent: String,
    pub state: LifecycleState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_level: Option<AgreementThreshold>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Fraction>,
    pub round: u32,
    pub decision_makers: Vec<DecisionMakerColumn>,
    pub proposals: Vec<ProposalRow>,
    pub totals: Totals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub work_product: Option<CollaborativeWorkProduct>,
}

impl Summary {
    pub fn of(c: &Collaboration) -> Self {
        let name = |id: &UserId| c.user(id).map_or_else(|| id.to_string(), |u| u.display_name.clone());
        let mut proposals: Vec<_> = c.proposals.iter().collect();
        proposals.sort_by(|a, b| (a.created_at, &a.proposal_id).cmp(&(b.created_at, &b.proposal_id)));
        let mut totals = Totals::default();
        let rows = proposals
            .into_iter()
            .map(|p| {
                match p.collective_decision {
                    CollectiveDecision::Approved => totals.approved += 1,
                    CollectiveDecision::Rejected => totals.rejected += 1,
                    CollectiveDecision::Unresolved => totals.unresolved += 1,
                    CollectiveDecision::Pending => totals.pending += 1,
                }
                let result = c.results.get(&p.proposal_id);
                let round = result.map(|r| r.round).or_else(|| {
                    c.decisions
                        .iter()
                        .filter(|d| d.proposal_id == p.proposal_id)
                        .map(|d| d.round)
                        .max()
                });
                let mut decisions = BTreeMap::new();
                if let Some(round) = round {
                    for d in c.decisions_in_round(round) {
                        if d.proposal_id == p.proposal_id && d.binding {
                            decisions.insert(
                                d.decision_maker_id.clone(),
                                DecisionCell {
                                    kind: d.kind,
                                    rating: d.rating,
                                    comment: d.comment.as_ref().map(|c| c.text.clone()),
                                    alternative_id: d.alternative_id.clone(),
                                },
                            );
                        }
                    }
                }
                let (refines, children) = match &p.kind {
                    ProposalKind::Alternative { refines, .. } => (Some(refines.clone()), Vec::new()),
                    ProposalKind::Composite { children } => (None, children.clone()),
                    ProposalKind::Elementary { .. } => (None, Vec::new()),
                };
                ProposalRow {
                    proposal_id: p.proposal_id.clone(),
                    kind: p.type_name().to_string(),
                    body: p.body().map_or_else(|| p.title.clone(), |b| b.text.clone()),
                    author: name(&p.author_id),
                    refines,
                    conflicts_with: p.conflicts_with.iter().cloned().collect(),
                    children,
                    withdrawn: p.withdrawn,
                    round,
                    decisions,
                    score: result.map(|r| r.tally.score),
                    threshold: result.map(|r| r.threshold),
                    verdict: result.map(|r| r.verdict),
                    conflict_winner: result.and_then(|r| r.conflict_winner.clone()),
                    collective_decision: p.collective_decision,
                }
            })
            .collect();
        Summary {
            collaboration_id: c.collaboration_id.clone(),
            intent: c.intent.clone(),
            state: c.state,
            policy: c.adopted_policy_id.clone(),
            threshold_level: c.threshold.map(|t| t.level),
            threshold: c.threshold.map(|t| t.effective(c.threshold_override)),
            round: c.current_round,
            decision_makers: c
                .eligible_dms
                .iter()
                .map(|id| DecisionMakerColumn {
                    user_id: id.clone(),
                    display_name: name(id),
                })
                .collect(),
            proposals: rows,
            totals,
            work_product: c.work_product.clone(),
        }
    }

    /// Closed with nothing left unresolved or pending.
    pub fn converged(&self) -> bool {
        self.state == LifecycleState::Closed && self.totals.unresolved == 0 && self.totals.pending == 0
    }

    pub fn row_by_body(&self, body: &str) -> Option<&ProposalRow> {
        self.proposals.iter().find(|r| r.body == body)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["proposal".to_string(), "type".into(), "author".into()];
        h.extend(self.decision_makers.iter().map(|d| d.display_name.clone()));
        h.extend(["score".to_string(), "collectiveDecision".into()]);
        h
    }

    fn cells(&self, row: &ProposalRow) -> Vec<String> {
        let mut cells = vec![row.body.clone(), row.kind.clone(), row.author.clone()];
        for dm in &self.decision_makers {
            cells.push(row.decisions.get(&dm.user_id).map_or(String::new(), |d| d.kind.as_str().to_string()));
        }
        cells.push(row.score.map_or(String::new(), score_text));
        cells.push(row.collective_decision.as_str().to_string());
        cells
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| GdmError::Storage(e.to_string());
        w.write_record(self.header()).map_err(io)?;
        for row in &self.proposals {
            w.write_record(self.cells(row)).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| GdmError::Storage(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| GdmError::Storage(e.to_string()))
    }

    pub fn to_markdown(&self) -> String {
        let esc = |s: &str| s.replace('|', "\\|");
        let mut out = String::new();
        let header = self.header();
        let _ = writeln!(out, "| {} |", header.iter().map(|h| esc(h)).collect::<Vec<_>>().join(" | "));
        let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
        for row in &self.proposals {
            let cells = self.cells(row);
            let _ = writeln!(out, "| {} |", cells.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
        }
        out
    }
}

/// Decimal when exact in at most four places, `n/d` otherwise.
pub fn score_text(score: Fraction) -> String {
    match score.to_decimal_string() {
        Some(s) if s.split('.').nth(1).is_none_or(|frac| frac.len() <= 4) => s,
        _ => score.to_string(),
    }
}
