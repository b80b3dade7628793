//! Stage three: the Ranker picks or merges an explanation, the Critic
//! reviews it, and the loop repeats until agreement or the round cap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Endpoint;
use crate::config::MAX_ITERATIONS_CAP;
use crate::detector::{Confidence, Verdict};
use crate::extract::FunctionRecord;
use crate::prompts::{
    parse_critic_reply, parse_ranker_reply, render_critic, render_ranker, CriticAction, CriticFeedback, Label,
    RankAction, RankerDecision,
};
use crate::reasoner::Explanation;

/// Attempts per agent turn before falling back to a default.
pub const AGENT_ATTEMPTS: usize = 3;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeliberationError {
    #[error("no usable explanation to rank")]
    NoCandidates,
    #[error("max_iterations must be in 1..={MAX_ITERATIONS_CAP}, got {0}")]
    InvalidIterations(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DeliberationSettings {
    pub max_iterations: usize,
}

impl Default for DeliberationSettings {
    fn default() -> Self {
        Self {
            max_iterations: MAX_ITERATIONS_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Round {
    pub decision: RankerDecision,
    pub feedback: CriticFeedback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminatedBy {
    Agree,
    IterationCap,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub explanation_ids: Vec<u32>,
    /// Parallel to `explanation_ids`.
    pub with_context: Vec<bool>,
    /// e.g. `["rank(1)", "rerank", "rank(3)", "agree"]`.
    pub action_trail: Vec<String>,
    /// Finalized on the round cap rather than on agreement.
    pub cap_reached: bool,
    /// The final decision was a default, not a parsed reply.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalFinding {
    pub label: Label,
    /// The detector's voting ratio; the Ranker's own score stays in the rounds.
    pub confidence: Confidence,
    pub reason: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deliberation {
    pub rounds: Vec<Round>,
    #[serde(rename = "final")]
    pub final_finding: FinalFinding,
    pub terminated_by: TerminatedBy,
}

pub struct Agents<'a> {
    pub endpoint: &'a Endpoint,
    pub settings: DeliberationSettings,
}

fn usable_ids(candidates: &[Explanation]) -> Vec<u32> {
    candidates.iter().filter(|e| e.usable).map(|e| e.id).collect()
}

fn check_ids(decision: &RankerDecision, live: &[u32]) -> bool {
    decision.chosen.iter().all(|id| live.contains(id))
}

fn trail_entry(d: &RankerDecision) -> String {
    let ids = d.chosen.iter().map(u32::to_string).collect::<Vec<_>>().join(",");
    format!("{}({ids})", d.action.as_str())
}

impl Agents<'_> {
    /// One Ranker turn. A merge is required when `feedback` asks for one.
    pub fn rank_step(
        &self,
        function: &FunctionRecord,
        label: Label,
        candidates: &[Explanation],
        feedback: Option<&CriticFeedback>,
        history: &[RankerDecision],
    ) -> Result<RankerDecision, DeliberationError> {
        let live = usable_ids(candidates);
        let Some(&lowest) = live.iter().min() else {
            return Err(DeliberationError::NoCandidates);
        };
        let must_merge = feedback.is_some_and(|f| f.action == CriticAction::Merge);
        let prompt = render_ranker(function, label, candidates, feedback, history);
        for attempt in 1..=AGENT_ATTEMPTS {
            let reply = match self.endpoint.complete(&prompt) {
                Ok(c) => c.output,
                Err(e) => {
                    tracing::debug!(attempt, error = %e, "ranker call failed");
                    continue;
                }
            };
            match parse_ranker_reply(&reply) {
                Ok(d) if !check_ids(&d, &live) => {
                    tracing::debug!(attempt, chosen = ?d.chosen, "ranker chose unknown explanation");
                }
                Ok(d) if must_merge && d.action != RankAction::Merge => {
                    tracing::debug!(attempt, "ranker ignored a merge request");
                }
                Ok(d) => return Ok(d),
                Err(e) => tracing::debug!(attempt, error = %e, "malformed ranker reply"),
            }
        }
        Ok(RankerDecision {
            action: RankAction::Rank,
            chosen: vec![lowest],
            confidence: 0,
            justification: format!("no well-formed ranker reply after {AGENT_ATTEMPTS} attempts"),
            merged_text: None,
            fallback: true,
        })
    }

    /// One Critic turn; defaults to agree so the loop always ends.
    pub fn critic_step(
        &self,
        function: &FunctionRecord,
        label: Label,
        decision: &RankerDecision,
        candidates: &[Explanation],
    ) -> CriticFeedback {
        let prompt = render_critic(function, label, decision, candidates);
        for attempt in 1..=AGENT_ATTEMPTS {
            match self.endpoint.complete(&prompt) {
                Ok(c) => match parse_critic_reply(&c.output) {
                    Ok(f) => return f,
                    Err(e) => tracing::debug!(attempt, error = %e, "malformed critic reply"),
                },
                Err(e) => tracing::debug!(attempt, error = %e, "critic call failed"),
            }
        }
        CriticFeedback {
            action: CriticAction::Agree,
            critique: format!("no well-formed critic reply after {AGENT_ATTEMPTS} attempts"),
            fallback: true,
        }
    }

    pub fn deliberate(
        &self,
        function: &FunctionRecord,
        verdict: &Verdict,
        explanations: &[Explanation],
    ) -> Result<Deliberation, DeliberationError> {
        let cap = self.settings.max_iterations;
        if !(1..=MAX_ITERATIONS_CAP).contains(&cap) {
            return Err(DeliberationError::InvalidIterations(cap));
        }
        let label = verdict.winner;
        let mut rounds: Vec<Round> = Vec::new();
        let mut history: Vec<RankerDecision> = Vec::new();
        let mut feedback: Option<CriticFeedback> = None;
        let mut terminated_by = TerminatedBy::IterationCap;

        while rounds.len() < cap {
            let decision = self.rank_step(function, label, explanations, feedback.as_ref(), &history)?;
            let critique = self.critic_step(function, label, &decision, explanations);
            let agreed = critique.action == CriticAction::Agree;
            history.push(decision.clone());
            rounds.push(Round {
                decision,
                feedback: critique.clone(),
            });
            if agreed {
                terminated_by = TerminatedBy::Agree;
                break;
            }
            feedback = Some(critique);
        }

        let last = &rounds.last().expect("at least one round").decision;
        let reason = match (&last.action, &last.merged_text) {
            (RankAction::Merge, Some(text)) => text.clone(),
            _ => explanations
                .iter()
                .find(|e| e.id == last.chosen[0])
                .map(|e| e.text.clone())
                .expect("chosen ids are validated"),
        };
        let with_context = last
            .chosen
            .iter()
            .map(|id| {
                explanations
                    .iter()
                    .find(|e| e.id == *id)
                    .is_some_and(|e| e.with_context)
            })
            .collect();
        let action_trail = rounds
            .iter()
            .flat_map(|r| [trail_entry(&r.decision), r.feedback.action.as_str().to_string()])
            .collect();
        let final_finding = FinalFinding {
            label,
            confidence: verdict.confidence,
            reason,
            provenance: Provenance {
                explanation_ids: last.chosen.clone(),
                with_context,
                action_trail,
                cap_reached: terminated_by == TerminatedBy::IterationCap,
                fallback: last.fallback,
            },
        };
        Ok(Deliberation {
            rounds,
            final_finding,
            terminated_by,
        })
    }
}
