//! Stage one: several detector prompts vote on a label.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Endpoint};
use crate::extract::{CallContext, FunctionRecord};
use crate::prompts::{parse_label, Label, LabelPolicy, RenderError, TemplateSet, Vote, VARIANTS};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DetectorError {
    #[error("detector prompt count must be in 1..={VARIANTS}, got {0}")]
    InvalidPromptCount(usize),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("backend unavailable: all {} detector calls failed (first: {})", .0.len(), .0[0])]
    BackendUnavailable(Vec<BackendError>),
}

/// Ballots of the m detector prompts, in variant order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteSet {
    votes: Vec<(u8, Vote)>,
}

impl VoteSet {
    /// Votes are attributed to variants 1, 2, … in order.
    pub fn from_votes(votes: impl IntoIterator<Item = Vote>) -> Self {
        let votes: Vec<(u8, Vote)> = votes.into_iter().enumerate().map(|(i, v)| (i as u8 + 1, v)).collect();
        assert!(!votes.is_empty(), "a vote set needs at least one vote");
        Self { votes }
    }

    pub fn votes(&self) -> &[(u8, Vote)] {
        &self.votes
    }

    pub fn m(&self) -> usize {
        self.votes.len()
    }

    pub fn count(&self, vote: Vote) -> usize {
        self.votes.iter().filter(|(_, v)| *v == vote).count()
    }
}

/// Voting ratio kept as an exact fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Confidence {
    pub votes: usize,
    pub total: usize,
}

impl Confidence {
    pub fn value(self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.votes as f64 / self.total as f64
        }
    }
}

impl fmt::Display for Confidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.votes, self.total)
    }
}

#[derive(Serialize, Deserialize)]
struct ConfidenceRepr {
    votes: usize,
    total: usize,
    value: f64,
}

impl Serialize for Confidence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ConfidenceRepr {
            votes: self.votes,
            total: self.total,
            value: self.value(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Confidence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = ConfidenceRepr::deserialize(d)?;
        Ok(Confidence {
            votes: r.votes,
            total: r.total,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    StrictMajority,
    /// No label reached a strict majority; vulnerable was chosen.
    FailSafeDefault,
}

/// One detector call as it appears in the report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub variant: u8,
    pub prompt_hash: String,
    pub vote: Vote,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub winner: Label,
    pub confidence: Confidence,
    pub decided_by: DecidedBy,
    pub vote_set: VoteSet,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<VoteRecord>,
}

/// Strict majority over all m prompts; abstentions count against every
/// label. Without a strict majority the verdict defaults to vulnerable.
pub fn majority(vote_set: &VoteSet) -> Verdict {
    let m = vote_set.m();
    let vulnerable = vote_set.count(Vote::Vulnerable);
    let safe = vote_set.count(Vote::Safe);
    let (winner, votes, decided_by) = if 2 * vulnerable > m {
        (Label::Vulnerable, vulnerable, DecidedBy::StrictMajority)
    } else if 2 * safe > m {
        (Label::Safe, safe, DecidedBy::StrictMajority)
    } else {
        (Label::Vulnerable, vulnerable, DecidedBy::FailSafeDefault)
    };
    Verdict {
        winner,
        confidence: Confidence { votes, total: m },
        decided_by,
        vote_set: vote_set.clone(),
        calls: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorSettings {
    /// Number of prompt variants to run (1..=5).
    pub m: usize,
    pub policy: LabelPolicy,
    /// Pass the call context to the detector prompts as well.
    pub use_context: bool,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            m: VARIANTS,
            policy: LabelPolicy::default(),
            use_context: false,
        }
    }
}

pub struct Detector<'a> {
    pub templates: &'a TemplateSet,
    pub endpoint: &'a Endpoint,
    pub settings: DetectorSettings,
}

impl Detector<'_> {
    /// Runs every variant; failed calls abstain.
    pub fn vote(
        &self,
        function: &FunctionRecord,
        context: Option<&CallContext>,
    ) -> Result<(VoteSet, Vec<VoteRecord>), DetectorError> {
        let m = self.settings.m;
        if !(1..=VARIANTS).contains(&m) {
            return Err(DetectorError::InvalidPromptCount(m));
        }
        let context = context.filter(|_| self.settings.use_context);
        let prompts = (1..=m as u8)
            .map(|v| self.templates.render_detector(function, v, context))
            .collect::<Result<Vec<_>, _>>()?;
        let results = self.endpoint.complete_many(&prompts);

        let mut failures = Vec::new();
        let mut records = Vec::with_capacity(m);
        for (i, (prompt, result)) in prompts.iter().zip(results).enumerate() {
            let variant = i as u8 + 1;
            let record = match result {
                Ok(c) => VoteRecord {
                    variant,
                    prompt_hash: c.prompt_hash,
                    vote: parse_label(&c.output, self.settings.policy),
                    output: Some(c.output),
                    error: None,
                },
                Err(e) => {
                    let record = VoteRecord {
                        variant,
                        prompt_hash: prompt.prompt_hash(),
                        vote: Vote::Abstain,
                        output: None,
                        error: Some(e.to_string()),
                    };
                    failures.push(e);
                    record
                }
            };
            records.push(record);
        }
        if failures.len() == m {
            return Err(DetectorError::BackendUnavailable(failures));
        }
        let vote_set = VoteSet {
            votes: records.iter().map(|r| (r.variant, r.vote)).collect(),
        };
        Ok((vote_set, records))
    }

    pub fn detect(&self, function: &FunctionRecord, context: Option<&CallContext>) -> Result<Verdict, DetectorError> {
        let (vote_set, calls) = self.vote(function, context)?;
        let mut verdict = majority(&vote_set);
        verdict.calls = calls;
        Ok(verdict)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Reply, ScriptedBackend};
    use crate::extract::{Project, SourceFile};

    const V: Vote = Vote::Vulnerable;
    const S: Vote = Vote::Safe;
    const A: Vote = Vote::Abstain;

    fn function() -> FunctionRecord {
        Project::from_sources(vec![SourceFile::new(
            "p.sol",
            "contract C { function f() public { x = 1; } }",
        )])
        .unwrap()
        .functions
        .remove(0)
    }

    fn run(replies: Vec<Reply>) -> Result<Verdict, DetectorError> {
        let endpoint = Endpoint::scripted(ScriptedBackend::new().on_contains("classification task", replies));
        let templates = TemplateSet::default();
        Detector {
            templates: &templates,
            endpoint: &endpoint,
            settings: DetectorSettings::default(),
        }
        .detect(&function(), None)
    }

    #[test]
    fn majority_examples() {
        let v = majority(&VoteSet::from_votes([V, V, S, V, V]));
        assert_eq!(
            (v.winner, v.confidence.value(), v.decided_by),
            (Label::Vulnerable, 0.8, DecidedBy::StrictMajority)
        );
        let v = majority(&VoteSet::from_votes([S; 5]));
        assert_eq!(
            (v.winner, v.confidence.value(), v.decided_by),
            (Label::Safe, 1.0, DecidedBy::StrictMajority)
        );
        let v = majority(&VoteSet::from_votes([V, V, S, S, A]));
        assert_eq!(
            (v.winner, v.confidence.value(), v.decided_by),
            (Label::Vulnerable, 0.4, DecidedBy::FailSafeDefault)
        );
        let v = majority(&VoteSet::from_votes([V, S]));
        assert_eq!(
            (v.winner, v.confidence, v.decided_by),
            (
                Label::Vulnerable,
                Confidence { votes: 1, total: 2 },
                DecidedBy::FailSafeDefault
            )
        );
    }

    #[test]
    fn scripted_votes() {
        let lab = |l: &str| Reply::text(format!("The label is {l}."));
        let v = run(vec![
            lab("vulnerable"),
            lab("vulnerable"),
            lab("safe"),
            lab("vulnerable"),
            lab("vulnerable"),
        ])
        .unwrap();
        assert_eq!(v.vote_set.count(V), 4);
        assert_eq!(v.vote_set.count(S), 1);
        assert_eq!(v.calls.len(), 5);
        assert_eq!(v.calls[2].vote, S);

        let v = run(vec![lab("safe")]).unwrap();
        assert_eq!(v.vote_set.count(S), 5);

        let v = run(vec![lab("safe"), Reply::text("no idea"), lab("safe")]).unwrap();
        assert_eq!(v.vote_set.count(A), 1);
        assert_eq!(v.vote_set.count(S), 4);
    }

    #[test]
    fn partial_and_total_failure() {
        let lab = Reply::text("The label is safe.");
        let v = run(vec![lab.clone(), Reply::status_failure(500), lab]).unwrap();
        assert_eq!(v.calls[1].vote, A);
        assert!(v.calls[1].error.is_some());
        assert!(matches!(
            run(vec![Reply::status_failure(503)]),
            Err(DetectorError::BackendUnavailable(e)) if e.len() == 5
        ));
    }

    #[test]
    fn prompt_count_is_configurable() {
        let endpoint = Endpoint::scripted(ScriptedBackend::new().with_default("vulnerable"));
        let templates = TemplateSet::default();
        let mut d = Detector {
            templates: &templates,
            endpoint: &endpoint,
            settings: DetectorSettings {
                m: 3,
                ..DetectorSettings::default()
            },
        };
        assert_eq!(d.detect(&function(), None).unwrap().vote_set.m(), 3);
        d.settings.m = 6;
        assert_eq!(d.detect(&function(), None), Err(DetectorError::InvalidPromptCount(6)));
    }

    #[test]
    fn confidence_serializes_with_value() {
        let json = serde_json::to_string(&Confidence { votes: 4, total: 5 }).unwrap();
        assert_eq!(json, r#"{"votes":4,"total":5,"value":0.8}"#);
        let back: Confidence = serde_json::from_str(&json).unwrap();
        assert_eq!(back, Confidence { votes: 4, total: 5 });
    }
}
