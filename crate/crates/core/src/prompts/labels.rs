use serde::{Deserialize, Serialize};

use super::Label;

/// One detector path's ballot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Vote {
    Safe,
    Vulnerable,
    Abstain,
}

impl Vote {
    pub fn label(self) -> Option<Label> {
        match self {
            Vote::Safe => Some(Label::Safe),
            Vote::Vulnerable => Some(Label::Vulnerable),
            Vote::Abstain => None,
        }
    }
}

impl From<Label> for Vote {
    fn from(label: Label) -> Self {
        match label {
            Label::Safe => Vote::Safe,
            Label::Vulnerable => Vote::Vulnerable,
        }
    }
}

/// How to resolve output that mentions both keywords.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPolicy {
    /// "vulnerable" wins; "not safe" still contains the safe keyword.
    #[default]
    VulnerableWins,
    /// Conflicting output abstains.
    AbstainOnConflict,
}

/// Keyword extraction: case-insensitive search for "vulnerable" and "safe".
///
/// | vulnerable | safe | result                         |
/// |------------|------|--------------------------------|
/// | yes        | no   | vulnerable                     |
/// | no         | yes  | safe                           |
/// | yes        | yes  | policy (vulnerable or abstain) |
/// | no         | no   | abstain                        |
pub fn parse_label(output: &str, policy: LabelPolicy) -> Vote {
    let lower = output.to_lowercase();
    let vulnerable = lower.contains("vulnerable");
    let safe = lower.contains("safe");
    match (vulnerable, safe) {
        (true, false) => Vote::Vulnerable,
        (false, true) => Vote::Safe,
        (true, true) => match policy {
            LabelPolicy::VulnerableWins => Vote::Vulnerable,
            LabelPolicy::AbstainOnConflict => Vote::Abstain,
        },
        (false, false) => Vote::Abstain,
    }
}

/// Reads a judge's yes/no answer from the first word that is one of them.
pub fn parse_yes_no(output: &str) -> Option<bool> {
    output
        .split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| !w.is_empty())
        .find_map(|w| match w.to_ascii_lowercase().as_str() {
            "yes" | "true" | "match" | "matches" | "consistent" | "aligned" => Some(true),
            "no" | "false" | "mismatch" | "inconsistent" | "unaligned" => Some(false),
            _ => None,
        })
}
