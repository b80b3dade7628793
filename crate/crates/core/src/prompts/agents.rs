//! Ranker and Critic prompts, and parsing of their structured replies.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{push_code_block, Label, PromptKind, RenderedPrompt};
use crate::extract::FunctionRecord;
use crate::reasoner::Explanation;

/// Selection criteria given verbatim to the Ranker.
pub const RANKER_CONSTRAINTS: [&str; 10] = [
    "If one reason describes code that does not exist in the provided input, it is not valid.",
    "If one reason is not related to the code, the reason is not valid.",
    "If this reason violates the facts, the reason is unreasonable.",
    "If one reason is not related to the decision, the reason is not valid.",
    "If one reason assume any information that is not provided, the reason is not valid.",
    "If the code is safe and one reason supports the decision, please check if the code has other potential vulnerabilities. If the code has other potential vulnerabilities, the reason is not valid.",
    "The selected reason should be the most relevant to the decision.",
    "The selected reason must be the most reasonable and accurate one.",
    "The selected reason must be factual, logical and convincing.",
    "Do not make any assumption out of the given code.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankAction {
    Rank,
    Merge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CriticAction {
    Agree,
    Rerank,
    Merge,
}

impl RankAction {
    pub fn as_str(self) -> &'static str {
        match self {
            RankAction::Rank => "rank",
            RankAction::Merge => "merge",
        }
    }
}

impl CriticAction {
    pub fn as_str(self) -> &'static str {
        match self {
            CriticAction::Agree => "agree",
            CriticAction::Rerank => "rerank",
            CriticAction::Merge => "merge",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankerDecision {
    pub action: RankAction,
    /// Explanation ids; one for `rank`, two or more for `merge`.
    pub chosen: Vec<u32>,
    /// Self-reported confidence out of 10.
    pub confidence: u8,
    pub justification: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub merged_text: Option<String>,
    /// Set when no well-formed reply was obtained and a default was used.
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticFeedback {
    pub action: CriticAction,
    pub critique: String,
    #[serde(default)]
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentRole {
    Ranker,
    Critic,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentReply {
    Ranker(RankerDecision),
    Critic(CriticFeedback),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed agent reply: {0}")]
pub struct MalformedReply(pub String);

fn malformed(msg: impl Into<String>) -> MalformedReply {
    MalformedReply(msg.into())
}

fn push_candidates(text: &mut String, candidates: &[Explanation]) {
    for e in candidates.iter().filter(|e| e.usable) {
        let _ = writeln!(text, "Reason {}: {}", e.id, e.text.trim());
    }
}

fn describe_decision(d: &RankerDecision) -> String {
    let ids = d.chosen.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ");
    let mut s = format!(
        "action={}, chosen=[{}], confidence={}/10, justification: {}",
        d.action.as_str(),
        ids,
        d.confidence,
        d.justification.trim()
    );
    if let Some(m) = &d.merged_text {
        let _ = write!(s, "; merged explanation: {}", m.trim());
    }
    s
}

/// Ranker prompt over the usable candidates (numbered by explanation id).
pub fn render_ranker(
    function: &FunctionRecord,
    verdict: Label,
    candidates: &[Explanation],
    feedback: Option<&CriticFeedback>,
    history: &[RankerDecision],
) -> RenderedPrompt {
    let mut text = String::new();
    let _ = writeln!(
        text,
        "You are the Ranker in a smart contract audit. The detector judged the function below to be {verdict}. \
         Several candidate reasons explaining this decision follow the code. Select the best reason (action \"rank\") \
         or integrate several selected reasons into one explanation (action \"merge\").\n"
    );
    text.push_str("### Code:\n");
    push_code_block(&mut text, &function.source);
    let _ = writeln!(text, "\n### Decision:\nThe code is {verdict}.\n");
    text.push_str("### Candidate reasons:\n");
    push_candidates(&mut text, candidates);
    text.push_str("\n### Constraints:\n");
    for (i, c) in RANKER_CONSTRAINTS.iter().enumerate() {
        let _ = writeln!(text, "{}. {}", i + 1, c);
    }
    if !history.is_empty() {
        text.push_str("\n### Previous decisions:\n");
        for (i, d) in history.iter().enumerate() {
            let _ = writeln!(text, "Round {}: {}", i + 1, describe_decision(d));
        }
    }
    let forced_merge = feedback.is_some_and(|f| f.action == CriticAction::Merge);
    if let Some(fb) = feedback {
        let _ = writeln!(
            text,
            "\n### Critic feedback:\nAction: {}\nCritique: {}",
            fb.action.as_str(),
            fb.critique.trim()
        );
        if forced_merge {
            text.push_str(
                "The critic requires the top reasons to be merged. You must answer with action \"merge\", \
                 choosing at least two reasons and writing the integrated explanation in \"merged_text\".\n",
            );
        } else {
            text.push_str(
                "Re-evaluate the candidate reasons taking the critique and your previous decisions into account.\n",
            );
        }
    }
    text.push_str(
        "\n### Reply format:\nReply with exactly one fenced JSON block:\n```json\n\
         {\"action\": \"rank\", \"chosen\": [<reason number>], \"confidence\": <integer 0-10>, \"justification\": \"<why this reason is best>\"}\n```\n\
         For \"merge\", list at least two reason numbers in \"chosen\" and add \"merged_text\": \"<integrated explanation>\".\n",
    );
    RenderedPrompt::new(PromptKind::Ranker, text, &function.source)
}

/// Critic prompt reviewing one Ranker decision.
pub fn render_critic(
    function: &FunctionRecord,
    verdict: Label,
    decision: &RankerDecision,
    candidates: &[Explanation],
) -> RenderedPrompt {
    let mut text = String::new();
    let _ = writeln!(
        text,
        "You are the Critic in a smart contract audit. Evaluate the Ranker's answer in conjunction with the code \
         function below and decide the next step.\n"
    );
    text.push_str("### Code:\n");
    push_code_block(&mut text, &function.source);
    let _ = writeln!(text, "\n### Decision:\nThe code is {verdict}.\n");
    text.push_str("### Ranker's answer:\n");
    let _ = writeln!(text, "{}", describe_decision(decision));
    text.push_str("Selected explanation:\n");
    match (&decision.action, &decision.merged_text) {
        (RankAction::Merge, Some(m)) => {
            let _ = writeln!(text, "{}", m.trim());
        }
        _ => {
            for id in &decision.chosen {
                if let Some(e) = candidates.iter().find(|e| e.id == *id) {
                    let _ = writeln!(text, "Reason {}: {}", e.id, e.text.trim());
                }
            }
        }
    }
    text.push_str("\n### All candidate reasons:\n");
    push_candidates(&mut text, candidates);
    text.push_str(
        "\n### Actions:\n\
         - \"agree\": the answer is reasonable and can be returned to the user.\n\
         - \"rerank\": the Ranker must re-select, considering your feedback and its previous answers.\n\
         - \"merge\": the top reasons must be integrated into one explanation.\n\
         \n### Reply format:\nReply with exactly one fenced JSON block containing one action:\n```json\n\
         {\"action\": \"agree\" | \"rerank\" | \"merge\", \"critique\": \"<feedback for the Ranker>\"}\n```\n",
    );
    RenderedPrompt::new(PromptKind::Critic, text, &function.source)
}

/// Candidate structured blocks: every JSON object embedded in the text,
/// then a `key: value` line map as a last resort.
fn structured_blocks(text: &str) -> Vec<BTreeMap<String, Value>> {
    let mut blocks = Vec::new();
    for (i, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[i..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            blocks.push(
                map.into_iter()
                    .map(|(k, v)| (k.trim().to_ascii_lowercase(), v))
                    .collect(),
            );
        }
    }
    let mut kv = BTreeMap::new();
    for line in text.lines() {
        let line = line.trim().trim_start_matches(['-', '*', '#', ' ']);
        let Some((key, value)) = line.split_once(':').or_else(|| line.split_once('=')) else {
            continue;
        };
        let key = key
            .trim()
            .trim_matches(['*', '"', '`'])
            .to_ascii_lowercase()
            .replace(' ', "_");
        if key.is_empty() || key.contains(char::is_whitespace) || kv.contains_key(&key) {
            continue;
        }
        kv.insert(key, Value::String(value.trim().trim_matches(['"', '`']).to_string()));
    }
    if !kv.is_empty() {
        blocks.push(kv);
    }
    blocks
}

fn field<'a>(block: &'a BTreeMap<String, Value>, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| block.get(*n)).filter(|v| !v.is_null())
}

fn as_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.trim().to_string(),
        other => other.to_string(),
    }
}

fn integers_in(s: &str) -> Vec<i64> {
    s.split(|c: char| !c.is_ascii_digit() && c != '-')
        .filter_map(|w| w.parse().ok())
        .collect()
}

fn parse_ids(v: &Value) -> Result<Vec<u32>, MalformedReply> {
    let raw: Vec<i64> = match v {
        Value::Number(n) => n.as_i64().into_iter().collect(),
        Value::Array(xs) => xs
            .iter()
            .map(|x| match x {
                Value::Number(n) => n.as_i64().ok_or_else(|| malformed("non-integer reason id")),
                Value::String(s) => integers_in(s)
                    .first()
                    .copied()
                    .ok_or_else(|| malformed("bad reason id")),
                _ => Err(malformed("bad reason id")),
            })
            .collect::<Result<_, _>>()?,
        Value::String(s) => integers_in(s),
        _ => return Err(malformed("bad chosen field")),
    };
    let mut ids = Vec::new();
    for id in raw {
        let id = u32::try_from(id).map_err(|_| malformed(format!("reason id {id} out of range")))?;
        if id == 0 {
            return Err(malformed("reason ids start at 1"));
        }
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    if ids.is_empty() {
        return Err(malformed("no reason chosen"));
    }
    Ok(ids)
}

fn parse_confidence(v: &Value) -> Result<u8, MalformedReply> {
    let n = match v {
        Value::Number(n) => match n.as_i64() {
            Some(i) => i,
            None => {
                let f = n.as_f64().unwrap_or(f64::NAN);
                if f.fract() != 0.0 {
                    return Err(malformed("confidence must be an integer"));
                }
                f as i64
            }
        },
        Value::String(s) => *integers_in(s)
            .first()
            .ok_or_else(|| malformed("confidence is not a number"))?,
        _ => return Err(malformed("confidence is not a number")),
    };
    if !(0..=10).contains(&n) {
        return Err(malformed(format!("confidence {n} outside 0..=10")));
    }
    Ok(n as u8)
}

fn ranker_from_block(block: &BTreeMap<String, Value>) -> Result<RankerDecision, MalformedReply> {
    let action = field(block, &["action"]).ok_or_else(|| malformed("missing action"))?;
    let action = match as_text(action).to_ascii_lowercase().as_str() {
        "rank" => RankAction::Rank,
        "merge" => RankAction::Merge,
        other => return Err(malformed(format!("unknown ranker action `{other}`"))),
    };
    let chosen = parse_ids(
        field(
            block,
            &["chosen", "choice", "choices", "selected", "reasons", "reason_ids"],
        )
        .ok_or_else(|| malformed("missing chosen reasons"))?,
    )?;
    let confidence =
        parse_confidence(field(block, &["confidence", "score"]).ok_or_else(|| malformed("missing confidence"))?)?;
    let justification = field(block, &["justification", "explanation", "rationale"])
        .map(as_text)
        .unwrap_or_default();
    let merged_text = field(block, &["merged_text", "merged", "merged_reason"])
        .map(as_text)
        .filter(|s| !s.is_empty());

    match action {
        RankAction::Rank if chosen.len() != 1 => return Err(malformed("rank must choose exactly one reason")),
        RankAction::Merge if chosen.len() < 2 => return Err(malformed("merge must choose at least two reasons")),
        RankAction::Merge if merged_text.is_none() => return Err(malformed("merge without merged_text")),
        _ => {}
    }
    Ok(RankerDecision {
        action,
        chosen,
        confidence,
        justification,
        merged_text: if action == RankAction::Merge { merged_text } else { None },
        fallback: false,
    })
}

fn critic_from_block(block: &BTreeMap<String, Value>) -> Result<CriticFeedback, MalformedReply> {
    let action = field(block, &["action"]).ok_or_else(|| malformed("missing action"))?;
    let action = match as_text(action).to_ascii_lowercase().as_str() {
        "agree" => CriticAction::Agree,
        "rerank" | "re-rank" => CriticAction::Rerank,
        "merge" => CriticAction::Merge,
        other => return Err(malformed(format!("unknown critic action `{other}`"))),
    };
    let critique = field(block, &["critique", "feedback", "comment", "reason"])
        .map(as_text)
        .unwrap_or_default();
    Ok(CriticFeedback {
        action,
        critique,
        fallback: false,
    })
}

fn first_valid<T>(
    text: &str,
    parse: impl Fn(&BTreeMap<String, Value>) -> Result<T, MalformedReply>,
) -> Result<T, MalformedReply> {
    let mut first_err = None;
    for block in structured_blocks(text) {
        match parse(&block) {
            Ok(v) => return Ok(v),
            Err(e) if first_err.is_none() && block.contains_key("action") => first_err = Some(e),
            Err(_) => {}
        }
    }
    Err(first_err.unwrap_or_else(|| malformed("no structured block with an action")))
}

pub fn parse_ranker_reply(text: &str) -> Result<RankerDecision, MalformedReply> {
    first_valid(text, ranker_from_block)
}

pub fn parse_critic_reply(text: &str) -> Result<CriticFeedback, MalformedReply> {
    first_valid(text, critic_from_block)
}

pub fn parse_agent_reply(text: &str, expected: AgentRole) -> Result<AgentReply, MalformedReply> {
    match expected {
        AgentRole::Ranker => parse_ranker_reply(text).map(AgentReply::Ranker),
        AgentRole::Critic => parse_critic_reply(text).map(AgentReply::Critic),
    }
}
