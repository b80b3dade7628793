use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Attempt, AttemptError, Backend, EndpointConfig, TranscriptEntry};
use crate::prompts::RenderedPrompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailKind {
    Transport,
    Status,
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Failure {
    pub fail: FailKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<u16>,
}

/// A scripted answer: literal text, or an injected fault.
///
/// A transport fault persists across the retries of the call it is
/// assigned to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Reply {
    Text(String),
    Fail(Failure),
}

impl Reply {
    pub fn text(s: impl Into<String>) -> Self {
        Reply::Text(s.into())
    }

    pub fn transport_failure(message: &str) -> Self {
        Reply::Fail(Failure {
            fail: FailKind::Transport,
            message: Some(message.to_string()),
            code: None,
        })
    }

    pub fn status_failure(code: u16) -> Self {
        Reply::Fail(Failure {
            fail: FailKind::Status,
            message: None,
            code: Some(code),
        })
    }

    fn outcome(&self) -> Result<String, AttemptError> {
        match self {
            Reply::Text(t) => Ok(t.clone()),
            Reply::Fail(f) => {
                let msg = f.message.clone().unwrap_or_else(|| "injected fault".into());
                Err(match f.fail {
                    FailKind::Transport => AttemptError::Transport(msg),
                    FailKind::Status => AttemptError::Status {
                        code: f.code.unwrap_or(500),
                        body: msg,
                    },
                    FailKind::Malformed => AttemptError::Malformed(msg),
                })
            }
        }
    }
}

impl From<&str> for Reply {
    fn from(s: &str) -> Self {
        Reply::Text(s.to_string())
    }
}

impl From<String> for Reply {
    fn from(s: String) -> Self {
        Reply::Text(s)
    }
}

/// Matches a prompt by exact hash or by substrings of its text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub all_of: Vec<String>,
    pub replies: Vec<Reply>,
}

impl Rule {
    fn matches(&self, text: &str, hash: &str) -> bool {
        self.prompt_hash.as_deref().is_none_or(|h| h == hash)
            && self.contains.as_deref().is_none_or(|c| text.contains(c))
            && self.all_of.iter().all(|c| text.contains(c.as_str()))
    }
}

/// Serialized form of a scripted backend (the `--mock-script` file).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Script {
    #[serde(default)]
    pub rules: Vec<Rule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_reply: Option<Reply>,
    /// Inclusive range of simulated latency per call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<(u64, u64)>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed script: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("invalid script: {0}")]
    Invalid(String),
}

/// Deterministic stand-in for a model.
///
/// Rules with a `prompt_hash` are consulted first, then substring rules, each
/// group in declaration order; the first match answers. Each rule's replies
/// are consumed in order and the last one repeats. Cursors are kept per
/// audited function (the prompt's code hash), so concurrent audits of
/// different functions do not disturb each other's sequences.
pub struct ScriptedBackend {
    script: Script,
    order: Vec<usize>,
    cursors: Mutex<HashMap<(usize, String), usize>>,
    rng: Mutex<ChaCha8Rng>,
}

impl Default for ScriptedBackend {
    fn default() -> Self {
        Self::new()
    }
}

impl ScriptedBackend {
    pub fn new() -> Self {
        Self::from_script(Script::default()).expect("empty script is valid")
    }

    pub fn from_script(script: Script) -> Result<Self, ScriptError> {
        for (i, r) in script.rules.iter().enumerate() {
            if r.prompt_hash.is_none() && r.contains.is_none() && r.all_of.is_empty() {
                return Err(ScriptError::Invalid(format!("rule {i} has no matcher")));
            }
            if r.replies.is_empty() {
                return Err(ScriptError::Invalid(format!("rule {i} has no replies")));
            }
        }
        if let Some((lo, hi)) = script.latency_ms {
            if lo > hi {
                return Err(ScriptError::Invalid(format!("latency range {lo}..{hi} is empty")));
            }
        }
        let (hashed, rest): (Vec<usize>, Vec<usize>) =
            (0..script.rules.len()).partition(|&i| script.rules[i].prompt_hash.is_some());
        let order = hashed.into_iter().chain(rest).collect();
        let rng = Mutex::new(ChaCha8Rng::seed_from_u64(script.seed));
        Ok(Self {
            script,
            order,
            cursors: Mutex::new(HashMap::new()),
            rng,
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        Self::from_script(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ScriptError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds the replies of a recorded run, keyed by prompt hash.
    pub fn replay(entries: &[TranscriptEntry]) -> Self {
        let mut by_hash: BTreeMap<&str, Vec<Reply>> = BTreeMap::new();
        for e in entries.iter().filter(|e| e.error.is_none()) {
            by_hash
                .entry(&e.prompt_hash)
                .or_default()
                .push(Reply::Text(e.output.clone()));
        }
        let rules = by_hash
            .into_iter()
            .map(|(h, replies)| Rule {
                prompt_hash: Some(h.to_string()),
                replies,
                ..Rule::default()
            })
            .collect();
        Self::from_script(Script {
            rules,
            ..Script::default()
        })
        .expect("replay rules are valid")
    }

    fn push_rule(mut self, rule: Rule) -> Self {
        let mut script = std::mem::take(&mut self.script);
        script.rules.push(rule);
        Self::from_script(script).expect("builder rules are valid")
    }

    pub fn on_contains(self, pattern: &str, replies: Vec<Reply>) -> Self {
        self.push_rule(Rule {
            contains: Some(pattern.to_string()),
            replies,
            ..Rule::default()
        })
    }

    pub fn on_all(self, patterns: &[&str], replies: Vec<Reply>) -> Self {
        self.push_rule(Rule {
            all_of: patterns.iter().map(|s| s.to_string()).collect(),
            replies,
            ..Rule::default()
        })
    }

    pub fn on_hash(self, prompt_hash: &str, replies: Vec<Reply>) -> Self {
        self.push_rule(Rule {
            prompt_hash: Some(prompt_hash.to_string()),
            replies,
            ..Rule::default()
        })
    }

    pub fn with_default(mut self, reply: impl Into<Reply>) -> Self {
        self.script.default_reply = Some(reply.into());
        self
    }

    pub fn with_latency(mut self, lo_ms: u64, hi_ms: u64, seed: u64) -> Self {
        self.script.latency_ms = Some((lo_ms, hi_ms));
        self.script.seed = seed;
        *self.rng.get_mut().expect("rng lock") = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    fn pick(&self, prompt: &RenderedPrompt) -> Reply {
        let hash = prompt.prompt_hash();
        let Some(&rule_idx) = self
            .order
            .iter()
            .find(|&&i| self.script.rules[i].matches(&prompt.text, &hash))
        else {
            return self.script.default_reply.clone().unwrap_or_else(|| {
                Reply::Fail(Failure {
                    fail: FailKind::Malformed,
                    message: Some(format!("no scripted reply for prompt {}", &hash[..12])),
                    code: None,
                })
            });
        };
        let replies = &self.script.rules[rule_idx].replies;
        let mut cursors = self.cursors.lock().expect("cursor lock");
        let cursor = cursors.entry((rule_idx, prompt.code_hash.clone())).or_insert(0);
        let reply = replies[(*cursor).min(replies.len() - 1)].clone();
        *cursor += 1;
        reply
    }
}

impl Backend for ScriptedBackend {
    fn id(&self) -> String {
        "scripted".into()
    }

    fn dispatch(&self, _config: &EndpointConfig, prompt: &RenderedPrompt) -> Attempt {
        let reply = self.pick(prompt);
        let delay = self
            .script
            .latency_ms
            .map(|(lo, hi)| Duration::from_millis(self.rng.lock().expect("rng lock").random_range(lo..=hi)));
        Box::new(move || {
            if let Some(d) = delay {
                std::thread::sleep(d);
            }
            reply.outcome()
        })
    }
}
