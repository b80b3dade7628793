//! Negative samples: candidates that match no known vulnerability after a
//! group → functionality → negligence judge cascade.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{clean_code, short_hash, DatasetEntry, EntryProvenance, Split};
use crate::backend::Endpoint;
use crate::extract::CallContext;
use crate::prompts::{parse_yes_no, push_code_block, Label, PromptKind, RenderedPrompt};

/// One line of `knowledge.jsonl`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeItem {
    pub functionality_description: String,
    /// Code-level cause of the vulnerability.
    pub negligence: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_functionality: Option<String>,
    /// Judge-assigned category; groups items that lack a `group_id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KnowledgeGroup {
    pub key: String,
    pub summary: String,
    pub items: Vec<KnowledgeItem>,
}

/// A function that may become a negative sample.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    #[serde(default)]
    pub id: Option<String>,
    pub code: String,
    #[serde(default)]
    pub context: Option<CallContext>,
    #[serde(default)]
    pub source_ref: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NegativesOutcome {
    pub entries: Vec<DatasetEntry>,
    /// Ids of candidates that matched some knowledge item.
    pub matched: Vec<String>,
    /// Ids of candidates dropped because a judge call failed or was unclear.
    pub dropped: Vec<String>,
}

/// Groups by `group_id`, falling back to `category`, then to one
/// catch-all group. Group order is by key.
pub fn group_knowledge(items: &[KnowledgeItem]) -> Vec<KnowledgeGroup> {
    let mut groups: BTreeMap<String, Vec<KnowledgeItem>> = BTreeMap::new();
    for item in items {
        let key = match (&item.group_id, &item.category) {
            (Some(g), _) => format!("group:{g}"),
            (None, Some(c)) => format!("category:{c}"),
            (None, None) => "ungrouped".to_string(),
        };
        groups.entry(key).or_default().push(item.clone());
    }
    groups
        .into_iter()
        .map(|(key, items)| {
            let summary = items
                .iter()
                .find_map(|i| i.group_functionality.clone().filter(|s| !s.trim().is_empty()))
                .unwrap_or_else(|| {
                    items
                        .iter()
                        .map(|i| i.functionality_description.trim())
                        .collect::<Vec<_>>()
                        .join("\n")
                });
            KnowledgeGroup { key, summary, items }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    Group,
    Functionality,
    Negligence,
}

fn judge_prompt(stage: Stage, code: &str, subject: &str) -> RenderedPrompt {
    let (tag, question, heading) = match stage {
        Stage::Group => (
            "group",
            "Does the function below implement functionality similar to the following group of vulnerable functions?",
            "Group functionality",
        ),
        Stage::Functionality => (
            "functionality",
            "Does the function below implement the following functionality?",
            "Functionality",
        ),
        Stage::Negligence => (
            "negligence",
            "Does the following code-level cause of a vulnerability apply to the function below?",
            "Code-level cause",
        ),
    };
    let mut text = format!(
        "You are judging Solidity code against known vulnerabilities. [stage: {tag}]\n{question}\n\n### {heading}:\n{}\n\n### Function:\n",
        subject.trim()
    );
    push_code_block(&mut text, code);
    text.push_str("\nAnswer with yes or no.\n");
    RenderedPrompt::new(PromptKind::Judge, text, code)
}

/// Asks every question at once; `None` if any answer is missing.
fn ask_all(judge: &Endpoint, stage: Stage, code: &str, subjects: &[&str]) -> Option<Vec<bool>> {
    if subjects.is_empty() {
        return Some(Vec::new());
    }
    let prompts: Vec<_> = subjects.iter().map(|s| judge_prompt(stage, code, s)).collect();
    judge
        .complete_many(&prompts)
        .into_iter()
        .map(|r| r.ok().and_then(|c| parse_yes_no(&c.output)))
        .collect()
}

/// `Some(true)` if any knowledge item matches through all three stages.
fn matches_knowledge(judge: &Endpoint, code: &str, groups: &[KnowledgeGroup]) -> Option<bool> {
    let summaries: Vec<&str> = groups.iter().map(|g| g.summary.as_str()).collect();
    let group_hits = ask_all(judge, Stage::Group, code, &summaries)?;
    let items: Vec<&KnowledgeItem> = groups
        .iter()
        .zip(&group_hits)
        .filter(|(_, hit)| **hit)
        .flat_map(|(g, _)| &g.items)
        .collect();
    let descriptions: Vec<&str> = items.iter().map(|i| i.functionality_description.as_str()).collect();
    let functionality_hits = ask_all(judge, Stage::Functionality, code, &descriptions)?;
    let causes: Vec<&str> = items
        .iter()
        .zip(&functionality_hits)
        .filter(|(_, hit)| **hit)
        .map(|(i, _)| i.negligence.as_str())
        .collect();
    let negligence_hits = ask_all(judge, Stage::Negligence, code, &causes)?;
    Some(negligence_hits.into_iter().any(|h| h))
}

/// id, cleaned code, and the knowledge match (`None` = unclear).
type Judged = (String, String, Option<bool>);

/// Labels each candidate safe unless the judge cascade matches it to some
/// vulnerability knowledge. Candidates are judged in parallel.
pub fn derive_negatives(
    candidates: &[Candidate],
    knowledge: &[KnowledgeItem],
    judge: &Endpoint,
    parallelism: usize,
) -> NegativesOutcome {
    let groups = group_knowledge(knowledge);
    let results: Vec<Mutex<Option<Judged>>> = candidates.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, candidates.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(c) = candidates.get(i) else { break };
                let code = clean_code(&c.code);
                let id = c.id.clone().unwrap_or_else(|| format!("neg-{}", short_hash(&code)));
                let verdict = matches_knowledge(judge, &code, &groups);
                *results[i].lock().expect("result lock") = Some((id, code, verdict));
            });
        }
    });

    let mut out = NegativesOutcome::default();
    for (c, slot) in candidates.iter().zip(results) {
        let (id, code, verdict) = slot.into_inner().expect("result lock").expect("slot filled");
        match verdict {
            Some(false) => out.entries.push(DatasetEntry {
                id,
                code,
                context: c.context.clone(),
                label: Label::Safe,
                reason: String::new(),
                provenance: EntryProvenance::DerivedNegative,
                source_ref: c.source_ref.clone(),
                split: Split::Unassigned,
                enhancement: None,
            }),
            Some(true) => out.matched.push(id),
            None => out.dropped.push(id),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Reply, ScriptedBackend};

    fn knowledge() -> Vec<KnowledgeItem> {
        vec![
            KnowledgeItem {
                functionality_description: "withdraws ether to the caller".into(),
                negligence: "external call before state update".into(),
                group_id: Some("transfer".into()),
                group_functionality: Some("moves funds out of the contract".into()),
                category: None,
            },
            KnowledgeItem {
                functionality_description: "sets a new owner".into(),
                negligence: "missing access control".into(),
                group_id: None,
                group_functionality: None,
                category: Some("admin".into()),
            },
        ]
    }

    fn candidate(code: &str) -> Candidate {
        Candidate {
            id: None,
            code: code.into(),
            context: None,
            source_ref: "proj".into(),
        }
    }

    #[test]
    fn grouping_falls_back_to_category() {
        let g = group_knowledge(&knowledge());
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].key, "category:admin");
        assert_eq!(g[0].summary, "sets a new owner");
        assert_eq!(g[1].summary, "moves funds out of the contract");
    }

    #[test]
    fn no_match_becomes_negative() {
        let judge = Endpoint::scripted(ScriptedBackend::new().with_default("No."));
        let out = derive_negatives(&[candidate("function f() public {}")], &knowledge(), &judge, 2);
        assert_eq!(out.entries.len(), 1);
        assert_eq!(out.entries[0].label, Label::Safe);
        assert_eq!(out.entries[0].provenance, EntryProvenance::DerivedNegative);
    }

    #[test]
    fn full_match_is_excluded_partial_is_not() {
        let all_yes = Endpoint::scripted(ScriptedBackend::new().with_default("Yes"));
        let out = derive_negatives(&[candidate("function f() public {}")], &knowledge(), &all_yes, 1);
        assert!(out.entries.is_empty());
        assert_eq!(out.matched.len(), 1);

        let stops_at_negligence = Endpoint::scripted(
            ScriptedBackend::new()
                .on_contains("[stage: negligence]", vec!["No".into()])
                .with_default("Yes"),
        );
        let out = derive_negatives(
            &[candidate("function f() public {}")],
            &knowledge(),
            &stops_at_negligence,
            1,
        );
        assert_eq!(out.entries.len(), 1);
    }

    #[test]
    fn judge_failure_drops_candidate() {
        let broken = Endpoint::scripted(ScriptedBackend::new().with_default(Reply::status_failure(500)));
        let out = derive_negatives(&[candidate("function f() public {}")], &knowledge(), &broken, 1);
        assert!(out.entries.is_empty() && out.matched.is_empty());
        assert_eq!(out.dropped.len(), 1);

        let vague = Endpoint::scripted(ScriptedBackend::new().with_default("perhaps"));
        let out = derive_negatives(&[candidate("function f() public {}")], &knowledge(), &vague, 1);
        assert_eq!(out.dropped.len(), 1);
    }
}
