//! Expanding terse report findings into explanation / PoC / fix sections.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{strip_links, DatasetEntry};
use crate::backend::Endpoint;
use crate::prompts::{push_code_block, Label, PromptKind, RenderedPrompt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementStatus {
    Enhanced,
    /// The reply was missing a section or the call failed.
    KeptOriginal,
}

fn heading_kind(line: &str) -> Option<usize> {
    let t = line.trim();
    let looks_like_heading = t.starts_with('#') || t.starts_with("**") || t.ends_with(':') || t.ends_with(":**");
    if !looks_like_heading {
        return None;
    }
    let words: String = t
        .trim_start_matches(|c: char| c == '#' || c == '*' || c.is_ascii_digit() || c == '.' || c.is_whitespace())
        .to_ascii_lowercase();
    if words.starts_with("explanation") {
        Some(0)
    } else if words.starts_with("proof of concept") || words.starts_with("poc") {
        Some(1)
    } else if words.starts_with("recommendation") || words.starts_with("recommended fix") {
        Some(2)
    } else {
        None
    }
}

/// True when the text has Explanation, Proof of Concept and Recommendation
/// headings.
pub fn has_required_sections(text: &str) -> bool {
    let mut seen = [false; 3];
    for line in text.lines() {
        if let Some(k) = heading_kind(line) {
            seen[k] = true;
        }
    }
    seen.iter().all(|s| *s)
}

fn enhance_prompt(entry: &DatasetEntry) -> RenderedPrompt {
    let mut text = String::from(
        "Below is a vulnerability finding from a smart contract audit report and the affected function. \
         Rewrite the finding as three sections with the headings \"## Explanation\", \"## Proof of Concept\" \
         and \"## Recommendation\": explain the vulnerability in detail, describe how it can be exploited, \
         and recommend a fix.\n\n### Finding:\n",
    );
    text.push_str(entry.reason.trim());
    text.push_str("\n\n### Function:\n");
    push_code_block(&mut text, &entry.code);
    if let Some(ctx) = &entry.context {
        for (heading, excerpts) in [("Callers", &ctx.callers), ("Callees", &ctx.callees)] {
            if excerpts.is_empty() {
                continue;
            }
            text.push_str(&format!("\n### {heading}:\n"));
            let joined = excerpts
                .iter()
                .map(|e| e.source.as_str())
                .collect::<Vec<_>>()
                .join("\n\n");
            push_code_block(&mut text, &joined);
        }
    }
    RenderedPrompt::new(PromptKind::Enhance, text, &entry.code)
}

/// Positives get an expanded reason when the reply has all three
/// sections; otherwise the original reason is kept. Negatives pass through.
pub fn enhance_explanation(entry: &DatasetEntry, endpoint: &Endpoint) -> DatasetEntry {
    let mut out = entry.clone();
    if entry.label != Label::Vulnerable {
        return out;
    }
    let reply = endpoint.complete(&enhance_prompt(entry));
    match reply {
        Ok(c) if has_required_sections(&c.output) => {
            out.reason = strip_links(c.output.trim());
            out.enhancement = Some(EnhancementStatus::Enhanced);
        }
        Ok(_) => out.enhancement = Some(EnhancementStatus::KeptOriginal),
        Err(e) => {
            tracing::warn!(id = %entry.id, error = %e, "enhancement call failed");
            out.enhancement = Some(EnhancementStatus::KeptOriginal);
        }
    }
    out
}

pub fn enhance_all(entries: &[DatasetEntry], endpoint: &Endpoint, parallelism: usize) -> Vec<DatasetEntry> {
    let slots: Vec<Mutex<Option<DatasetEntry>>> = entries.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, entries.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(e) = entries.get(i) else { break };
                *slots[i].lock().expect("slot lock") = Some(enhance_explanation(e, endpoint));
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("slot lock").expect("slot filled"))
        .collect()
}
