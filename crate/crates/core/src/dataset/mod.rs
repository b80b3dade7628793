//! Dataset construction: ingest report findings, derive negatives, enhance
//! explanations, clean, and split.

mod enhance;
mod negatives;
mod split;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use enhance::{enhance_all, enhance_explanation, has_required_sections, EnhancementStatus};
pub use negatives::{derive_negatives, group_knowledge, Candidate, KnowledgeGroup, KnowledgeItem, NegativesOutcome};
pub use split::{
    apply_split, split, split_sizes, CorpusManifest, ManifestError, SplitCounts, SplitError, SplitManifest,
};

use crate::extract::{normalize_code, CallContext};
use crate::prompts::Label;
use crate::sha256_hex;

/// Placeholder substituted for every URL.
pub const LINK_TOKEN: &str = "[link]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryProvenance {
    AuditReport,
    DerivedNegative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

/// One line of `dataset.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<CallContext>,
    pub label: Label,
    #[serde(default)]
    pub reason: String,
    pub provenance: EntryProvenance,
    pub source_ref: String,
    #[serde(default)]
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enhancement: Option<EnhancementStatus>,
}

/// An exported audit-report finding.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportRecord {
    #[serde(default)]
    pub id: Option<String>,
    /// Report identifier.
    #[serde(default)]
    pub report: String,
    #[serde(default)]
    pub code: Option<String>,
    #[serde(default)]
    pub reason: Option<String>,
    #[serde(default)]
    pub context: Option<CallContext>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestOutcome {
    pub entries: Vec<DatasetEntry>,
    /// Records lacking code or reason.
    pub skipped: usize,
    /// Records whose normalized code was already ingested.
    pub duplicates: usize,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"(?i)\b(?:[a-z][a-z0-9+.\-]*://|www\.)[^\s<>"'`)\]]+"#).expect("url regex compiles"))
}

/// Replaces each URL (scheme-prefixed or bare `www.`) with [`LINK_TOKEN`].
/// Trailing sentence punctuation is left outside the link.
pub fn strip_links(text: &str) -> String {
    url_regex()
        .replace_all(text, |caps: &regex::Captures<'_>| {
            let url = &caps[0];
            let kept = url.trim_end_matches(['.', ',', ';', ':', '!', '?']);
            format!("{LINK_TOKEN}{}", &url[kept.len()..])
        })
        .into_owned()
}

pub fn contains_link(text: &str) -> bool {
    url_regex().is_match(text)
}

/// Code as persisted: normalized, link-free, without surrounding blank lines.
pub fn clean_code(code: &str) -> String {
    normalize_code(&strip_links(code)).trim().to_string()
}

fn short_hash(text: &str) -> String {
    sha256_hex(text)[..12].to_string()
}

/// Turns report records into positive entries, deduplicating by code.
pub fn ingest_reports(records: &[ReportRecord]) -> IngestOutcome {
    let mut out = IngestOutcome::default();
    let mut seen = HashSet::new();
    for r in records {
        let (Some(code), Some(reason)) = (r.code.as_deref(), r.reason.as_deref()) else {
            out.skipped += 1;
            continue;
        };
        let code = clean_code(code);
        let reason = strip_links(reason.trim());
        if code.trim().is_empty() || reason.is_empty() {
            out.skipped += 1;
            continue;
        }
        let hash = sha256_hex(&code);
        if !seen.insert(hash) {
            out.duplicates += 1;
            continue;
        }
        let id = r.id.clone().unwrap_or_else(|| format!("pos-{}", short_hash(&code)));
        out.entries.push(DatasetEntry {
            id,
            code,
            context: r.context.clone(),
            label: Label::Vulnerable,
            reason,
            provenance: EntryProvenance::AuditReport,
            source_ref: r.report.clone(),
            split: Split::Unassigned,
            enhancement: None,
        });
    }
    out
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let p = path.display().to_string();
    let file = File::open(path).map_err(|source| DatasetError::Io {
        path: p.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: p.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| DatasetError::Json {
            path: p.clone(),
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DatasetError> {
    let io = |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for item in items {
        let line = serde_json::to_string(item).expect("dataset types serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}
