//! Measurement: classification metrics, explanation consistency, voting
//! score histograms and reason-source shares.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Endpoint;
use crate::dataset::DatasetEntry;
use crate::deliberation::{FinalFinding, Provenance};
use crate::detector::Confidence;
use crate::pipeline::AuditReport;
use crate::prompts::{parse_yes_no, Label, PromptKind, RenderedPrompt};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EvalError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("length mismatch: {0} verdicts vs {1} correctness flags")]
    LengthMismatch(usize, usize),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("report and dataset ids differ: {missing} without a report record, {unknown} unknown to the dataset (e.g. `{example}`)")]
    IdMismatch {
        missing: usize,
        unknown: usize,
        example: String,
    },
}

/// Vulnerable is the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Label, Label)>) -> Self {
        let mut cm = Self::default();
        for (predicted, truth) in pairs {
            cm.add(predicted, truth);
        }
        cm
    }

    pub fn add(&mut self, predicted: Label, truth: Label) {
        match (predicted, truth) {
            (Label::Vulnerable, Label::Vulnerable) => self.tp += 1,
            (Label::Vulnerable, Label::Safe) => self.fp += 1,
            (Label::Safe, Label::Vulnerable) => self.fn_ += 1,
            (Label::Safe, Label::Safe) => self.tn += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub f1: f64,
    pub recall: f64,
    pub precision: f64,
    pub accuracy: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Standard definitions; a metric whose denominator is zero is 0.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport, EvalError> {
    if cm.total() == 0 {
        return Err(EvalError::EmptyMatrix);
    }
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let f1 = if precision > 0.0 && recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MetricsReport {
        f1,
        recall,
        precision,
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
    })
}

fn consistency_prompt(finding: &FinalFinding, ground_truth: &str) -> RenderedPrompt {
    let text = format!(
        "You are annotating vulnerability explanations for smart contracts. [consistency]\n\
         Compare the generated explanation with the reference root cause written by a human auditor. \
         Answer \"yes\" if the generated explanation identifies the same root cause (the same flaw in the same \
         code, even if worded differently or with extra detail); answer \"no\" if it describes a different \
         cause, is too vague to identify the flaw, or contradicts the reference.\n\n\
         ### Reference root cause:\n{}\n\n### Generated explanation:\n{}\n\nAnswer with yes or no.\n",
        ground_truth.trim(),
        finding.reason.trim()
    );
    RenderedPrompt::new(PromptKind::Judge, text, ground_truth)
}

/// Asks the judge whether the final reason matches the ground truth. A
/// reply with no yes/no word counts as inconsistent.
pub fn judge_consistency(finding: &FinalFinding, ground_truth: &str, judge: &Endpoint) -> Result<bool, EvalError> {
    let reply = judge
        .complete(&consistency_prompt(finding, ground_truth))
        .map_err(|e| EvalError::JudgeUnavailable(e.to_string()))?;
    Ok(parse_yes_no(&reply.output).unwrap_or(false))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub rate: f64,
    pub consistent: usize,
    /// Positive entries considered.
    pub total: usize,
    /// Entries without a final finding (counted as inconsistent).
    pub missing_findings: usize,
    /// Judge calls that failed (counted as inconsistent).
    pub judge_failures: usize,
}

/// Consistency over `(finding, ground_truth)` pairs, judged in parallel.
pub fn consistency_rate(
    pairs: &[(Option<&FinalFinding>, &str)],
    judge: &Endpoint,
    parallelism: usize,
) -> ConsistencyReport {
    let slots: Vec<Mutex<Option<Result<bool, EvalError>>>> = pairs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..parallelism.clamp(1, pairs.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((finding, truth)) = pairs.get(i) else { break };
                let r = match finding {
                    Some(f) => judge_consistency(f, truth, judge),
                    None => Ok(false),
                };
                *slots[i].lock().expect("slot lock") = Some(r);
            });
        }
    });
    let mut report = ConsistencyReport {
        rate: 0.0,
        consistent: 0,
        total: pairs.len(),
        missing_findings: pairs.iter().filter(|(f, _)| f.is_none()).count(),
        judge_failures: 0,
    };
    for slot in slots {
        match slot.into_inner().expect("slot lock").expect("slot filled") {
            Ok(true) => report.consistent += 1,
            Ok(false) => {}
            Err(_) => report.judge_failures += 1,
        }
    }
    report.rate = ratio(report.consistent, report.total);
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub votes: usize,
    pub total: usize,
    pub value: f64,
    pub count: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub n: usize,
    pub bins: Vec<Bin>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceHistograms {
    pub correct: Histogram,
    pub incorrect: Histogram,
}

/// Voting-score distribution for correct and incorrect predictions.
///
/// Both histograms share one bin set: every strict-majority ratio k/m for
/// each observed m, plus any other observed ratio. Proportions are within
/// each group, so a non-empty group sums to 1 and an empty one is all 0.
pub fn confidence_histogram(confidences: &[Confidence], correct: &[bool]) -> Result<ConfidenceHistograms, EvalError> {
    if confidences.len() != correct.len() {
        return Err(EvalError::LengthMismatch(confidences.len(), correct.len()));
    }
    let mut keys: BTreeSet<(usize, usize)> = BTreeSet::new();
    for c in confidences {
        keys.insert((c.votes, c.total));
        for k in c.total / 2 + 1..=c.total {
            keys.insert((k, c.total));
        }
    }
    let mut ordered: Vec<(usize, usize)> = keys.into_iter().collect();
    // by value, then denominator; cross-multiplication keeps it exact
    ordered.sort_by(|a, b| (a.0 * b.1).cmp(&(b.0 * a.1)).then(a.1.cmp(&b.1)));

    let build = |want: bool| {
        let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut n = 0;
        for (c, ok) in confidences.iter().zip(correct) {
            if *ok == want {
                *counts.entry((c.votes, c.total)).or_default() += 1;
                n += 1;
            }
        }
        let bins = ordered
            .iter()
            .map(|&(votes, total)| {
                let count = counts.get(&(votes, total)).copied().unwrap_or(0);
                Bin {
                    votes,
                    total,
                    value: ratio(votes, total),
                    count,
                    proportion: ratio(count, n),
                }
            })
            .collect();
        Histogram { n, bins }
    };
    Ok(ConfidenceHistograms {
        correct: build(true),
        incorrect: build(false),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReasonSources {
    pub with_context: f64,
    pub without_context: f64,
    /// Final reasons counted.
    pub n: usize,
}

/// Share of final reasons that came from context-aware paths. A merged
/// reason contributes the fraction of its constituents that had context.
pub fn reason_source_distribution<'a>(provenances: impl IntoIterator<Item = &'a Provenance>) -> ReasonSources {
    let mut credit = 0.0;
    let mut n = 0;
    for p in provenances {
        if p.with_context.is_empty() {
            continue;
        }
        n += 1;
        credit += p.with_context.iter().filter(|c| **c).count() as f64 / p.with_context.len() as f64;
    }
    if n == 0 {
        return ReasonSources {
            with_context: 0.0,
            without_context: 0.0,
            n,
        };
    }
    let with_context = credit / n as f64;
    ReasonSources {
        with_context,
        without_context: 1.0 - with_context,
        n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetadata {
    pub tool_version: String,
    pub report_project: String,
    pub report_config_hash: String,
    pub generated_at: String,
}

/// `eval_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: MetricsReport,
    pub confusion: ConfusionMatrix,
    pub evaluated: usize,
    /// Records without a verdict; excluded from the metrics.
    pub unscored: Vec<String>,
    pub histograms: ConfidenceHistograms,
    pub reason_sources: ReasonSources,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consistency: Option<ConsistencyReport>,
    pub metadata: EvalMetadata,
}

/// Joins report records to dataset entries by id; both sides must have
/// the same id set.
pub fn join<'a>(
    report: &'a AuditReport,
    entries: &'a [DatasetEntry],
) -> Result<Vec<(&'a crate::pipeline::FunctionAudit, &'a DatasetEntry)>, EvalError> {
    let by_id: BTreeMap<&str, &DatasetEntry> = entries.iter().map(|e| (e.id.as_str(), e)).collect();
    let report_ids: BTreeSet<&str> = report.functions.iter().map(|f| f.function.id.as_str()).collect();
    let unknown: Vec<&str> = report_ids
        .iter()
        .filter(|id| !by_id.contains_key(*id))
        .copied()
        .collect();
    let missing: Vec<&str> = by_id.keys().filter(|id| !report_ids.contains(*id)).copied().collect();
    if !unknown.is_empty() || !missing.is_empty() || report_ids.len() != report.functions.len() {
        let example = unknown.first().or(missing.first()).copied().unwrap_or("<duplicate id>");
        return Err(EvalError::IdMismatch {
            missing: missing.len(),
            unknown: unknown.len(),
            example: example.to_string(),
        });
    }
    Ok(report
        .functions
        .iter()
        .map(|f| (f, by_id[f.function.id.as_str()]))
        .collect())
}

/// Everything except consistency, which needs a judge.
pub fn evaluate(report: &AuditReport, entries: &[DatasetEntry], generated_at: String) -> Result<EvalReport, EvalError> {
    let mut pairs = join(report, entries)?;
    // fixed order, independent of input order
    pairs.sort_by(|a, b| a.0.function.id.cmp(&b.0.function.id));

    let mut cm = ConfusionMatrix::default();
    let mut confidences = Vec::new();
    let mut correct = Vec::new();
    let mut unscored = Vec::new();
    for (audit, entry) in &pairs {
        match &audit.verdict {
            Some(v) => {
                cm.add(v.winner, entry.label);
                confidences.push(v.confidence);
                correct.push(v.winner == entry.label);
            }
            None => unscored.push(audit.function.id.clone()),
        }
    }
    let provenances: Vec<&Provenance> = pairs
        .iter()
        .filter_map(|(a, _)| a.finding().map(|f| &f.provenance))
        .collect();
    Ok(EvalReport {
        metrics: metrics(&cm)?,
        confusion: cm,
        evaluated: cm.total(),
        unscored,
        histograms: confidence_histogram(&confidences, &correct)?,
        reason_sources: reason_source_distribution(provenances),
        consistency: None,
        metadata: EvalMetadata {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            report_project: report.project.clone(),
            report_config_hash: report.metadata.config_hash.clone(),
            generated_at,
        },
    })
}
