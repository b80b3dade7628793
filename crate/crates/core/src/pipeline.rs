//! End-to-end audit: extract → detect → explain → deliberate, per function.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Endpoint;
use crate::clock::{Clock, SystemClock};
use crate::config::RunConfig;
use crate::dataset::DatasetEntry;
use crate::deliberation::{Agents, Deliberation, DeliberationSettings, FinalFinding};
use crate::detector::{DecidedBy, Detector, DetectorSettings, Verdict};
use crate::extract::{
    extract_functions, CallContext, ExtractError, FunctionKind, FunctionRecord, Project, SourceFile, Span, Visibility,
};
use crate::prompts::{Label, TemplateSet};
use crate::reasoner::{Explanation, Reasoner};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Extract(#[from] ExtractError),
}

/// Endpoints per role. The Ranker and the Critic share `agents`.
#[derive(Debug, Clone)]
pub struct Roles {
    pub detector: Endpoint,
    pub reasoner: Endpoint,
    pub agents: Endpoint,
}

impl Roles {
    /// The same endpoint for every role.
    pub fn shared(endpoint: Endpoint) -> Self {
        Self {
            detector: endpoint.clone(),
            reasoner: endpoint.clone(),
            agents: endpoint,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditSettings {
    pub detector: DetectorSettings,
    pub deliberation: DeliberationSettings,
    /// Run the reasoner and agents on safe verdicts too.
    pub explain_safe: bool,
    pub context_budget: usize,
    /// Functions audited concurrently.
    pub parallelism: usize,
}

impl Default for AuditSettings {
    fn default() -> Self {
        Self::from(&RunConfig::default())
    }
}

impl From<&RunConfig> for AuditSettings {
    fn from(c: &RunConfig) -> Self {
        Self {
            detector: DetectorSettings {
                m: c.m,
                policy: c.label_policy,
                use_context: c.detector_context,
            },
            deliberation: DeliberationSettings {
                max_iterations: c.max_iterations,
            },
            explain_safe: c.explain_safe,
            context_budget: c.context_budget,
            parallelism: c.parallelism,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionRef {
    pub id: String,
    pub file: String,
    pub contract: String,
    pub name: String,
    pub kind: FunctionKind,
    pub signature: String,
    pub span: Span,
    pub code_hash: String,
}

impl From<&FunctionRecord> for FunctionRef {
    fn from(f: &FunctionRecord) -> Self {
        Self {
            id: f.id.clone(),
            file: f.file.clone(),
            contract: f.contract.clone(),
            name: f.name.clone(),
            kind: f.kind,
            signature: f.signature.clone(),
            span: f.span,
            code_hash: f.code_hash(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStatus {
    /// Verdict, explanations and deliberation.
    Complete,
    /// Safe verdict with reasoning skipped.
    VerdictOnly,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionAudit {
    pub function: FunctionRef,
    pub status: AuditStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(default)]
    pub context_truncated: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub explanations: Vec<Explanation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deliberation: Option<Deliberation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl FunctionAudit {
    pub fn finding(&self) -> Option<&FinalFinding> {
        self.deliberation.as_ref().map(|d| &d.final_finding)
    }

    pub fn predicted(&self) -> Option<Label> {
        self.verdict.as_ref().map(|v| v.winner)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub template_version: String,
    pub config_hash: String,
    /// Backend id per role.
    pub backends: BTreeMap<String, String>,
    pub started_at: String,
    pub finished_at: String,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCounts {
    pub functions: usize,
    pub vulnerable: usize,
    pub safe: usize,
    pub failed: usize,
}

/// `audit_report.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub project: String,
    pub metadata: RunMetadata,
    pub counts: AuditCounts,
    pub functions: Vec<FunctionAudit>,
}

impl AuditReport {
    pub fn all_failed(&self) -> bool {
        !self.functions.is_empty() && self.functions.iter().all(|f| f.status == AuditStatus::Failed)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub struct Auditor {
    pub templates: TemplateSet,
    pub roles: Roles,
    pub settings: AuditSettings,
    pub config_hash: String,
    pub clock: Arc<dyn Clock>,
}

impl Auditor {
    pub fn new(templates: TemplateSet, roles: Roles, settings: AuditSettings) -> Self {
        Self {
            templates,
            roles,
            settings,
            config_hash: RunConfig::default().hash(),
            clock: Arc::new(SystemClock),
        }
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_config_hash(mut self, hash: String) -> Self {
        self.config_hash = hash;
        self
    }

    /// Audits every function found under `path`.
    pub fn audit_project(&self, path: &Path) -> Result<AuditReport, PipelineError> {
        let project = Project::load(path)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        Ok(self.audit(&name, &project))
    }

    pub fn audit(&self, project_id: &str, project: &Project) -> AuditReport {
        let jobs = project
            .functions
            .iter()
            .map(|f| {
                let ctx = project
                    .context_for(f, self.settings.context_budget)
                    .unwrap_or_else(|_| CallContext::empty(&f.id));
                (f.clone(), ctx)
            })
            .collect();
        self.run(project_id, jobs)
    }

    /// Audits dataset entries directly; report ids equal entry ids.
    pub fn audit_entries(&self, name: &str, entries: &[DatasetEntry]) -> AuditReport {
        let jobs = entries.iter().map(entry_job).collect();
        self.run(name, jobs)
    }

    fn run(&self, project_id: &str, jobs: Vec<(FunctionRecord, CallContext)>) -> AuditReport {
        let started_at = self.clock.timestamp();
        let slots: Vec<Mutex<Option<FunctionAudit>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..self.settings.parallelism.clamp(1, jobs.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((f, ctx)) = jobs.get(i) else { break };
                    *slots[i].lock().expect("slot lock") = Some(self.audit_function(f, ctx));
                });
            }
        });
        let functions: Vec<FunctionAudit> = slots
            .into_iter()
            .map(|s| s.into_inner().expect("slot lock").expect("slot filled"))
            .collect();

        let mut counts = AuditCounts {
            functions: functions.len(),
            ..AuditCounts::default()
        };
        for f in &functions {
            match (f.status, f.predicted()) {
                (AuditStatus::Failed, _) => counts.failed += 1,
                (_, Some(Label::Vulnerable)) => counts.vulnerable += 1,
                (_, Some(Label::Safe)) => counts.safe += 1,
                (_, None) => {}
            }
        }
        let backends = [
            ("detector", &self.roles.detector),
            ("reasoner", &self.roles.reasoner),
            ("agents", &self.roles.agents),
        ]
        .into_iter()
        .map(|(role, ep)| (role.to_string(), ep.backend_id()))
        .collect();
        AuditReport {
            project: project_id.to_string(),
            metadata: RunMetadata {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                template_version: self.templates.version.clone(),
                config_hash: self.config_hash.clone(),
                backends,
                started_at,
                finished_at: self.clock.timestamp(),
            },
            counts,
            functions,
        }
    }

    /// One function's stage chain. Stages only see what they need: the
    /// reasoner gets (function, verdict, context), the agents get
    /// (function, verdict, explanations).
    pub fn audit_function(&self, function: &FunctionRecord, context: &CallContext) -> FunctionAudit {
        let mut audit = FunctionAudit {
            function: FunctionRef::from(function),
            status: AuditStatus::Failed,
            verdict: None,
            context_truncated: context.truncated,
            explanations: Vec::new(),
            deliberation: None,
            error: None,
        };
        let detector = Detector {
            templates: &self.templates,
            endpoint: &self.roles.detector,
            settings: self.settings.detector,
        };
        let verdict = match detector.detect(function, Some(context)) {
            Ok(v) => v,
            Err(e) => {
                audit.error = Some(format!("detector: {e}"));
                return audit;
            }
        };
        audit.verdict = Some(verdict.clone());
        if verdict.winner == Label::Safe && !self.settings.explain_safe {
            audit.status = AuditStatus::VerdictOnly;
            return audit;
        }

        let reasoner = Reasoner {
            templates: &self.templates,
            endpoint: &self.roles.reasoner,
        };
        let explanations = match reasoner.explain(function, &verdict, context) {
            Ok(x) => x,
            Err(e) => {
                audit.error = Some(format!("reasoner: {e}"));
                return audit;
            }
        };
        audit.explanations = explanations.clone();

        let agents = Agents {
            endpoint: &self.roles.agents,
            settings: self.settings.deliberation,
        };
        match agents.deliberate(function, &verdict, &explanations) {
            Ok(d) => {
                audit.deliberation = Some(d);
                audit.status = AuditStatus::Complete;
            }
            Err(e) => audit.error = Some(format!("deliberation: {e}")),
        }
        audit
    }
}

/// A dataset entry as an auditable function.
fn entry_job(entry: &DatasetEntry) -> (FunctionRecord, CallContext) {
    let parsed = extract_functions(&SourceFile::new(entry.id.clone(), entry.code.clone()))
        .ok()
        .and_then(|mut fs| (!fs.is_empty()).then(|| fs.remove(0)));
    let record = FunctionRecord {
        id: entry.id.clone(),
        file: entry.source_ref.clone(),
        contract: parsed.as_ref().map(|f| f.contract.clone()).unwrap_or_default(),
        name: parsed
            .as_ref()
            .map(|f| f.name.clone())
            .unwrap_or_else(|| entry.id.clone()),
        kind: parsed.as_ref().map_or(FunctionKind::Function, |f| f.kind),
        signature: parsed.as_ref().map(|f| f.signature.clone()).unwrap_or_default(),
        visibility: parsed.as_ref().map_or(Visibility::Unknown, |f| f.visibility),
        span: parsed.as_ref().map_or(Span { start: 1, end: 1 }, |f| f.span),
        source: entry.code.clone(),
    };
    let mut context = entry.context.clone().unwrap_or_default();
    context.function_id = entry.id.clone();
    (record, context)
}

/// Plain-text summary, one block per function.
pub fn render_summary(report: &AuditReport) -> String {
    let mut out = String::new();
    let c = report.counts;
    let _ = writeln!(out, "Audit of {}", report.project);
    let _ = writeln!(
        out,
        "{} functions: {} vulnerable, {} safe, {} failed\n",
        c.functions, c.vulnerable, c.safe, c.failed
    );
    for f in &report.functions {
        let name = if f.function.contract.is_empty() {
            format!("{}({})", f.function.name, f.function.signature)
        } else {
            format!("{}.{}({})", f.function.contract, f.function.name, f.function.signature)
        };
        let _ = writeln!(out, "== {name} [{}:{}]", f.function.file, f.function.span.start);
        if let Some(v) = &f.verdict {
            let _ = writeln!(
                out,
                "   verdict: {} ({} votes, {})",
                v.winner,
                v.confidence,
                match v.decided_by {
                    DecidedBy::StrictMajority => "strict majority",
                    DecidedBy::FailSafeDefault => "no majority, fail-safe default",
                }
            );
        }
        if let Some(d) = &f.deliberation {
            let fin = &d.final_finding;
            let _ = writeln!(
                out,
                "   reason (explanations {:?}, {} round(s){}):",
                fin.provenance.explanation_ids,
                d.rounds.len(),
                if fin.provenance.cap_reached {
                    ", round cap reached"
                } else {
                    ""
                }
            );
            for line in fin.reason.lines() {
                let _ = writeln!(out, "     {line}");
            }
        }
        if let Some(e) = &f.error {
            let _ = writeln!(out, "   error: {e}");
        }
        out.push('\n');
    }
    out
}
