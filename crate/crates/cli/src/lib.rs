//! Command implementations behind the `solaudit` binary.
//!
//! Exit codes: 0 success, 1 general error, 2 nothing parseable to work on,
//! 3 every audited function failed, 4 dataset manifest inconsistency,
//! 5 report / dataset id mismatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use solaudit_core::backend::{Backend, Endpoint, EndpointConfig, HttpBackend, ScriptedBackend, Transcript};
use solaudit_core::clock::{Clock, FixedClock, SystemClock};
use solaudit_core::config::RunConfig;
use solaudit_core::dataset::{
    apply_split, derive_negatives, enhance_all, ingest_reports, read_jsonl, split, write_jsonl, Candidate,
    CorpusManifest, DatasetEntry, KnowledgeItem, ReportRecord, Split,
};
use solaudit_core::eval::{consistency_rate, evaluate, EvalError};
use solaudit_core::extract::{ExtractError, Project};
use solaudit_core::pipeline::{render_summary, AuditSettings, Auditor, Roles};
use solaudit_core::prompts::{Label, TemplateSet};

pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NO_INPUT: i32 = 2;
pub const EXIT_ALL_FAILED: i32 = 3;
pub const EXIT_MANIFEST: i32 = 4;
pub const EXIT_ID_MISMATCH: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl std::fmt::Display) -> Self {
        Self {
            code,
            message: message.to_string(),
        }
    }

    fn general(message: impl std::fmt::Display) -> Self {
        Self::new(EXIT_ERROR, message)
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "solaudit",
    version,
    about = "Audit Solidity functions with voting detectors, reasoners and ranker/critic agents"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by every command.
#[derive(Debug, Args, Clone, Default)]
pub struct CommonArgs {
    /// Run configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Random seed (dataset split); overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Maximum concurrent functions / entries; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    pub parallelism: Option<usize>,
    /// Also explain and deliberate on safe verdicts (default true).
    #[arg(long, global = true, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    pub explain_safe: Option<bool>,
    /// Answer every model call from this JSON script instead of the network.
    #[arg(long, global = true, value_name = "FILE")]
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract functions and the call graph: functions.jsonl, callgraph.json.
    Extract {
        /// A .sol file or a directory searched recursively.
        path: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Audit a project (or dataset entries): audit_report.json, audit_summary.txt.
    Audit {
        /// A .sol file or a directory searched recursively.
        #[arg(required_unless_present = "dataset")]
        path: Option<PathBuf>,
        /// Audit the entries of a dataset.jsonl instead of a project.
        #[arg(long, value_name = "FILE", conflicts_with = "path")]
        dataset: Option<PathBuf>,
        /// With --dataset: only entries assigned to this split.
        #[arg(long, value_enum, requires = "dataset")]
        split: Option<SplitArg>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Dataset construction.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Score an audit report against labelled entries: eval_report.json.
    Eval {
        /// audit_report.json to score.
        #[arg(long, value_name = "FILE")]
        report: PathBuf,
        /// dataset.jsonl with ground-truth labels.
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Only entries assigned to this split.
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        /// Also judge explanation consistency with the judge endpoint.
        #[arg(long)]
        judge: bool,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Report records → positives.jsonl.
    Ingest {
        /// JSONL of {id?, report, code, reason, context?}.
        #[arg(long, value_name = "FILE")]
        records: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Candidate functions + vulnerability knowledge → negatives.jsonl.
    Negatives {
        /// JSONL of {id?, code, context?, source_ref}.
        #[arg(long, value_name = "FILE")]
        candidates: PathBuf,
        /// knowledge.jsonl.
        #[arg(long, value_name = "FILE")]
        knowledge: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Expand positive reasons → enhanced.jsonl.
    Enhance {
        #[arg(long, value_name = "FILE")]
        dataset: PathBuf,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Assign train/val/test → dataset.jsonl, splits.json.
    Split {
        /// One or more dataset files, concatenated.
        #[arg(long, value_name = "FILE", required = true, num_args = 1..)]
        dataset: Vec<PathBuf>,
        /// Expected corpus bookkeeping; a mismatch exits with 4.
        #[arg(long, value_name = "FILE")]
        manifest: Option<PathBuf>,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

/// Resolved configuration plus the backends it implies.
struct Runtime {
    config: RunConfig,
    mock: Option<Arc<ScriptedBackend>>,
    clock: Arc<dyn Clock>,
    transcript: Arc<Transcript>,
}

impl Runtime {
    fn new(common: &CommonArgs, transcript_path: Option<&Path>) -> Result<Self, CliError> {
        let mut config = match &common.config {
            Some(p) => RunConfig::load(p).map_err(CliError::general)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            config.seed = s;
        }
        if let Some(p) = common.parallelism {
            config.parallelism = p;
        }
        if let Some(e) = common.explain_safe {
            config.explain_safe = e;
        }
        config.validate().map_err(CliError::general)?;

        let mock = match &common.mock_script {
            Some(p) => Some(Arc::new(ScriptedBackend::load(p).map_err(CliError::general)?)),
            None => None,
        };
        let clock: Arc<dyn Clock> = if mock.is_some() {
            Arc::new(FixedClock::epoch())
        } else {
            Arc::new(SystemClock)
        };
        let transcript = match transcript_path {
            Some(p) => Transcript::to_file(p).map_err(|e| CliError::general(format!("{}: {e}", p.display())))?,
            None => Transcript::in_memory(),
        };
        let transcript = Arc::new(transcript.with_clock(clock.clone()));
        Ok(Self {
            config,
            mock,
            clock,
            transcript,
        })
    }

    fn endpoint(&self, config: &EndpointConfig) -> Result<Endpoint, CliError> {
        let (backend, config): (Arc<dyn Backend>, EndpointConfig) = match &self.mock {
            Some(m) => (
                m.clone(),
                EndpointConfig {
                    backoff_ms: 0,
                    ..config.clone()
                },
            ),
            None => (
                Arc::new(HttpBackend::new(config).map_err(CliError::general)?),
                config.clone(),
            ),
        };
        Ok(Endpoint::new(backend, config)
            .map_err(CliError::general)?
            .with_transcript(self.transcript.clone())
            .with_parallelism(self.config.parallelism))
    }

    fn templates(&self) -> Result<TemplateSet, CliError> {
        match &self.config.templates {
            Some(p) => TemplateSet::load(p).map_err(|e| CliError::general(format!("{}: {e}", p.display()))),
            None => Ok(TemplateSet::default()),
        }
    }

    fn auditor(&self) -> Result<Auditor, CliError> {
        let e = &self.config.endpoints;
        let roles = Roles {
            detector: self.endpoint(&e.detector)?,
            reasoner: self.endpoint(&e.reasoner)?,
            agents: self.endpoint(&e.agents)?,
        };
        Ok(
            Auditor::new(self.templates()?, roles, AuditSettings::from(&self.config))
                .with_clock(self.clock.clone())
                .with_config_hash(self.config.hash()),
        )
    }
}

fn create_dir(out: &Path) -> CliResult {
    fs::create_dir_all(out).map_err(|e| CliError::general(format!("{}: {e}", out.display())))
}

fn write_file(path: &Path, content: &str) -> CliResult {
    fs::write(path, content).map_err(|e| CliError::general(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let mut s = serde_json::to_string_pretty(value).expect("output serializes");
    s.push('\n');
    write_file(path, &s)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::general(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::general(format!("{}: {e}", path.display())))
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CliError> {
    read_jsonl(path).map_err(CliError::general)
}

fn extract_error(e: ExtractError) -> CliError {
    match e {
        ExtractError::Parse { .. } | ExtractError::NoFunctions(_) | ExtractError::Io { .. } => {
            CliError::new(EXIT_NO_INPUT, e)
        }
        other => CliError::general(other),
    }
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Extract { path, out } => cmd_extract(&path, &out),
        Command::Audit {
            path,
            dataset,
            split,
            out,
        } => cmd_audit(&cli.common, path.as_deref(), dataset.as_deref(), split, &out),
        Command::Dataset(sub) => cmd_dataset(&cli.common, sub),
        Command::Eval {
            report,
            dataset,
            split,
            judge,
            out,
        } => cmd_eval(&cli.common, &report, &dataset, split, judge, &out),
    }
}

pub fn cmd_extract(path: &Path, out: &Path) -> CliResult {
    let project = Project::load(path).map_err(extract_error)?;
    create_dir(out)?;
    write_jsonl(&out.join("functions.jsonl"), &project.functions).map_err(CliError::general)?;
    write_json(&out.join("callgraph.json"), &project.graph)?;
    println!(
        "{} functions, {} call edges, {} unresolved call sites",
        project.functions.len(),
        project.graph.edges.len(),
        project.graph.unresolved_total()
    );
    Ok(())
}

pub fn cmd_audit(
    common: &CommonArgs,
    path: Option<&Path>,
    dataset: Option<&Path>,
    split: Option<SplitArg>,
    out: &Path,
) -> CliResult {
    create_dir(out)?;
    let rt = Runtime::new(common, Some(&out.join("transcript.jsonl")))?;
    let auditor = rt.auditor()?;
    let report = match (path, dataset) {
        (_, Some(d)) => {
            let mut entries: Vec<DatasetEntry> = jsonl(d)?;
            if let Some(s) = split {
                let s = Split::from(s);
                entries.retain(|e| e.split == s);
            }
            if entries.is_empty() {
                return Err(CliError::new(
                    EXIT_NO_INPUT,
                    format!("{}: no entries to audit", d.display()),
                ));
            }
            let name = d
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            auditor.audit_entries(&name, &entries)
        }
        (Some(p), None) => auditor.audit_project(p).map_err(|e| match e {
            solaudit_core::pipeline::PipelineError::Extract(x) => extract_error(x),
        })?,
        (None, None) => return Err(CliError::general("either a path or --dataset is required")),
    };
    write_file(&out.join("audit_report.json"), &report.to_json())?;
    write_file(&out.join("audit_summary.txt"), &render_summary(&report))?;
    let c = report.counts;
    println!(
        "{} functions: {} vulnerable, {} safe, {} failed",
        c.functions, c.vulnerable, c.safe, c.failed
    );
    if report.all_failed() {
        return Err(CliError::new(EXIT_ALL_FAILED, "every function failed to audit"));
    }
    Ok(())
}

pub fn cmd_dataset(common: &CommonArgs, sub: DatasetCommand) -> CliResult {
    match sub {
        DatasetCommand::Ingest { records, out } => {
            let records: Vec<ReportRecord> = jsonl(&records)?;
            let outcome = ingest_reports(&records);
            create_dir(&out)?;
            write_jsonl(&out.join("positives.jsonl"), &outcome.entries).map_err(CliError::general)?;
            println!(
                "{} positives, {} skipped, {} duplicates",
                outcome.entries.len(),
                outcome.skipped,
                outcome.duplicates
            );
            Ok(())
        }
        DatasetCommand::Negatives {
            candidates,
            knowledge,
            out,
        } => {
            let candidates: Vec<Candidate> = jsonl(&candidates)?;
            let knowledge: Vec<KnowledgeItem> = jsonl(&knowledge)?;
            create_dir(&out)?;
            let rt = Runtime::new(common, Some(&out.join("transcript.jsonl")))?;
            let judge = rt.endpoint(&rt.config.endpoints.judge)?;
            let outcome = derive_negatives(&candidates, &knowledge, &judge, rt.config.parallelism);
            write_jsonl(&out.join("negatives.jsonl"), &outcome.entries).map_err(CliError::general)?;
            println!(
                "{} negatives, {} matched known vulnerabilities, {} dropped",
                outcome.entries.len(),
                outcome.matched.len(),
                outcome.dropped.len()
            );
            Ok(())
        }
        DatasetCommand::Enhance { dataset, out } => {
            let entries: Vec<DatasetEntry> = jsonl(&dataset)?;
            create_dir(&out)?;
            let rt = Runtime::new(common, Some(&out.join("transcript.jsonl")))?;
            let endpoint = rt.endpoint(&rt.config.endpoints.judge)?;
            let enhanced = enhance_all(&entries, &endpoint, rt.config.parallelism);
            write_jsonl(&out.join("enhanced.jsonl"), &enhanced).map_err(CliError::general)?;
            let ok = enhanced
                .iter()
                .filter(|e| e.enhancement == Some(solaudit_core::dataset::EnhancementStatus::Enhanced))
                .count();
            println!(
                "{ok} of {} positives enhanced",
                enhanced.iter().filter(|e| e.label == Label::Vulnerable).count()
            );
            Ok(())
        }
        DatasetCommand::Split { dataset, manifest, out } => {
            let rt = Runtime::new(common, None)?;
            let mut entries: Vec<DatasetEntry> = Vec::new();
            for d in &dataset {
                entries.extend(jsonl::<DatasetEntry>(d)?);
            }
            let manifest: Option<CorpusManifest> = manifest.as_deref().map(read_json).transpose()?;
            let seed = match (&manifest, common.seed) {
                (_, Some(s)) => s,
                (Some(m), None) => m.seed,
                (None, None) => rt.config.seed,
            };
            if let Some(m) = &manifest {
                m.check_entries(&entries).map_err(|e| CliError::new(EXIT_MANIFEST, e))?;
            }
            let assignment = split(&entries, seed).map_err(CliError::general)?;
            if let Some(m) = &manifest {
                m.check_split(&assignment)
                    .map_err(|e| CliError::new(EXIT_MANIFEST, e))?;
            }
            apply_split(&mut entries, &assignment);
            entries.sort_by(|a, b| a.id.cmp(&b.id));
            create_dir(&out)?;
            write_jsonl(&out.join("dataset.jsonl"), &entries).map_err(CliError::general)?;
            write_json(&out.join("splits.json"), &assignment)?;
            let c = assignment.counts;
            println!("train {}, val {}, test {} (seed {seed})", c.train, c.val, c.test);
            Ok(())
        }
    }
}

pub fn cmd_eval(
    common: &CommonArgs,
    report: &Path,
    dataset: &Path,
    split: Option<SplitArg>,
    judge: bool,
    out: &Path,
) -> CliResult {
    let report: solaudit_core::pipeline::AuditReport = read_json(report)?;
    let mut entries: Vec<DatasetEntry> = jsonl(dataset)?;
    if let Some(s) = split {
        let s = Split::from(s);
        entries.retain(|e| e.split == s);
    }
    create_dir(out)?;
    let rt = Runtime::new(common, judge.then(|| out.join("transcript.jsonl")).as_deref())?;
    let mut eval = evaluate(&report, &entries, rt.clock.timestamp()).map_err(|e| match e {
        EvalError::IdMismatch { .. } => CliError::new(EXIT_ID_MISMATCH, e),
        other => CliError::general(other),
    })?;
    if judge {
        let endpoint = rt.endpoint(&rt.config.endpoints.judge)?;
        let by_id: std::collections::BTreeMap<&str, _> =
            report.functions.iter().map(|f| (f.function.id.as_str(), f)).collect();
        let mut positives: Vec<&DatasetEntry> = entries.iter().filter(|e| e.label == Label::Vulnerable).collect();
        positives.sort_by(|a, b| a.id.cmp(&b.id));
        let pairs: Vec<_> = positives
            .iter()
            .map(|e| (by_id.get(e.id.as_str()).and_then(|f| f.finding()), e.reason.as_str()))
            .collect();
        eval.consistency = Some(consistency_rate(&pairs, &endpoint, rt.config.parallelism));
    }
    write_json(&out.join("eval_report.json"), &eval)?;
    let m = eval.metrics;
    println!(
        "precision {:.4}  recall {:.4}  f1 {:.4}  accuracy {:.4}  (n = {})",
        m.precision, m.recall, m.f1, m.accuracy, eval.evaluated
    );
    if let Some(c) = eval.consistency {
        println!("consistency {:.4} ({}/{})", c.rate, c.consistent, c.total);
    }
    Ok(())
}
