//! Solidity function extraction, code normalization and call context.
//!
//! Parsing is token based (no grammar): balanced braces, definition headers
//! and call sites are all the pipeline needs to build prompts.

mod callgraph;
mod functions;
mod lexer;
mod normalize;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use walkdir::WalkDir;

pub use callgraph::{build_call_graph, CallGraph};
pub use functions::{extract_functions, FunctionKind, FunctionRecord, Span, Visibility};
pub use lexer::{tokenize, Token, TokenKind};
pub use normalize::normalize_code;

use crate::sha256_hex;

/// Default per-side character budget for caller / callee excerpts.
pub const DEFAULT_CONTEXT_BUDGET: usize = 4_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("{path}:{line}: unbalanced braces")]
    Parse { path: String, line: usize },
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("context budget must be positive")]
    ZeroBudget,
    #[error("no Solidity functions found under {0}")]
    NoFunctions(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceFile {
    pub path: String,
    pub content: String,
    pub content_hash: String,
}

impl SourceFile {
    pub fn new(path: impl Into<String>, content: impl Into<String>) -> Self {
        let path = path.into();
        assert!(!path.is_empty(), "source path must be non-empty");
        let content = content.into();
        let content_hash = sha256_hex(&content);
        Self {
            path,
            content,
            content_hash,
        }
    }
}

/// Reads one `.sol` file, or every `.sol` file below a directory (sorted by
/// relative path).
pub fn load_sources(path: &Path) -> Result<Vec<SourceFile>, ExtractError> {
    let io = |p: &Path, e: std::io::Error| ExtractError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    if path.is_file() {
        let content = fs::read_to_string(path).map_err(|e| io(path, e))?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        return Ok(vec![SourceFile::new(name, content)]);
    }
    let mut files = Vec::new();
    for entry in WalkDir::new(path).sort_by_file_name() {
        let entry = entry.map_err(|e| ExtractError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let p = entry.path();
        if !entry.file_type().is_file() || p.extension().is_none_or(|ext| ext != "sol") {
            continue;
        }
        let content = fs::read_to_string(p).map_err(|e| io(p, e))?;
        let rel = p.strip_prefix(path).unwrap_or(p).to_string_lossy().replace('\\', "/");
        files.push(SourceFile::new(rel, content));
    }
    Ok(files)
}

/// Extracted functions of one project plus their call graph.
#[derive(Debug, Clone)]
pub struct Project {
    pub functions: Vec<FunctionRecord>,
    pub graph: CallGraph,
    index: BTreeMap<String, usize>,
}

impl Project {
    pub fn from_sources(files: Vec<SourceFile>) -> Result<Self, ExtractError> {
        let mut functions = Vec::new();
        for file in &files {
            functions.extend(extract_functions(file)?);
        }
        Ok(Self::from_functions(functions))
    }

    /// Assigns ids and builds the graph. Any ids already present are replaced.
    pub fn from_functions(mut functions: Vec<FunctionRecord>) -> Self {
        functions::assign_ids(&mut functions);
        let graph = build_call_graph(&functions);
        let index = functions.iter().enumerate().map(|(i, f)| (f.id.clone(), i)).collect();
        Self {
            functions,
            graph,
            index,
        }
    }

    pub fn load(path: &Path) -> Result<Self, ExtractError> {
        let project = Self::from_sources(load_sources(path)?)?;
        if project.functions.is_empty() {
            return Err(ExtractError::NoFunctions(path.display().to_string()));
        }
        Ok(project)
    }

    pub fn function(&self, id: &str) -> Option<&FunctionRecord> {
        self.index.get(id).map(|&i| &self.functions[i])
    }

    pub fn context_for(&self, function: &FunctionRecord, budget: usize) -> Result<CallContext, ExtractError> {
        context_for(function, &self.graph, |id| self.function(id), budget)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Excerpt {
    pub function_id: String,
    pub source: String,
}

/// Caller and callee source excerpts for one function.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallContext {
    pub function_id: String,
    pub callers: Vec<Excerpt>,
    pub callees: Vec<Excerpt>,
    pub truncated: bool,
}

impl CallContext {
    pub fn empty(function_id: impl Into<String>) -> Self {
        Self {
            function_id: function_id.into(),
            ..Self::default()
        }
    }
}

/// Packs neighbour excerpts (ordered by id) greedily into `budget`
/// characters per side. Packing stops at the first excerpt that does not
/// fit; the function's own source is never repeated as its own context.
pub fn context_for<'a>(
    function: &FunctionRecord,
    graph: &CallGraph,
    lookup: impl Fn(&str) -> Option<&'a FunctionRecord>,
    budget: usize,
) -> Result<CallContext, ExtractError> {
    if budget == 0 {
        return Err(ExtractError::ZeroBudget);
    }
    if !graph.nodes.contains(&function.id) {
        return Err(ExtractError::UnknownFunction(function.id.clone()));
    }

    let pack = |ids: Vec<&str>| -> (Vec<Excerpt>, bool) {
        let mut used = 0usize;
        let mut out = Vec::new();
        for id in ids {
            let Some(rec) = lookup(id) else { continue };
            let len = rec.source.chars().count();
            if used + len > budget {
                return (out, true);
            }
            used += len;
            out.push(Excerpt {
                function_id: id.to_string(),
                source: rec.source.clone(),
            });
        }
        (out, false)
    };

    let own = function.id.as_str();
    // edges are a BTreeSet, so both iterators already yield ids in order
    let callers: Vec<&str> = graph.callers_of(own).filter(|id| *id != own).collect();
    let callees: Vec<&str> = graph.callees_of(own).filter(|id| *id != own).collect();
    let (callers, cut_callers) = pack(callers);
    let (callees, cut_callees) = pack(callees);

    Ok(CallContext {
        function_id: function.id.clone(),
        callers,
        callees,
        truncated: cut_callers || cut_callees,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn project(src: &str) -> Project {
        Project::from_sources(vec![SourceFile::new("p.sol", src)]).unwrap()
    }

    #[test]
    fn isolated_node_has_empty_context() {
        let p = project("contract C { function a() public {} }");
        let ctx = p.context_for(&p.functions[0], 100).unwrap();
        assert!(ctx.callers.is_empty() && ctx.callees.is_empty());
        assert!(!ctx.truncated);
    }

    #[test]
    fn one_caller_one_callee_verbatim() {
        let p = project(
            "contract C {\n function a() public { b(); }\n function b() public { c(); }\n function c() public {}\n}",
        );
        let b = p.functions.iter().find(|f| f.name == "b").unwrap();
        let ctx = p.context_for(b, DEFAULT_CONTEXT_BUDGET).unwrap();
        assert_eq!(ctx.callers.len(), 1);
        assert_eq!(ctx.callers[0].source, p.functions[0].source);
        assert_eq!(ctx.callees[0].source, p.functions[2].source);
        assert!(!ctx.truncated);
    }

    #[test]
    fn unknown_function_and_zero_budget() {
        let p = project("contract C { function a() public {} }");
        let mut stranger = p.functions[0].clone();
        stranger.id = "nope".into();
        assert_eq!(
            p.context_for(&stranger, 10),
            Err(ExtractError::UnknownFunction("nope".into()))
        );
        assert_eq!(p.context_for(&p.functions[0], 0), Err(ExtractError::ZeroBudget));
    }

    #[test]
    fn recursion_does_not_repeat_own_source() {
        let p = project("contract C { function f(uint n) public { f(n); } }");
        let ctx = p.context_for(&p.functions[0], 1000).unwrap();
        assert!(ctx.callers.is_empty() && ctx.callees.is_empty());
    }

    #[test]
    fn duplicate_definitions_get_distinct_ids() {
        let files = vec![
            SourceFile::new("a.sol", "contract C { function f() public {} }"),
            SourceFile::new("b.sol", "contract C { function f() public {} }"),
        ];
        let p = Project::from_sources(files).unwrap();
        assert_ne!(p.functions[0].id, p.functions[1].id);
        assert!(p.functions[1].id.ends_with("~2"));
    }

    #[test]
    fn load_directory_sorted() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("b.sol"), "contract B { function b() public {} }").unwrap();
        fs::create_dir(dir.path().join("sub")).unwrap();
        fs::write(dir.path().join("sub/a.sol"), "contract A { function a() public {} }").unwrap();
        fs::write(dir.path().join("notes.txt"), "function x() {}").unwrap();
        let p = Project::load(dir.path()).unwrap();
        let files: Vec<_> = p.functions.iter().map(|f| f.file.as_str()).collect();
        assert_eq!(files, vec!["b.sol", "sub/a.sol"]);

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(Project::load(empty.path()), Err(ExtractError::NoFunctions(_))));
    }
}
