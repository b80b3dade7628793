//! Syntactic, intra-project call graph.
//!
//! A call site `name(args)` links to every project function called `name`
//! whose parameter count equals the argument count. Member calls
//! (`x.name(args)`) also accept one extra parameter, since `using L for T`
//! passes the receiver as the first argument. Candidates in the caller's own
//! contract win over candidates elsewhere. No inheritance or interface
//! dispatch is modelled.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::functions::{match_paren, parse_header, FunctionKind, FunctionRecord};
use super::lexer::{tokenize, Token, TokenKind};

/// Identifiers that may precede `(` without being a call.
const NON_CALL_WORDS: &[&str] = &[
    "if",
    "for",
    "while",
    "do",
    "return",
    "returns",
    "catch",
    "function",
    "mapping",
    "assembly",
    "unchecked",
    "else",
    "try",
    "event",
    "error",
    "modifier",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "GraphFile", into = "GraphFile")]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    pub edges: BTreeSet<(String, String)>,
    /// Unresolved call sites by callee name (builtins, casts, external calls).
    pub unresolved: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<String>,
    edges: Vec<EdgeEntry>,
}

#[derive(Serialize, Deserialize)]
struct EdgeEntry {
    caller: String,
    callee: String,
}

impl From<CallGraph> for GraphFile {
    fn from(g: CallGraph) -> Self {
        GraphFile {
            nodes: g.nodes.into_iter().collect(),
            edges: g
                .edges
                .into_iter()
                .map(|(caller, callee)| EdgeEntry { caller, callee })
                .collect(),
        }
    }
}

impl From<GraphFile> for CallGraph {
    fn from(f: GraphFile) -> Self {
        CallGraph {
            nodes: f.nodes.into_iter().collect(),
            edges: f.edges.into_iter().map(|e| (e.caller, e.callee)).collect(),
            unresolved: BTreeMap::new(),
        }
    }
}

impl CallGraph {
    pub fn callers_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |(_, b)| b == id).map(|(a, _)| a.as_str())
    }

    pub fn callees_of<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.edges.iter().filter(move |(a, _)| a == id).map(|(_, b)| b.as_str())
    }

    pub fn unresolved_total(&self) -> usize {
        self.unresolved.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct CallSite {
    pub name: String,
    pub args: usize,
    pub member: bool,
}

fn count_args(tokens: &[Token<'_>], open: usize, close: usize) -> usize {
    let inner = &tokens[open + 1..close];
    if inner.is_empty() {
        return 0;
    }
    // Named arguments: f({a: 1, b: 2})
    let named = inner.len() >= 2 && inner[0].is_punct('{') && inner[inner.len() - 1].is_punct('}');
    let slice = if named { &inner[1..inner.len() - 1] } else { inner };
    if slice.is_empty() {
        return 0;
    }
    let mut depth = 0i32;
    let mut commas = 0;
    for t in slice {
        if t.is_punct('(') || t.is_punct('[') || t.is_punct('{') {
            depth += 1;
        } else if t.is_punct(')') || t.is_punct(']') || t.is_punct('}') {
            depth -= 1;
        } else if t.is_punct(',') && depth == 0 {
            commas += 1;
        }
    }
    commas + 1
}

/// Call sites in the body of a (normalized) definition.
pub(crate) fn call_sites(record: &FunctionRecord) -> Vec<CallSite> {
    let tokens = tokenize(&record.source);
    let Some(header) = parse_header(&tokens, 0, &record.contract) else {
        return Vec::new();
    };
    let Some(open) = header.body_open else {
        return Vec::new();
    };
    let body = open + 1..tokens.len().saturating_sub(1);

    let mut sites = Vec::new();
    for i in body.clone() {
        let t = tokens[i];
        if t.kind != TokenKind::Ident || NON_CALL_WORDS.contains(&t.text) {
            continue;
        }
        let prev = i.checked_sub(1).map(|p| tokens[p]);
        if prev.is_some_and(|p| p.is_ident("emit") || p.is_ident("new") || p.is_ident("revert")) {
            continue;
        }
        let mut paren = i + 1;
        // call options: f{value: v}(...)
        if tokens.get(paren).is_some_and(|n| n.is_punct('{')) {
            let mut depth = 0usize;
            let mut k = paren;
            let mut end = None;
            while k < body.end {
                if tokens[k].is_punct('{') {
                    depth += 1;
                } else if tokens[k].is_punct('}') {
                    depth -= 1;
                    if depth == 0 {
                        end = Some(k);
                        break;
                    }
                }
                k += 1;
            }
            let has_colon = end.is_some_and(|e| tokens[paren..e].iter().any(|x| x.is_punct(':')));
            match end {
                Some(e) if has_colon => paren = e + 1,
                _ => continue,
            }
        }
        if !tokens.get(paren).is_some_and(|n| n.is_punct('(')) {
            continue;
        }
        let Some(close) = match_paren(&tokens, paren) else {
            continue;
        };
        sites.push(CallSite {
            name: t.text.to_string(),
            args: count_args(&tokens, paren, close),
            member: prev.is_some_and(|p| p.is_punct('.')),
        });
    }
    sites
}

/// Builds the call graph over one project's functions. Ids must be unique.
pub fn build_call_graph(functions: &[FunctionRecord]) -> CallGraph {
    let mut by_name: BTreeMap<&str, Vec<&FunctionRecord>> = BTreeMap::new();
    for f in functions.iter().filter(|f| f.kind == FunctionKind::Function) {
        by_name.entry(f.name.as_str()).or_default().push(f);
    }

    let mut graph = CallGraph {
        nodes: functions.iter().map(|f| f.id.clone()).collect(),
        ..CallGraph::default()
    };

    for caller in functions {
        for site in call_sites(caller) {
            let matches: Vec<&FunctionRecord> = by_name
                .get(site.name.as_str())
                .map(|cands| {
                    cands
                        .iter()
                        .copied()
                        .filter(|c| {
                            let arity = c.arity();
                            arity == site.args || (site.member && arity == site.args + 1)
                        })
                        .collect()
                })
                .unwrap_or_default();
            if matches.is_empty() {
                *graph.unresolved.entry(site.name).or_insert(0) += 1;
                continue;
            }
            let local: Vec<&FunctionRecord> = matches
                .iter()
                .copied()
                .filter(|c| c.contract == caller.contract)
                .collect();
            let targets = if local.is_empty() { matches } else { local };
            for callee in targets {
                graph.edges.insert((caller.id.clone(), callee.id.clone()));
            }
        }
    }
    graph
}
