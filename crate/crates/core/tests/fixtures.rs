//! Extraction and call-graph results against hand-annotated fixtures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use solaudit_core::extract::{Project, SourceFile};

#[derive(Debug, Deserialize, PartialEq)]
struct ExpectedFunction {
    contract: String,
    name: String,
    kind: String,
    signature: String,
    visibility: String,
    span: [usize; 2],
}

#[derive(Debug, Deserialize, PartialEq)]
struct Expected {
    functions: Vec<ExpectedFunction>,
    edges: Vec<(String, String)>,
    unresolved: BTreeMap<String, usize>,
}

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/sol")
}

fn actual(path: &Path) -> Expected {
    let name = path.file_name().unwrap().to_string_lossy().into_owned();
    let src = fs::read_to_string(path).unwrap();
    let project = Project::from_sources(vec![SourceFile::new(name, src)]).unwrap();
    let as_str = |v: serde_json::Value| v.as_str().unwrap().to_string();
    let functions = project
        .functions
        .iter()
        .map(|f| ExpectedFunction {
            contract: f.contract.clone(),
            name: f.name.clone(),
            kind: as_str(serde_json::to_value(f.kind).unwrap()),
            signature: f.signature.clone(),
            visibility: as_str(serde_json::to_value(f.visibility).unwrap()),
            span: [f.span.start, f.span.end],
        })
        .collect();
    let qname = |id: &str| project.function(id).unwrap().qualified_name();
    let mut edges: Vec<(String, String)> = project.graph.edges.iter().map(|(a, b)| (qname(a), qname(b))).collect();
    edges.sort();
    Expected {
        functions,
        edges,
        unresolved: project.graph.unresolved.clone(),
    }
}

#[test]
fn fixtures_match_annotations() {
    let mut sols: Vec<PathBuf> = fs::read_dir(fixture_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "sol"))
        .collect();
    sols.sort();
    assert!(sols.len() >= 10, "only {} fixtures", sols.len());

    let mut failures = Vec::new();
    for sol in &sols {
        let exp_path = sol.with_extension("expected.json");
        let expected: Expected = serde_json::from_str(&fs::read_to_string(&exp_path).unwrap()).unwrap();
        let got = actual(sol);
        if got != expected {
            failures.push(format!(
                "{}:\n  expected {expected:?}\n  got      {got:?}",
                sol.display()
            ));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn overloads_get_distinct_ids() {
    let p = actual(&fixture_dir().join("02_overload.sol"));
    let sigs: Vec<&str> = p.functions.iter().map(|f| f.signature.as_str()).collect();
    assert_eq!(sigs, ["address", "address,uint256"]);

    let src = fs::read_to_string(fixture_dir().join("02_overload.sol")).unwrap();
    let project = Project::from_sources(vec![SourceFile::new("02_overload.sol", src)]).unwrap();
    assert_ne!(project.functions[0].id, project.functions[1].id);
}
