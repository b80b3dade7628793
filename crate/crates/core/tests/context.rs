use solaudit_core::extract::{Project, SourceFile};

/// `hub` calls ten one-line helpers; each helper's normalized source,
/// `function hN() internal { x = N; }`, is 33 characters long.
fn hub_project() -> Project {
    let mut src = String::from("contract C {\n    uint x;\n    function hub() public {\n");
    for i in 0..10 {
        src.push_str(&format!("        h{i}();\n"));
    }
    src.push_str("    }\n");
    for i in 0..10 {
        src.push_str(&format!("    function h{i}() internal {{ x = {i}; }}\n"));
    }
    src.push_str("}\n");
    Project::from_sources(vec![SourceFile::new("hub.sol", src)]).unwrap()
}

fn callee_names(p: &Project, budget: usize) -> (Vec<String>, bool) {
    let hub = p.functions.iter().find(|f| f.name == "hub").unwrap();
    let ctx = p.context_for(hub, budget).unwrap();
    let names = ctx
        .callees
        .iter()
        .map(|e| p.function(&e.function_id).unwrap().name.clone())
        .collect();
    (names, ctx.truncated)
}

#[test]
fn helper_sources_have_the_annotated_length() {
    let p = hub_project();
    for f in p.functions.iter().filter(|f| f.name != "hub") {
        assert_eq!(f.source.chars().count(), 33, "{}", f.source);
    }
}

#[test]
fn tiny_budget_keeps_an_ordered_prefix() {
    let p = hub_project();
    // 3 × 33 = 99 fits in 100; a fourth would need 132
    assert_eq!(
        callee_names(&p, 100),
        (vec!["h0".into(), "h1".into(), "h2".into()], true)
    );
    assert_eq!(callee_names(&p, 32), (vec![], true));
    assert_eq!(callee_names(&p, 66).0.len(), 2);
}

#[test]
fn exact_budget_is_not_truncated() {
    let p = hub_project();
    let (names, truncated) = callee_names(&p, 330);
    assert_eq!(names, (0..10).map(|i| format!("h{i}")).collect::<Vec<_>>());
    assert!(!truncated);
}

#[test]
fn helpers_see_hub_as_caller() {
    let p = hub_project();
    let h3 = p.functions.iter().find(|f| f.name == "h3").unwrap();
    let hub = p.functions.iter().find(|f| f.name == "hub").unwrap();
    let ctx = p.context_for(h3, 10_000).unwrap();
    assert_eq!(ctx.callers.len(), 1);
    assert_eq!(ctx.callers[0].source, hub.source);
    assert!(ctx.callees.is_empty());
}

#[test]
fn context_is_deterministic() {
    let a = hub_project();
    let b = hub_project();
    let hub = |p: &Project| p.functions.iter().find(|f| f.name == "hub").unwrap().clone();
    let ca = serde_json::to_string(&a.context_for(&hub(&a), 150).unwrap()).unwrap();
    let cb = serde_json::to_string(&b.context_for(&hub(&b), 150).unwrap()).unwrap();
    assert_eq!(ca, cb);
}
