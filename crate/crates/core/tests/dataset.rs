use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use solaudit_core::backend::{Endpoint, Reply, ScriptedBackend};
use solaudit_core::dataset::{
    apply_split, clean_code, contains_link, derive_negatives, split, Candidate, CorpusManifest, DatasetEntry,
    EntryProvenance, KnowledgeItem, Split,
};
use solaudit_core::extract::normalize_code;
use solaudit_core::prompts::Label;

const GROUPS: [&str; 3] = ["reentrancy", "access control", "price oracle"];

fn knowledge() -> Vec<KnowledgeItem> {
    (0..6)
        .map(|k| KnowledgeItem {
            functionality_description: format!("functionality {k} of {}", GROUPS[k / 2]),
            negligence: format!("negligence {k}"),
            group_id: Some(format!("g{}", k / 2)),
            group_functionality: Some(format!("summary of {}", GROUPS[k / 2])),
            category: None,
        })
        .collect()
}

/// What the scripted judge answers "yes" to, per candidate.
#[derive(Default)]
struct Decisions {
    groups: BTreeSet<usize>,
    functionality: BTreeSet<usize>,
    negligence: BTreeSet<usize>,
}

fn decisions(i: usize) -> Decisions {
    let g = i % 3;
    let (a, b) = (2 * g, 2 * g + 1);
    let mut d = Decisions::default();
    match i {
        // group misses; functionality "yes" answers exist but are never asked
        0..30 => {
            d.functionality.insert(a);
            d.negligence.insert(a);
        }
        30..45 => {
            d.groups.insert(g);
        }
        // negligence matches only an item whose functionality did not
        45..63 => {
            d.groups.insert(g);
            d.functionality.insert(a);
            d.negligence.insert(b);
        }
        _ => {
            d.groups.insert(g);
            d.functionality.extend([a, b]);
            d.negligence.insert(b);
        }
    }
    d
}

fn candidate_code(i: usize) -> String {
    format!("function cand{i:03}(uint x) public {{\n    total += x;\n}}")
}

fn scripted_judge(n: usize, items: &[KnowledgeItem]) -> ScriptedBackend {
    let mut judge = ScriptedBackend::new().with_default("no");
    for i in 0..n {
        let marker = format!("cand{i:03}(");
        let d = decisions(i);
        for g in &d.groups {
            let summary = format!("summary of {}", GROUPS[*g]);
            judge = judge.on_all(&[&marker, "[stage: group]", &summary], vec![Reply::text("yes")]);
        }
        for k in &d.functionality {
            judge = judge.on_all(
                &[&marker, "[stage: functionality]", &items[*k].functionality_description],
                vec![Reply::text("Yes.")],
            );
        }
        for k in &d.negligence {
            judge = judge.on_all(
                &[&marker, "[stage: negligence]", &items[*k].negligence],
                vec![Reply::text("yes")],
            );
        }
    }
    judge
}

#[test]
fn hundred_candidates_yield_63_negatives() {
    let items = knowledge();
    let candidates: Vec<Candidate> = (0..100)
        .map(|i| Candidate {
            id: Some(format!("c{i:03}")),
            code: candidate_code(i),
            context: None,
            source_ref: "fixture".into(),
        })
        .collect();
    let judge = Endpoint::scripted(scripted_judge(100, &items)).with_parallelism(4);
    let out = derive_negatives(&candidates, &items, &judge, 4);

    // replay the scripted answers through the cascade by hand
    let expected: Vec<String> = (0..100)
        .filter(|&i| {
            let d = decisions(i);
            !(0..6).any(|k| d.groups.contains(&(k / 2)) && d.functionality.contains(&k) && d.negligence.contains(&k))
        })
        .map(|i| format!("c{i:03}"))
        .collect();
    assert_eq!(expected.len(), 63);

    let got: Vec<String> = out.entries.iter().map(|e| e.id.clone()).collect();
    assert_eq!(got, expected);
    assert_eq!(out.matched.len(), 37);
    assert!(out.dropped.is_empty());
    for e in &out.entries {
        assert_eq!(e.label, Label::Safe);
        assert_eq!(e.provenance, EntryProvenance::DerivedNegative);
        assert_eq!(normalize_code(&e.code), e.code);
    }
}

#[test]
fn unclear_judge_answer_drops_candidate() {
    let items = knowledge();
    let judge = Endpoint::scripted(ScriptedBackend::new().with_default("I am not sure"));
    let c = Candidate {
        id: Some("x".into()),
        code: candidate_code(0),
        ..Candidate::default()
    };
    let out = derive_negatives(&[c], &items, &judge, 1);
    assert_eq!((out.entries.len(), out.matched.len(), out.dropped.len()), (0, 0, 1));
}

fn synthetic_corpus(pos: usize, neg: usize) -> Vec<DatasetEntry> {
    (0..pos + neg)
        .map(|i| {
            let label = if i < pos { Label::Vulnerable } else { Label::Safe };
            DatasetEntry {
                id: format!("{}-{i:05}", if i < pos { "pos" } else { "neg" }),
                code: clean_code(&format!(
                    "function f{i}() public {{ x = {i}; }} // see https://example.com/{i}"
                )),
                context: None,
                label,
                reason: if i < pos { format!("reason {i}") } else { String::new() },
                provenance: if i < pos {
                    EntryProvenance::AuditReport
                } else {
                    EntryProvenance::DerivedNegative
                },
                source_ref: "synthetic".into(),
                split: Split::Unassigned,
                enhancement: None,
            }
        })
        .collect()
}

#[test]
fn canonical_manifest_bookkeeping() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/canonical_manifest.json");
    let manifest: CorpusManifest = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    manifest.validate().unwrap();
    assert_eq!(manifest.positives + manifest.negatives, 3544);
    assert_eq!(manifest.splits.train + manifest.splits.val + manifest.splits.test, 3544);

    let mut corpus = synthetic_corpus(1734, 1810);
    manifest.check_entries(&corpus).unwrap();
    let m = split(&corpus, manifest.seed).unwrap();
    manifest.check_split(&m).unwrap();
    assert_eq!((m.train.len(), m.val.len(), m.test.len()), (2268, 567, 709));

    let all: Vec<&String> = m.train.iter().chain(&m.val).chain(&m.test).collect();
    let unique: HashSet<&String> = all.iter().copied().collect();
    assert_eq!((all.len(), unique.len()), (3544, 3544));
    assert!(corpus.iter().all(|e| unique.contains(&e.id)));

    apply_split(&mut corpus, &m);
    let overall = 1734.0 / 3544.0;
    for s in [Split::Train, Split::Val, Split::Test] {
        let part: Vec<&DatasetEntry> = corpus.iter().filter(|e| e.split == s).collect();
        let share = part.iter().filter(|e| e.label == Label::Vulnerable).count() as f64 / part.len() as f64;
        assert!((share - overall).abs() <= 0.05, "{s:?}: {share}");
    }
    for e in &corpus {
        assert_eq!(normalize_code(&e.code), e.code);
        assert!(!contains_link(&e.code));
    }

    assert_eq!(split(&corpus, 42).unwrap(), m);
}

#[test]
fn inconsistent_manifest_is_rejected() {
    let bad = CorpusManifest {
        name: "bad".into(),
        positives: 1734,
        negatives: 1811,
        total: 3544,
        seed: 42,
        splits: solaudit_core::dataset::split_sizes(3544),
    };
    assert!(bad.validate().is_err());
}
