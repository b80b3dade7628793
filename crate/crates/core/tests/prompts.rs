use std::collections::HashSet;

use proptest::prelude::*;
use solaudit_core::extract::{FunctionRecord, Project, SourceFile};
use solaudit_core::prompts::{
    parse_label, render_ranker, CriticAction, CriticFeedback, Label, LabelPolicy, RankAction, RankerDecision,
    TemplateSet, Vote, VARIANTS,
};
use solaudit_core::reasoner::{path_of, Explanation, PATHS};

const CONSTRAINTS: [&str; 10] = [
    "If one reason describes code that does not exist in the provided input, it is not valid.",
    "If one reason is not related to the code, the reason is not valid.",
    "If this reason violates the facts, the reason is unreasonable.",
    "If one reason is not related to the decision, the reason is not valid.",
    "If one reason assume any information that is not provided, the reason is not valid.",
    "If the code is safe and one reason supports the decision, please check if the code has other potential vulnerabilities. If the code has other potential vulnerabilities, the reason is not valid.",
    "The selected reason should be the most relevant to the decision.",
    "The selected reason must be the most reasonable and accurate one.",
    "The selected reason must be factual, logical and convincing.",
    "Do not make any assumption out of the given code.",
];

fn function() -> FunctionRecord {
    let src =
        "contract T {\n    function pay(address to, uint v) external {\n        payable(to).transfer(v);\n    }\n}\n";
    Project::from_sources(vec![SourceFile::new("t.sol", src)])
        .unwrap()
        .functions
        .remove(0)
}

#[test]
fn five_detector_and_ten_reasoner_paths() {
    let t = TemplateSet::default();
    let f = function();
    assert_eq!(VARIANTS, 5);
    let detector: HashSet<String> = (1..=5).map(|v| t.render_detector(&f, v, None).unwrap().text).collect();
    assert_eq!(detector.len(), 5);
    assert!(t.render_detector(&f, 0, None).is_err() && t.render_detector(&f, 6, None).is_err());

    assert_eq!(PATHS, 10);
    let ctx = solaudit_core::extract::CallContext::empty(&f.id);
    let mut texts = HashSet::new();
    let mut pairs = HashSet::new();
    for id in 1..=PATHS as u32 {
        let (variant, with_context) = path_of(id);
        pairs.insert((variant, with_context));
        let p = t
            .render_reasoner(&f, Label::Vulnerable, with_context.then_some(&ctx), variant)
            .unwrap();
        assert_eq!(p.text.contains("### As a Caller"), with_context);
        assert_eq!(p.text.matches(&f.source).count(), 1);
        texts.insert(p.text);
    }
    assert_eq!((pairs.len(), texts.len()), (10, 10));
}

#[test]
fn label_round_trip_and_precedence() {
    for label in [Label::Safe, Label::Vulnerable] {
        let target = format!("The label is {}.", label.as_str());
        assert_eq!(parse_label(&target, LabelPolicy::default()), Vote::from(label));
    }
    let table = [
        ("The label is safe.", Vote::Safe),
        ("the label is VULNERABLE", Vote::Vulnerable),
        ("I cannot decide.", Vote::Abstain),
        ("It is vulnerable, not safe.", Vote::Vulnerable),
        ("Safe? No: vulnerable.", Vote::Vulnerable),
    ];
    for (text, want) in table {
        assert_eq!(parse_label(text, LabelPolicy::default()), want, "{text}");
    }
}

fn explanation(id: u32) -> Explanation {
    let (variant, with_context) = path_of(id);
    Explanation {
        id,
        text: format!("candidate reason {id}"),
        variant,
        with_context,
        label_hint: Label::Vulnerable,
        usable: true,
    }
}

proptest! {
    #[test]
    fn every_ranker_prompt_has_all_constraints(
        n in 1u32..=10,
        safe in any::<bool>(),
        feedback in prop::option::of(0usize..3),
        rounds in 0usize..4,
    ) {
        let f = function();
        let cands: Vec<Explanation> = (1..=n).map(explanation).collect();
        let label = if safe { Label::Safe } else { Label::Vulnerable };
        let fb = feedback.map(|a| CriticFeedback {
            action: [CriticAction::Agree, CriticAction::Rerank, CriticAction::Merge][a],
            critique: "look again".into(),
            fallback: false,
        });
        let history: Vec<RankerDecision> = (0..rounds)
            .map(|r| RankerDecision {
                action: RankAction::Rank,
                chosen: vec![(r as u32 % n) + 1],
                confidence: 5,
                justification: format!("earlier pick {r}"),
                merged_text: None,
                fallback: false,
            })
            .collect();
        let p = render_ranker(&f, label, &cands, fb.as_ref(), &history);
        for c in CONSTRAINTS {
            prop_assert!(p.text.contains(c), "missing constraint: {}", c);
        }
        for c in &cands {
            prop_assert!(p.text.contains(&c.text));
        }
        for h in &history {
            prop_assert!(p.text.contains(&h.justification));
        }
    }
}
