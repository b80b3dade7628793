//! Prompt templates, rendering, and parsing of model output.

mod agents;
mod labels;

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use agents::{
    parse_agent_reply, parse_critic_reply, parse_ranker_reply, render_critic, render_ranker, AgentReply, AgentRole,
    CriticAction, CriticFeedback, MalformedReply, RankAction, RankerDecision, RANKER_CONSTRAINTS,
};
pub use labels::{parse_label, parse_yes_no, LabelPolicy, Vote};

use crate::extract::{CallContext, FunctionRecord};
use crate::sha256_hex;

/// Number of prompt variants per role.
pub const VARIANTS: usize = 5;

const DEFAULT_TEMPLATES: &str = include_str!("../../templates/default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Safe,
    Vulnerable,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Safe => "safe",
            Label::Vulnerable => "vulnerable",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "role")]
pub enum PromptKind {
    Detector { variant: u8 },
    Reasoner { variant: u8, with_context: bool },
    Ranker,
    Critic,
    Judge,
    Enhance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub text: String,
    /// Hash of the audited code; scopes scripted replies per function.
    pub code_hash: String,
    pub label_hint: Option<Label>,
}

impl RenderedPrompt {
    pub fn new(kind: PromptKind, text: String, code: &str) -> Self {
        Self {
            kind,
            text,
            code_hash: sha256_hex(code),
            label_hint: None,
        }
    }

    pub fn prompt_hash(&self) -> String {
        sha256_hex(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorVariant {
    pub index: u8,
    pub task_description: String,
    pub task_instruction: String,
    pub input_description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasonerVariant {
    pub index: u8,
    pub task_description: String,
    pub task_instruction: String,
    pub input_description: String,
    pub caller_description: String,
    pub callee_description: String,
    /// Label information plus chain-of-thought cue; `{label}` is substituted.
    pub response_preamble: String,
}

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template file: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed template file: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid template set: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("variant {0} out of range 1..={VARIANTS}")]
    VariantOutOfRange(u8),
    #[error("call context belongs to `{context}`, not `{function}`")]
    ContextMismatch { function: String, context: String },
}

/// A versioned set of five detector and five reasoner variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateSet {
    pub version: String,
    pub detector: Vec<DetectorVariant>,
    pub reasoner: Vec<ReasonerVariant>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATES).expect("built-in templates are valid")
    }
}

impl TemplateSet {
    pub fn parse(text: &str) -> Result<Self, TemplateError> {
        let mut set: TemplateSet = toml::from_str(text)?;
        set.detector.sort_by_key(|v| v.index);
        set.reasoner.sort_by_key(|v| v.index);
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), TemplateError> {
        let expected: Vec<u8> = (1..=VARIANTS as u8).collect();
        let check_indices = |role: &str, got: Vec<u8>| {
            if got != expected {
                return Err(TemplateError::Invalid(format!(
                    "{role} variants must have indices 1..={VARIANTS} exactly once, got {got:?}"
                )));
            }
            Ok(())
        };
        check_indices("detector", self.detector.iter().map(|v| v.index).collect())?;
        check_indices("reasoner", self.reasoner.iter().map(|v| v.index).collect())?;

        let distinct = |role: &str, wordings: Vec<String>| {
            let n = wordings.len();
            if wordings.into_iter().collect::<BTreeSet<_>>().len() != n {
                return Err(TemplateError::Invalid(format!(
                    "{role} variants must be pairwise distinct"
                )));
            }
            Ok(())
        };
        distinct(
            "detector",
            self.detector
                .iter()
                .map(|v| {
                    format!(
                        "{}\u{0}{}\u{0}{}",
                        v.task_description, v.task_instruction, v.input_description
                    )
                })
                .collect(),
        )?;
        distinct(
            "reasoner",
            self.reasoner
                .iter()
                .map(|v| {
                    format!(
                        "{}\u{0}{}\u{0}{}",
                        v.task_description, v.task_instruction, v.input_description
                    )
                })
                .collect(),
        )?;

        for v in &self.detector {
            if [&v.task_description, &v.task_instruction, &v.input_description]
                .iter()
                .any(|s| s.trim().is_empty())
            {
                return Err(TemplateError::Invalid(format!(
                    "detector variant {} has an empty slot",
                    v.index
                )));
            }
        }
        for v in &self.reasoner {
            let slots = [
                &v.task_description,
                &v.task_instruction,
                &v.input_description,
                &v.caller_description,
                &v.callee_description,
                &v.response_preamble,
            ];
            if slots.iter().any(|s| s.trim().is_empty()) {
                return Err(TemplateError::Invalid(format!(
                    "reasoner variant {} has an empty slot",
                    v.index
                )));
            }
            if !v.response_preamble.contains("{label}") {
                return Err(TemplateError::Invalid(format!(
                    "reasoner variant {} response preamble lacks {{label}}",
                    v.index
                )));
            }
        }
        Ok(())
    }

    fn detector_variant(&self, index: u8) -> Result<&DetectorVariant, RenderError> {
        index
            .checked_sub(1)
            .and_then(|i| self.detector.get(i as usize))
            .ok_or(RenderError::VariantOutOfRange(index))
    }

    fn reasoner_variant(&self, index: u8) -> Result<&ReasonerVariant, RenderError> {
        index
            .checked_sub(1)
            .and_then(|i| self.reasoner.get(i as usize))
            .ok_or(RenderError::VariantOutOfRange(index))
    }

    /// Detector prompt. `context` is only used when the detector is
    /// configured to see call context.
    pub fn render_detector(
        &self,
        function: &FunctionRecord,
        variant: u8,
        context: Option<&CallContext>,
    ) -> Result<RenderedPrompt, RenderError> {
        let v = self.detector_variant(variant)?;
        if let Some(ctx) = context {
            check_context(function, ctx)?;
        }
        let mut text = format!(
            "Below is an instruction that describes a classification task. {}\n\n### Instruction:\n{}\n\n### Input:\n{}:\n",
            v.task_description, v.task_instruction, v.input_description
        );
        push_code_block(&mut text, &function.source);
        if let Some(ctx) = context {
            push_context(
                &mut text,
                ctx,
                "Functions in the same project that call the target function",
                "Functions in the same project that the target function calls",
            );
        }
        text.push_str("### Response:\n");
        Ok(RenderedPrompt::new(
            PromptKind::Detector { variant },
            text,
            &function.source,
        ))
    }

    /// Reasoner prompt conditioned on the voted label, with or without the
    /// caller / callee sections.
    pub fn render_reasoner(
        &self,
        function: &FunctionRecord,
        label: Label,
        context: Option<&CallContext>,
        variant: u8,
    ) -> Result<RenderedPrompt, RenderError> {
        let v = self.reasoner_variant(variant)?;
        if let Some(ctx) = context {
            check_context(function, ctx)?;
        }
        let fill = |s: &str| s.replace("{label}", label.as_str());
        let mut text = format!(
            "Below is an instruction that describes a reasoning task. {}\n\n### Instruction:\n{}\n\n### Input:\n{}:\n",
            fill(&v.task_description),
            fill(&v.task_instruction),
            fill(&v.input_description)
        );
        push_code_block(&mut text, &function.source);
        if let Some(ctx) = context {
            push_context(
                &mut text,
                ctx,
                &fill(&v.caller_description),
                &fill(&v.callee_description),
            );
        }
        text.push_str("### Response:\n");
        text.push_str(&fill(&v.response_preamble));
        text.push('\n');
        let mut prompt = RenderedPrompt::new(
            PromptKind::Reasoner {
                variant,
                with_context: context.is_some(),
            },
            text,
            &function.source,
        );
        prompt.label_hint = Some(label);
        Ok(prompt)
    }
}

fn check_context(function: &FunctionRecord, ctx: &CallContext) -> Result<(), RenderError> {
    if ctx.function_id != function.id {
        return Err(RenderError::ContextMismatch {
            function: function.id.clone(),
            context: ctx.function_id.clone(),
        });
    }
    Ok(())
}

pub(crate) fn push_code_block(text: &mut String, code: &str) {
    text.push_str("```solidity\n");
    text.push_str(code);
    if !code.is_empty() && !code.ends_with('\n') {
        text.push('\n');
    }
    text.push_str("```\n");
}

fn push_context(text: &mut String, ctx: &CallContext, caller_desc: &str, callee_desc: &str) {
    let join = |xs: &[crate::extract::Excerpt]| xs.iter().map(|e| e.source.as_str()).collect::<Vec<_>>().join("\n\n");
    text.push_str("### As a Caller:\n");
    text.push_str(caller_desc);
    text.push('\n');
    push_code_block(text, &join(&ctx.callers));
    text.push_str("### As a Callee:\n");
    text.push_str(callee_desc);
    text.push('\n');
    push_code_block(text, &join(&ctx.callees));
}
