//! Prompt templates and static zero-shot strategies.
//!
//! Placeholders are `{name}` with `name` matching `[a-z_][a-z0-9_]*`; any other
//! brace (the JSON skeletons in the output formats) is literal text.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::AgentType;

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("template {template}: unbound placeholder `{name}`")]
    Unbound { template: TemplateId, name: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Dst,
    Dp,
    Nlg,
    UserSim,
    E2ePart1,
    E2ePart2,
    Arbiter,
    Genesis,
    Mutation,
    Consolidation,
}

const DST: &str = include_str!("templates/dst.txt");
const DP: &str = include_str!("templates/dp.txt");
const NLG: &str = include_str!("templates/nlg.txt");
const USER_SIM: &str = include_str!("templates/usersim.txt");
const E2E_PART1: &str = include_str!("templates/e2e_part1.txt");
const E2E_PART2: &str = include_str!("templates/e2e_part2.txt");
const ARBITER: &str = include_str!("templates/arbiter.txt");
const GENESIS: &str = include_str!("templates/genesis.txt");
const MUTATION: &str = include_str!("templates/mutation.txt");
const CONSOLIDATION: &str = include_str!("templates/consolidation.txt");

const STATIC_DST: &str = include_str!("templates/static_dst.txt");
const STATIC_DP: &str = include_str!("templates/static_dp.txt");
const STATIC_NLG: &str = include_str!("templates/static_nlg.txt");

/// Hand-written strategy used by `agent` in zero-shot mode.
pub fn static_strategy(agent: AgentType) -> &'static str {
    match agent {
        AgentType::Dst => STATIC_DST.trim_end(),
        AgentType::Dp => STATIC_DP.trim_end(),
        AgentType::Nlg => STATIC_NLG.trim_end(),
    }
}

impl TemplateId {
    pub const ALL: [TemplateId; 10] = [
        TemplateId::Dst,
        TemplateId::Dp,
        TemplateId::Nlg,
        TemplateId::UserSim,
        TemplateId::E2ePart1,
        TemplateId::E2ePart2,
        TemplateId::Arbiter,
        TemplateId::Genesis,
        TemplateId::Mutation,
        TemplateId::Consolidation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Dst => "dst",
            TemplateId::Dp => "dp",
            TemplateId::Nlg => "nlg",
            TemplateId::UserSim => "user_sim",
            TemplateId::E2ePart1 => "e2e_part1",
            TemplateId::E2ePart2 => "e2e_part2",
            TemplateId::Arbiter => "arbiter",
            TemplateId::Genesis => "genesis",
            TemplateId::Mutation => "mutation",
            TemplateId::Consolidation => "consolidation",
        }
    }

    pub fn body(self) -> &'static str {
        match self {
            TemplateId::Dst => DST,
            TemplateId::Dp => DP,
            TemplateId::Nlg => NLG,
            TemplateId::UserSim => USER_SIM,
            TemplateId::E2ePart1 => E2E_PART1,
            TemplateId::E2ePart2 => E2E_PART2,
            TemplateId::Arbiter => ARBITER,
            TemplateId::Genesis => GENESIS,
            TemplateId::Mutation => MUTATION,
            TemplateId::Consolidation => CONSOLIDATION,
        }
    }

    /// Whether the template belongs to an online agent (and so honors the
    /// critique and reasoning toggles).
    pub fn is_online(self) -> bool {
        matches!(
            self,
            TemplateId::Dst
                | TemplateId::Dp
                | TemplateId::Nlg
                | TemplateId::UserSim
                | TemplateId::E2ePart1
                | TemplateId::E2ePart2
        )
    }

    /// Placeholder names in order of first appearance.
    pub fn variables(self) -> Vec<&'static str> {
        let mut seen = BTreeSet::new();
        placeholders(self.body())
            .map(|(_, _, name)| name)
            .filter(|n| seen.insert(*n))
            .collect()
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template `{s}`"))
    }
}

/// Yields `(start, end, name)` for every placeholder; `end` is exclusive.
fn placeholders(body: &str) -> impl Iterator<Item = (usize, usize, &str)> {
    let bytes = body.as_bytes();
    let mut i = 0;
    std::iter::from_fn(move || {
        while i < bytes.len() {
            if bytes[i] == b'{' {
                let start = i;
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j].is_ascii_lowercase() || bytes[j] == b'_') {
                    j += 1;
                    while j < bytes.len()
                        && (bytes[j].is_ascii_lowercase() || bytes[j].is_ascii_digit() || bytes[j] == b'_')
                    {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j] == b'}' {
                        i = j + 1;
                        return Some((start, j + 1, &body[start + 1..j]));
                    }
                }
                i = start + 1;
            } else {
                i += 1;
            }
        }
        None
    })
}

/// Which optional output fields the online agents are asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptOptions {
    pub critique: bool,
    pub reasoning: bool,
}

impl Default for PromptOptions {
    fn default() -> Self {
        PromptOptions {
            critique: true,
            reasoning: true,
        }
    }
}

/// Removes the `critique` and/or `reason` lines from the output-format
/// skeleton, fixing the trailing comma they leave behind.
fn strip_output_fields(body: &str, opts: PromptOptions) -> String {
    let Some(fmt_at) = body.find("Output Format") else {
        return body.to_string();
    };
    let (head, tail) = body.split_at(fmt_at);
    let mut kept: Vec<String> = Vec::new();
    for line in tail.split_inclusive('\n') {
        let t = line.trim_start();
        let drop = (!opts.critique && t.starts_with("\"critique\"")) || (!opts.reasoning && t.starts_with("\"reason\""));
        if drop {
            continue;
        }
        if t.starts_with('}') {
            if let Some(prev) = kept.last_mut() {
                let trimmed = prev.trim_end();
                if let Some(no_comma) = trimmed.strip_suffix(',') {
                    let ending = &prev[trimmed.len()..];
                    *prev = format!("{no_comma}{ending}");
                }
            }
        }
        kept.push(line.to_string());
    }
    format!("{head}{}", kept.concat())
}

/// Renders `template` with every placeholder bound from `vars`.
pub fn render_prompt(template: TemplateId, vars: &BTreeMap<String, String>) -> Result<String, TemplateError> {
    render_with(template, vars, PromptOptions::default())
}

pub fn render_with(
    template: TemplateId,
    vars: &BTreeMap<String, String>,
    opts: PromptOptions,
) -> Result<String, TemplateError> {
    let body = if template.is_online() && opts != PromptOptions::default() {
        std::borrow::Cow::Owned(strip_output_fields(template.body(), opts))
    } else {
        std::borrow::Cow::Borrowed(template.body())
    };
    let mut out = String::with_capacity(body.len() + 256);
    let mut last = 0;
    for (start, end, name) in placeholders(&body) {
        let value = vars.get(name).ok_or_else(|| TemplateError::Unbound {
            template,
            name: name.to_string(),
        })?;
        out.push_str(&body[last..start]);
        out.push_str(value);
        last = end;
    }
    out.push_str(&body[last..]);
    Ok(out)
}
