//! Two-level context organization: detects slot conventions repeated across
//! many tools, lifts each into a named global rule, and replaces duplicated
//! parameter-level wording with `@rule:<family>` pointers. Divergent local
//! conventions stay in place, marked with an `override:` prefix so the agent
//! knows the local text beats the global rule.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::families::{self, FamilyId};
use crate::schema::{CandidateContext, GlobalRule, ToolSchema};

/// A detected family: where it occurs and the canonical rule sentence that
/// replaces duplicated member descriptions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotFamily {
    pub family_name: FamilyId,
    /// `(tool, parameter)` members in inventory order.
    pub members: Vec<(String, String)>,
    pub canonical_rule_text: String,
}

impl SlotFamily {
    pub fn distinct_tools(&self) -> Vec<&str> {
        let mut tools: Vec<&str> = Vec::new();
        for (tool, _) in &self.members {
            if tools.last() != Some(&tool.as_str()) && !tools.contains(&tool.as_str()) {
                tools.push(tool);
            }
        }
        tools
    }
}

/// Scans the inventory for recurring slot semantics. A family is reported
/// when it occurs in at least `max(min_tools, ceil(min_fraction * n_tools))`
/// distinct tools. Classification is the fixed name/type rule set from
/// [`crate::families`]; detection is fully deterministic.
pub fn detect_slot_families(
    tools: &[ToolSchema],
    min_tools: usize,
    min_fraction: f64,
) -> Vec<SlotFamily> {
    let threshold = min_tools.max((min_fraction * tools.len() as f64).ceil() as usize);
    let mut found: BTreeMap<FamilyId, Vec<(String, String)>> = BTreeMap::new();
    for tool in tools {
        for param in &tool.parameters {
            if let Some(family) = families::classify_param(&param.name, param.param_type) {
                found
                    .entry(family)
                    .or_default()
                    .push((tool.name.clone(), param.name.clone()));
            }
        }
    }
    found
        .into_iter()
        .filter_map(|(family, members)| {
            let family_obj = SlotFamily {
                family_name: family,
                canonical_rule_text: families::rule_text(family).to_string(),
                members,
            };
            (family_obj.distinct_tools().len() >= threshold).then_some(family_obj)
        })
        .collect()
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Splits on sentence-final punctuation followed by whitespace or
/// end-of-text, keeping the punctuation with the sentence.
fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        current.push(c);
        let boundary = matches!(c, '.' | '!' | '?')
            && chars.get(i + 1).is_none_or(|n| n.is_whitespace());
        if boundary {
            let s = current.trim();
            if !s.is_empty() {
                sentences.push(s.to_string());
            }
            current.clear();
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        sentences.push(tail.to_string());
    }
    sentences
}

/// Sentence-level duplication test against the rule text: at least 80% of
/// the sentence's tokens must be covered by the rule's token set.
fn duplicates_rule(sentence: &str, rule_text: &str) -> bool {
    let sentence_tokens = tokenize(sentence);
    if sentence_tokens.is_empty() {
        return false;
    }
    let rule_tokens: std::collections::BTreeSet<String> = tokenize(rule_text).into_iter().collect();
    let covered = sentence_tokens
        .iter()
        .filter(|t| rule_tokens.contains(*t))
        .count();
    covered as f64 / sentence_tokens.len() as f64 >= 0.8
}

/// A retained sentence counts as a local override when it touches the
/// family's topic through cue words that do not come from the parameter's
/// own name (so plain label sentences like "The start date for this
/// request." stay unmarked).
fn is_override_sentence(sentence: &str, family: FamilyId, param_name: &str) -> bool {
    let cues = families::cue_words(family);
    let name_tokens: std::collections::BTreeSet<String> =
        tokenize(&families::canonicalize_param_name(param_name))
            .into_iter()
            .collect();
    tokenize(sentence)
        .iter()
        .any(|t| cues.contains(&t.as_str()) && !name_tokens.contains(t))
}

const OVERRIDE_PREFIX: &str = "override:";

/// Rewrites one member description. Returns `None` when nothing changes.
fn rewrite_description(description: &str, family: FamilyId, param_name: &str, rule_text: &str) -> Option<String> {
    let pointer = format!("@rule:{}", family.as_str());
    let mut has_pointer = description.contains(&pointer);
    let mut changed = false;
    let mut sentences: Vec<String> = Vec::new();
    for sentence in split_sentences(description) {
        if sentence.starts_with('@') || sentence.starts_with(&pointer) {
            sentences.push(sentence);
            continue;
        }
        if duplicates_rule(&sentence, rule_text) {
            changed = true;
            if !has_pointer {
                sentences.push(pointer.clone());
                has_pointer = true;
            }
            continue;
        }
        sentences.push(sentence);
    }
    if !has_pointer {
        return None;
    }
    for sentence in &mut sentences {
        if sentence.starts_with(OVERRIDE_PREFIX) || sentence.starts_with('@') {
            continue;
        }
        if is_override_sentence(sentence, family, param_name) {
            *sentence = format!("{OVERRIDE_PREFIX} {sentence}");
            changed = true;
        }
    }
    changed.then(|| sentences.join(" "))
}

/// Rewrites the context into the two-level organization for the given
/// families: one global rule per family (reused when already present),
/// duplicated member sentences replaced by `@rule:` pointers, divergent
/// member sentences kept and marked as overrides. Tool names, parameter
/// sets, types, and required lists are untouched; the operation is
/// idempotent.
pub fn globalize(ctx: &CandidateContext, detected: &[SlotFamily]) -> CandidateContext {
    let mut out = ctx.clone();
    for family in detected {
        if out.rule(family.family_name.as_str()).is_none() {
            out.global_rules.push(GlobalRule {
                name: family.family_name.as_str().to_string(),
                text: family.canonical_rule_text.clone(),
            });
        }
        for (tool_name, param_name) in &family.members {
            let Some(tool) = out.tools.iter_mut().find(|t| &t.name == tool_name) else {
                continue;
            };
            let Some(param) = tool.parameters.iter_mut().find(|p| &p.name == param_name) else {
                continue;
            };
            if let Some(rewritten) = rewrite_description(
                &param.description,
                family.family_name,
                param_name,
                &family.canonical_rule_text,
            ) {
                param.description = rewritten;
            }
        }
    }
    out
}

/// `families.json` report row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReportRow {
    pub family_name: FamilyId,
    pub member_count: usize,
    pub tools: Vec<String>,
}

pub fn family_report(families: &[SlotFamily]) -> Vec<FamilyReportRow> {
    families
        .iter()
        .map(|f| {
            let tools: Vec<String> = f.distinct_tools().iter().map(|s| s.to_string()).collect();
            FamilyReportRow {
                family_name: f.family_name,
                member_count: tools.len(),
                tools,
            }
        })
        .collect()
}

/// Context-editing prompt for the optional LLM globalization pass.
/// `<global_instructions>` and `<tools_list>` are replaced at build time.
pub const GLOBALIZATION_TEMPLATE: &str = r#"Role: You are a context editor for a tool-using LLM agent. You may revise (i) the Global Instructions and (ii) per-tool schemas (tool and argument descriptions).
Objective: Reduce repeated slot/argument guidance across tools while preserving tool-specific distinctions needed for correct tool selection and slot filling.

Current Global Instructions
<global_instructions>

Current Tool Definitions
<tools_list>

Step 1: Scan for repeated slot semantics.
Read each tool schema and its argument descriptions carefully. Identify recurring slot conventions that appear across many tools, such as: date/time windows, identifier formatting, numeric bounds (inclusive/exclusive), units/currency normalization, boolean/defaulting rules, pagination parameters, and sorting conventions.

Step 2: Globalize shared rules.
For each repeated convention, write a single, canonical rule in the Global Instructions that: (a) states the default interpretation and formatting requirements, and (b) specifies when to apply default values versus using user-provided constraints. The global rule should be phrased generically so it applies to any tool that contains the relevant slot(s).

Step 3: Keep exceptions local.
Do not merge, alias, or rename tools. For each tool schema:
- Remove redundant restatements of globalized rules and replace them with a short pointer (e.g. "See Global Instructions: [Rule Name]").
- If a tool requires different semantics (e.g. a different date format, special rounding, a stricter constraint), keep that information locally and explicitly mark it as an override of the global rule.

Constraints.
- Do not change tool interfaces: do not add/remove arguments or invent fields.
- Prefer minimal, high-impact edits: globalize only clearly repetitive conventions; keep tool-unique decision rules and edge cases local.

Output.
- An updated Global Instructions block to append (named rules + concise definitions).
- Updated schemas for only the tools you modified (short pointers + explicit overrides)."#;

pub fn build_globalization_prompt(ctx: &CandidateContext) -> String {
    let tools = serde_json::to_string_pretty(&ctx.tools).expect("tool serialization");
    GLOBALIZATION_TEMPLATE
        .replace("<global_instructions>", &ctx.global_instructions)
        .replace("<tools_list>", &tools)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{render_context, ParamType, ParameterSpec};

    fn dated_tool(name: &str, param: &str) -> ToolSchema {
        ToolSchema::new(name, format!("The {name} tool."))
            .with_param(ParameterSpec::new(
                param,
                format!(
                    "The start date for this request. {}",
                    families::rule_text(FamilyId::DatetimeFields)
                ),
                ParamType::String,
            ))
    }

    #[test]
    fn detection_requires_enough_distinct_tools() {
        let tools = vec![dated_tool("a", "startDate"), dated_tool("b", "start_date")];
        assert!(detect_slot_families(&tools, 5, 0.1).is_empty());
        let detected = detect_slot_families(&tools, 2, 0.1);
        assert_eq!(detected.len(), 1);
        assert_eq!(detected[0].family_name, FamilyId::DatetimeFields);
        assert_eq!(detected[0].members.len(), 2);
    }

    #[test]
    fn no_repeats_means_no_families() {
        let tools = vec![
            ToolSchema::new("a", "x").with_param(ParameterSpec::new(
                "topic",
                "The topic.",
                ParamType::String,
            )),
        ];
        assert!(detect_slot_families(&tools, 5, 0.1).is_empty());
    }

    #[test]
    fn duplicated_sentences_become_a_shared_rule_and_pointers() {
        let tools = vec![dated_tool("a", "startDate"), dated_tool("b", "start_date")];
        let ctx = CandidateContext::seed("P", tools);
        let families = detect_slot_families(&ctx.tools, 2, 0.1);
        let out = globalize(&ctx, &families);
        assert_eq!(out.global_rules.len(), 1);
        assert_eq!(out.global_rules[0].name, "datetime_fields");
        for tool in &out.tools {
            let desc = &tool.parameters[0].description;
            assert!(desc.contains("@rule:datetime_fields"), "{desc}");
            assert!(!desc.contains("ISO-8601"), "{desc}");
        }
        assert!(out.validate().ok());
    }

    #[test]
    fn empty_family_list_is_identity() {
        let ctx = CandidateContext::seed("P", vec![dated_tool("a", "startDate")]);
        assert_eq!(globalize(&ctx, &[]), ctx);
    }

    #[test]
    fn divergent_sentence_is_kept_and_marked_override() {
        let mut tool = dated_tool("a", "startDate");
        tool.parameters[0].description.push_str(
            " This tool instead requires epoch milliseconds since 1970-01-01 UTC.",
        );
        let ctx = CandidateContext::seed("P", vec![tool, dated_tool("b", "start_date")]);
        let families = detect_slot_families(&ctx.tools, 2, 0.1);
        let out = globalize(&ctx, &families);
        let desc = &out.tools[0].parameters[0].description;
        assert!(desc.contains("@rule:datetime_fields"), "{desc}");
        assert!(
            desc.contains("override: This tool instead requires epoch milliseconds"),
            "{desc}"
        );
        // The plain label sentence stays unmarked.
        assert!(desc.contains("The start date for this request."), "{desc}");
        assert!(!desc.contains("override: The start date"), "{desc}");
    }

    #[test]
    fn globalize_is_idempotent_and_structure_preserving() {
        let mut tool = dated_tool("a", "startDate");
        tool.parameters[0]
            .description
            .push_str(" This tool instead requires epoch milliseconds since 1970-01-01 UTC.");
        let ctx = CandidateContext::seed("P", vec![tool, dated_tool("b", "start_date")]);
        let families = detect_slot_families(&ctx.tools, 2, 0.1);
        let once = globalize(&ctx, &families);
        let twice = globalize(&once, &families);
        assert_eq!(once, twice);
        for (before, after) in ctx.tools.iter().zip(once.tools.iter()) {
            assert_eq!(before.name, after.name);
            assert_eq!(before.required, after.required);
            let names_before: Vec<_> = before.parameters.iter().map(|p| &p.name).collect();
            let names_after: Vec<_> = after.parameters.iter().map(|p| &p.name).collect();
            assert_eq!(names_before, names_after);
            for (pb, pa) in before.parameters.iter().zip(after.parameters.iter()) {
                assert_eq!(pb.param_type, pa.param_type);
            }
        }
    }

    #[test]
    fn globalize_shrinks_rendered_context_when_duplicates_exist() {
        let tools: Vec<ToolSchema> = (0..6)
            .map(|i| dated_tool(&format!("tool_{i}"), "startDate"))
            .collect();
        let ctx = CandidateContext::seed("P", tools);
        let families = detect_slot_families(&ctx.tools, 2, 0.1);
        let out = globalize(&ctx, &families);
        let before = render_context(&ctx, "q").unwrap().len();
        let after = render_context(&out, "q").unwrap().len();
        assert!(after < before, "expected shrink, got {before} -> {after}");
    }

    #[test]
    fn globalization_prompt_instantiates() {
        let ctx = CandidateContext::seed("Use tools.", vec![dated_tool("a", "startDate")]);
        let prompt = build_globalization_prompt(&ctx);
        assert!(prompt.contains("Use tools."));
        assert!(prompt.contains("\"a\""));
        assert!(!prompt.contains("<global_instructions>"));
    }
}
