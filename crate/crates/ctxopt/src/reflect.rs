//! Reflector plumbing: builds the edit-proposal prompt from rollout
//! feedback, parses and validates the reflector's JSON answer, applies the
//! resulting edits, and merges a draft context with the validation-best
//! context ("growing playbook": best-context lines are never dropped).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::CompletionBackend;
use crate::dataset::ToolCall;
use crate::diagnose::{FailureKind, FailureSignal};
use crate::schema::{apply_tool_revision, CandidateContext, SchemaError, ToolSchema};

/// Edit-proposal prompt. `<curr_instructions>`, `<tools_list_to_update>`,
/// and `<dataset_with_feedback>` are replaced at build time.
pub const REFLECTION_TEMPLATE: &str = r#"Task: Update the global instructions and tool descriptions using the feedback on the current context.

Current Global Instructions
<curr_instructions>

Current Tool Definitions (Full List)
<tools_list_to_update>

Objective. Produce:
- global_instructions: updated system-level guidance.
- example_specific_instructions: batch-specific guidance to append to prior examples/hints.
- tool_revisions: only the tools you modified (not the entire tool list).

Feedback Trace
<dataset_with_feedback>
For each example, the feedback indicates whether the model:
- failed to call a tool that should have been called, or
- called the wrong tool instead of the correct one, or
- selected the correct tool but produced incorrect action_inputs (missing/wrong parameters), or
- selected the correct parameters but assigned incorrect slot names/values (formatting/value errors).

Instructions Revision Rules (Important)
- The instructions may already contain prior revisions and examples.
- Always preserve previously incorporated example_specific_instructions and example hints; do not alter them.
- Modify existing example_specific_instructions only if there is a direct conflict with the current feedback.
- Add new guidance as bullet points appended to the existing list under example_specific_instructions.

Tool Revision Rules (Important)
- If an answer is marked wrong, check two cases:
  - Case 1 (Model error): If a tool-selection error occurred (a tool should have been chosen but was not, or was chosen but should not have been), you must revise the relevant tool description(s) to make correct usage clearer. Otherwise, you may leave the tool unchanged.
  - Case 2 (Documentation/data issue): Tool documentation may be ambiguous or incomplete, and ground-truth traces may contain incorrect tool arguments or values. If you detect such issues, revise the tool documentation to remove ambiguity so future runs avoid the same failure.
- Return only the tools you modified from the provided tool list.

Output Format (Strict)
- Return a single JSON object immediately after the literal text Answer:
- Do not add any extra text before or after the JSON.

Required JSON Schema
{
  "global_instructions": "UPDATED GLOBAL INSTRUCTIONS HERE",
  "example_specific_instructions": "UPDATED INSTRUCTIONS AS PER THE CURRENT BATCH",
  "tool_revisions": [
    {
      "name": "<tool1_name>",
      "description": "<tool1_description>",
      "parameters": {
        "type": "dict",
        "properties": {
          "<property1>": {"description": "<updated tool1_property1_description>", "type": "<property1_type; same as original>"},
          "<property2>": {"description": "<updated tool1_property2_description>", "type": "<property2_type; same as original>"}
        },
        "required": ["<property1; required parameters; identical to original>"]
      },
      "required": null
    }
  ]
}

Final constraint: Answer: must be followed by only the JSON object."#;

/// Instruction-merge prompt. `<best_global_instructions>`,
/// `<draft_global_instructions>`, and `<new_tools_summary>` are replaced at
/// build time.
pub const MERGE_TEMPLATE: &str = r#"Role: You are the instruction merger in a tool-calling agent. Combine a draft update with the current best global instructions into a single improved instruction prompt.

Inputs
- Global best instructions: <best_global_instructions>
- Draft instructions from current rollout: <draft_global_instructions>
- (Optional) Newly added tools since the best context: <new_tools_summary>

Objective. Produce merged instructions that:
- preserve stable, broadly useful guidance from the global best (the "growing playbook"),
- incorporate new and validated guidance from the draft additively,
- remain concise and non-redundant (avoid restating the same rule twice),
- support incremental toolset growth: keep cross-cutting rules stable while adding any new decision rules introduced by newly appended tools.

Merge Rules (Strict)
- Do not overwrite: never delete a rule from the global best unless the draft provides a clearly conflicting correction.
- Prefer generalization: if the draft adds a rule that generalizes an existing one, keep the generalized version and remove the narrower duplicate.
- Resolve conflicts explicitly: if a draft rule contradicts an existing rule, keep the version that is more precise and operational (clear triggers, clear expected behavior), and remove the other.
- Tool-growth compatibility: if a draft rule is specific to a newly added tool, include it only if it can be stated as a general decision rule (when-to-use / how-to-fill), otherwise keep it minimal and non-invasive.
- No tool merging: do not rename, alias, or merge tools; only adjust global instruction text.

Output Format (Strict)
- Return only the merged global instructions as plain text.
- No JSON. No commentary. No additional sections."#;

/// Reminder appended to the prompt when the previous answer failed to parse.
pub const FORMAT_REMINDER: &str = "\n\nReminder: your previous answer could not be parsed. Return a single JSON object immediately after the literal text Answer: with the fields global_instructions, example_specific_instructions, and tool_revisions (only the tools you modified, with parameter names, types, and required list identical to the original). Do not add any other text.";

const ANSWER_MARKER: &str = "Answer:";

#[derive(Debug, Error)]
pub enum ReflectError {
    #[error("reflector output unparseable: {message}")]
    ParseFailure { message: String },
    #[error("reflector output fails schema validation: {message}")]
    SchemaFailure { message: String },
    #[error("merge backend failed: {message}")]
    MergeBackendFailure { message: String },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

/// A validated edit proposal. `None` instruction fields mean "keep the
/// current text"; `tool_revisions` carries only the revised tools.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EditSet {
    pub global_instructions: Option<String>,
    pub example_specific_instructions: Option<String>,
    #[serde(default)]
    pub tool_revisions: Vec<ToolSchema>,
}

impl EditSet {
    pub fn is_noop(&self) -> bool {
        self.global_instructions.is_none()
            && self
                .example_specific_instructions
                .as_ref()
                .is_none_or(|s| s.trim().is_empty())
            && self.tool_revisions.is_empty()
    }

    /// Renders the edit set the way a well-behaved reflector would answer.
    pub fn to_answer_text(&self) -> String {
        let mut obj = serde_json::Map::new();
        if let Some(gi) = &self.global_instructions {
            obj.insert("global_instructions".into(), gi.clone().into());
        }
        if let Some(esi) = &self.example_specific_instructions {
            obj.insert("example_specific_instructions".into(), esi.clone().into());
        }
        obj.insert(
            "tool_revisions".into(),
            serde_json::to_value(&self.tool_revisions).expect("tool serialization"),
        );
        format!("Answer: {}", serde_json::Value::Object(obj))
    }
}

/// One failed example with its trace pair and diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackItem {
    pub example_id: String,
    pub query: String,
    pub predicted_calls: Vec<ToolCall>,
    pub gold_calls: Vec<ToolCall>,
    pub signals: Vec<FailureSignal>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeedbackBundle {
    pub items: Vec<FeedbackItem>,
}

impl FeedbackBundle {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// The feedback phrase for a failure kind, matching the prompt's four cases.
pub fn feedback_phrase(kind: FailureKind) -> &'static str {
    match kind {
        FailureKind::MissedTool | FailureKind::BackendError => {
            "failed to call a tool that should have been called"
        }
        FailureKind::WrongTool | FailureKind::ExtraTool => {
            "called the wrong tool instead of the correct one"
        }
        FailureKind::MissingSlot | FailureKind::WrongValue => {
            "selected the correct tool but produced incorrect action_inputs (missing/wrong parameters)"
        }
        FailureKind::FormatViolation => {
            "selected the correct parameters but assigned incorrect slot names/values (formatting/value errors)"
        }
    }
}

fn render_current_instructions(ctx: &CandidateContext) -> String {
    let mut out = ctx.global_instructions.clone();
    if !ctx.global_rules.is_empty() {
        out.push_str("\n\nGlobal rules:\n");
        for rule in &ctx.global_rules {
            out.push_str(&format!("- {}: {}\n", rule.name, rule.text));
        }
    }
    if !ctx.example_specific_instructions.trim().is_empty() {
        out.push_str("\n\nExample-specific instructions:\n");
        out.push_str(&ctx.example_specific_instructions);
    }
    out
}

fn render_feedback(feedback: &FeedbackBundle) -> String {
    let items: Vec<serde_json::Value> = feedback
        .items
        .iter()
        .map(|item| {
            let signals: Vec<serde_json::Value> = item
                .signals
                .iter()
                .map(|signal| {
                    let mut value =
                        serde_json::to_value(signal).expect("signal serialization");
                    if let Some(obj) = value.as_object_mut() {
                        // The item header already names the example.
                        obj.remove("example_id");
                        obj.insert("case".into(), feedback_phrase(signal.kind).into());
                    }
                    value
                })
                .collect();
            serde_json::json!({
                "example_id": item.example_id,
                "query": item.query,
                "predicted_calls": item.predicted_calls,
                "gold_calls": item.gold_calls,
                "feedback": signals,
            })
        })
        .collect();
    serde_json::to_string_pretty(&items).expect("feedback serialization")
}

/// Instantiates the edit-proposal template for the current context and
/// aggregated feedback. Byte-deterministic in its inputs.
pub fn build_reflection_prompt(ctx: &CandidateContext, feedback: &FeedbackBundle) -> String {
    let tools =
        serde_json::to_string_pretty(&ctx.tools).expect("tool serialization");
    REFLECTION_TEMPLATE
        .replace("<curr_instructions>", &render_current_instructions(ctx))
        .replace("<tools_list_to_update>", &tools)
        .replace("<dataset_with_feedback>", &render_feedback(feedback))
}

/// Parses the reflector's answer: the JSON object after the last `Answer:`
/// marker. Unknown fields are ignored; a missing `tool_revisions` list means
/// no tool edits; missing instruction fields mean "keep current". Revisions
/// are validated against the inventory — naming an unknown tool or changing
/// schema structure is a schema failure.
pub fn parse_reflector_output(
    text: &str,
    inventory: &[ToolSchema],
) -> Result<EditSet, ReflectError> {
    let pos = text.rfind(ANSWER_MARKER).ok_or_else(|| ReflectError::ParseFailure {
        message: format!("no `{ANSWER_MARKER}` marker in output"),
    })?;
    let rest = &text[pos + ANSWER_MARKER.len()..];
    let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<serde_json::Value>();
    let value = match stream.next() {
        Some(Ok(v)) => v,
        Some(Err(e)) => {
            return Err(ReflectError::ParseFailure {
                message: format!("invalid JSON after marker: {e}"),
            })
        }
        None => {
            return Err(ReflectError::ParseFailure {
                message: "nothing follows the marker".into(),
            })
        }
    };
    let obj = value.as_object().ok_or_else(|| ReflectError::ParseFailure {
        message: "answer is not a JSON object".into(),
    })?;

    let text_field = |key: &str| -> Result<Option<String>, ReflectError> {
        match obj.get(key) {
            None | Some(serde_json::Value::Null) => Ok(None),
            Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
            Some(other) => Err(ReflectError::SchemaFailure {
                message: format!("`{key}` must be a string, got {other}"),
            }),
        }
    };
    let global_instructions = text_field("global_instructions")?;
    let example_specific_instructions = text_field("example_specific_instructions")?;

    let mut tool_revisions = Vec::new();
    match obj.get("tool_revisions") {
        None | Some(serde_json::Value::Null) => {}
        Some(serde_json::Value::Array(items)) => {
            let mut seen = BTreeSet::new();
            for item in items {
                let revision: ToolSchema = serde_json::from_value(item.clone()).map_err(|e| {
                    ReflectError::SchemaFailure {
                        message: format!("bad tool revision: {e}"),
                    }
                })?;
                if !seen.insert(revision.name.clone()) {
                    return Err(ReflectError::SchemaFailure {
                        message: format!("duplicate revision for tool `{}`", revision.name),
                    });
                }
                let original = inventory
                    .iter()
                    .find(|t| t.name == revision.name)
                    .ok_or_else(|| ReflectError::SchemaFailure {
                        message: format!("revision names unknown tool `{}`", revision.name),
                    })?;
                // Dry-run so structural mutations are caught at parse time.
                apply_tool_revision(original, &revision).map_err(|e| {
                    ReflectError::SchemaFailure {
                        message: e.to_string(),
                    }
                })?;
                tool_revisions.push(revision);
            }
        }
        Some(other) => {
            return Err(ReflectError::SchemaFailure {
                message: format!("`tool_revisions` must be an array, got {other}"),
            })
        }
    }

    Ok(EditSet {
        global_instructions,
        example_specific_instructions,
        tool_revisions,
    })
}

/// Applies a validated edit set: global instructions are replaced,
/// example-specific guidance is appended to the existing text, and each
/// named tool goes through the schema-preserving revision path. Unnamed
/// tools are untouched.
pub fn apply_edits(ctx: &CandidateContext, edits: &EditSet) -> Result<CandidateContext, ReflectError> {
    let mut out = ctx.clone();
    if let Some(gi) = &edits.global_instructions {
        out.global_instructions = gi.clone();
    }
    if let Some(esi) = &edits.example_specific_instructions {
        if !esi.trim().is_empty() {
            if out.example_specific_instructions.trim().is_empty() {
                out.example_specific_instructions = esi.clone();
            } else {
                out.example_specific_instructions.push('\n');
                out.example_specific_instructions.push_str(esi);
            }
        }
    }
    for revision in &edits.tool_revisions {
        let position = out
            .tools
            .iter()
            .position(|t| t.name == revision.name)
            .ok_or_else(|| ReflectError::SchemaFailure {
                message: format!("revision names unknown tool `{}`", revision.name),
            })?;
        out.tools[position] = apply_tool_revision(&out.tools[position], revision)?;
    }
    Ok(out)
}

fn normalize_line(line: &str) -> String {
    line.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Appends to `base` every `addition` line not already present after
/// whitespace normalization. Base lines are preserved verbatim and in order.
pub fn dedup_append_lines(base: &str, addition: &str) -> String {
    let mut seen: BTreeSet<String> = base
        .lines()
        .map(normalize_line)
        .filter(|l| !l.is_empty())
        .collect();
    let mut out: Vec<&str> = base.lines().collect();
    for line in addition.lines() {
        let normalized = normalize_line(line);
        if normalized.is_empty() || seen.contains(&normalized) {
            continue;
        }
        seen.insert(normalized);
        out.push(line);
    }
    out.join("\n")
}

/// How merged global instructions are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MergeMode {
    Llm,
    Deterministic,
}

/// Builds the instruction-merge prompt for the LLM merge path.
pub fn build_merge_prompt(draft: &CandidateContext, best: &CandidateContext) -> String {
    MERGE_TEMPLATE
        .replace("<best_global_instructions>", &best.global_instructions)
        .replace("<draft_global_instructions>", &draft.global_instructions)
        .replace("<new_tools_summary>", "none")
}

/// Merges a draft context with the validation-best context.
///
/// Global instructions: deterministic mode keeps every best line and appends
/// novel draft lines; LLM mode delegates to the merge prompt (the backend's
/// plain-text answer becomes the merged instructions). Tools: per tool, the
/// draft version wins when the draft revised it this round (`revised_tools`),
/// the best version is kept otherwise. Global rules and example-specific
/// guidance merge additively, best first.
pub fn merge_with_best(
    draft: &CandidateContext,
    best: &CandidateContext,
    revised_tools: &BTreeSet<String>,
    mode: MergeMode,
    backend: Option<&dyn CompletionBackend>,
) -> Result<CandidateContext, ReflectError> {
    let mut merged = draft.clone();

    merged.tools = draft
        .tools
        .iter()
        .map(|tool| {
            if revised_tools.contains(&tool.name) {
                tool.clone()
            } else {
                best.tool(&tool.name).cloned().unwrap_or_else(|| tool.clone())
            }
        })
        .collect();

    merged.global_rules = best.global_rules.clone();
    for rule in &draft.global_rules {
        if merged.rule(&rule.name).is_none() {
            merged.global_rules.push(rule.clone());
        }
    }

    merged.example_specific_instructions = dedup_append_lines(
        &best.example_specific_instructions,
        &draft.example_specific_instructions,
    );

    merged.global_instructions = match mode {
        MergeMode::Deterministic => {
            dedup_append_lines(&best.global_instructions, &draft.global_instructions)
        }
        MergeMode::Llm => {
            let backend = backend.ok_or_else(|| ReflectError::MergeBackendFailure {
                message: "llm merge mode requires a completion backend".into(),
            })?;
            let prompt = build_merge_prompt(draft, best);
            backend
                .complete(&prompt)
                .map(|text| text.trim_end().to_string())
                .map_err(|e| ReflectError::MergeBackendFailure {
                    message: e.to_string(),
                })?
        }
    };

    Ok(merged)
}

/// Runs the reflector with the documented retry policy: on a parse or schema
/// failure the prompt is re-sent with a format reminder appended, up to
/// `retry_limit` extra attempts. When every attempt fails the iteration
/// proposes no edit.
pub fn propose_edits(
    backend: &dyn CompletionBackend,
    ctx: &CandidateContext,
    feedback: &FeedbackBundle,
    retry_limit: u32,
) -> Result<EditSet, ReflectError> {
    let base_prompt = build_reflection_prompt(ctx, feedback);
    let mut prompt = base_prompt.clone();
    let mut last_error = ReflectError::ParseFailure {
        message: "reflector never answered".into(),
    };
    for attempt in 0..=retry_limit {
        let output = match backend.complete(&prompt) {
            Ok(text) => text,
            Err(e) => {
                last_error = ReflectError::ParseFailure {
                    message: format!("backend error: {e}"),
                };
                continue;
            }
        };
        match parse_reflector_output(&output, &ctx.tools) {
            Ok(edits) => return Ok(edits),
            Err(e) => {
                last_error = e;
                if attempt < retry_limit {
                    prompt = format!("{base_prompt}{FORMAT_REMINDER}");
                }
            }
        }
    }
    Err(last_error)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnose::FailureKind;
    use crate::schema::{ParamType, ParameterSpec};
    use serde_json::json;

    fn inventory() -> Vec<ToolSchema> {
        vec![
            ToolSchema::new("get_invoice", "Retrieve an invoice.")
                .with_param(ParameterSpec::new("invoice_id", "Invoice id.", ParamType::String))
                .with_required(&["invoice_id"]),
            ToolSchema::new("get_payment", "Retrieve a payment."),
        ]
    }

    fn ctx() -> CandidateContext {
        CandidateContext::seed("Use exactly one tool per request.", inventory())
    }

    fn wrong_tool_feedback() -> FeedbackBundle {
        let mut signal = FailureSignal::new("e1", FailureKind::WrongTool, "confused tools");
        signal.expected_tool = Some("get_invoice".into());
        signal.predicted_tool = Some("get_payment".into());
        FeedbackBundle {
            items: vec![FeedbackItem {
                example_id: "e1".into(),
                query: "fetch invoice".into(),
                predicted_calls: vec![ToolCall::new("get_payment")],
                gold_calls: vec![ToolCall::new("get_invoice").with_arg("invoice_id", json!("I-1"))],
                signals: vec![signal],
            }],
        }
    }

    #[test]
    fn prompt_carries_failure_phrase_and_sections() {
        let prompt = build_reflection_prompt(&ctx(), &wrong_tool_feedback());
        assert!(prompt.contains("called the wrong tool instead of the correct one"));
        assert!(prompt.contains("Use exactly one tool per request."));
        assert!(prompt.contains("get_invoice"));
        assert!(prompt.contains("Answer:"));
    }

    #[test]
    fn prompt_is_deterministic() {
        let a = build_reflection_prompt(&ctx(), &wrong_tool_feedback());
        let b = build_reflection_prompt(&ctx(), &wrong_tool_feedback());
        assert_eq!(a, b);
    }

    #[test]
    fn every_example_id_appears_once() {
        let mut feedback = wrong_tool_feedback();
        for id in ["e2", "e3"] {
            let mut item = feedback.items[0].clone();
            item.example_id = id.into();
            item.signals[0].example_id = id.into();
            feedback.items.push(item);
        }
        let prompt = build_reflection_prompt(&ctx(), &feedback);
        for id in ["e1", "e2", "e3"] {
            assert_eq!(
                prompt.matches(&format!("\"example_id\": \"{id}\"")).count(),
                1
            );
        }
    }

    #[test]
    fn parse_accepts_the_documented_shape() {
        let text = r#"Answer: {"global_instructions":"X","example_specific_instructions":"Y","tool_revisions":[]}"#;
        let edits = parse_reflector_output(text, &inventory()).unwrap();
        assert_eq!(edits.global_instructions.as_deref(), Some("X"));
        assert_eq!(edits.example_specific_instructions.as_deref(), Some("Y"));
        assert!(edits.tool_revisions.is_empty());
    }

    #[test]
    fn parse_uses_last_marker() {
        let text = "thinking about Answer: not this\nAnswer: {\"global_instructions\":\"Z\"}";
        let edits = parse_reflector_output(text, &inventory()).unwrap();
        assert_eq!(edits.global_instructions.as_deref(), Some("Z"));
    }

    #[test]
    fn missing_marker_is_a_parse_failure() {
        assert!(matches!(
            parse_reflector_output("just prose", &inventory()),
            Err(ReflectError::ParseFailure { .. })
        ));
    }

    #[test]
    fn unknown_tool_revision_is_a_schema_failure() {
        let text = r#"Answer: {"tool_revisions":[{"name":"ghost","description":"x","parameters":{"type":"dict","properties":{},"required":[]}}]}"#;
        assert!(matches!(
            parse_reflector_output(text, &inventory()),
            Err(ReflectError::SchemaFailure { .. })
        ));
    }

    #[test]
    fn structural_revision_is_a_schema_failure() {
        // Revision drops the only parameter of get_invoice.
        let text = r#"Answer: {"tool_revisions":[{"name":"get_invoice","description":"x","parameters":{"type":"dict","properties":{},"required":[]}}]}"#;
        assert!(matches!(
            parse_reflector_output(text, &inventory()),
            Err(ReflectError::SchemaFailure { .. })
        ));
    }

    #[test]
    fn answer_round_trips_through_parse() {
        let mut revision = inventory()[0].clone();
        revision.description = "Retrieve an invoice. PREFERRED for billing lookups.".into();
        let edits = EditSet {
            global_instructions: Some("New P".into()),
            example_specific_instructions: Some("- new hint".into()),
            tool_revisions: vec![revision],
        };
        let parsed = parse_reflector_output(&edits.to_answer_text(), &inventory()).unwrap();
        assert_eq!(parsed, edits);
    }

    #[test]
    fn apply_edits_changes_only_named_tools() {
        let ctx = ctx();
        let edits = EditSet {
            global_instructions: Some("P2".into()),
            example_specific_instructions: Some("- bullet".into()),
            tool_revisions: vec![],
        };
        let out = apply_edits(&ctx, &edits).unwrap();
        assert_eq!(out.global_instructions, "P2");
        assert_eq!(out.example_specific_instructions, "- bullet");
        assert_eq!(out.tools, ctx.tools);

        let mut revision = ctx.tools[0].clone();
        revision.description = "updated".into();
        let edits = EditSet {
            global_instructions: None,
            example_specific_instructions: None,
            tool_revisions: vec![revision],
        };
        let out2 = apply_edits(&out, &edits).unwrap();
        assert_eq!(out2.tools[0].description, "updated");
        assert_eq!(out2.tools[1], ctx.tools[1]);
        assert_eq!(out2.global_instructions, "P2");
    }

    #[test]
    fn appended_bullets_preserve_prior_text() {
        let mut ctx = ctx();
        ctx.example_specific_instructions = "- first\n- second".into();
        let edits = EditSet {
            global_instructions: None,
            example_specific_instructions: Some("- third".into()),
            tool_revisions: vec![],
        };
        let out = apply_edits(&ctx, &edits).unwrap();
        assert_eq!(out.example_specific_instructions, "- first\n- second\n- third");
    }

    #[test]
    fn deterministic_merge_dedups_and_appends() {
        assert_eq!(dedup_append_lines("A\nB", "B\nC"), "A\nB\nC");
        assert_eq!(dedup_append_lines("A\nB", "A\nB"), "A\nB");
        assert_eq!(dedup_append_lines("", "X"), "X");
    }

    #[test]
    fn merge_preserves_best_and_is_idempotent() {
        let mut best = ctx();
        best.global_instructions = "keep this\nand this".into();
        let mut draft = ctx();
        draft.global_instructions = "and this\nplus new".into();
        let merged = merge_with_best(
            &draft,
            &best,
            &BTreeSet::new(),
            MergeMode::Deterministic,
            None,
        )
        .unwrap();
        assert_eq!(merged.global_instructions, "keep this\nand this\nplus new");

        let again = merge_with_best(
            &merged,
            &best,
            &BTreeSet::new(),
            MergeMode::Deterministic,
            None,
        )
        .unwrap();
        assert_eq!(again, merged);

        let identity = merge_with_best(
            &best,
            &best,
            &BTreeSet::new(),
            MergeMode::Deterministic,
            None,
        )
        .unwrap();
        assert_eq!(identity, best);
    }

    #[test]
    fn merge_takes_draft_tool_only_when_revised() {
        let mut best = ctx();
        best.tools[0].description = "best description".into();
        let mut draft = ctx();
        draft.tools[0].description = "draft description".into();
        draft.tools[1].description = "stale description".into();

        let revised: BTreeSet<String> = ["get_invoice".to_string()].into();
        let merged =
            merge_with_best(&draft, &best, &revised, MergeMode::Deterministic, None).unwrap();
        assert_eq!(merged.tools[0].description, "draft description");
        assert_eq!(merged.tools[1].description, best.tools[1].description);
    }

    #[test]
    fn llm_merge_uses_backend_text() {
        struct Fixed;
        impl CompletionBackend for Fixed {
            fn complete(&self, prompt: &str) -> Result<String, crate::backend::BackendError> {
                assert!(prompt.contains("instruction merger"));
                Ok("merged text\n".into())
            }
            fn identity(&self) -> &str {
                "fixed"
            }
        }
        let merged = merge_with_best(
            &ctx(),
            &ctx(),
            &BTreeSet::new(),
            MergeMode::Llm,
            Some(&Fixed),
        )
        .unwrap();
        assert_eq!(merged.global_instructions, "merged text");
    }

    #[test]
    fn retry_policy_appends_reminder_then_gives_up() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        struct Flaky(AtomicUsize);
        impl CompletionBackend for Flaky {
            fn complete(&self, prompt: &str) -> Result<String, crate::backend::BackendError> {
                let n = self.0.fetch_add(1, Ordering::SeqCst);
                if n > 0 {
                    assert!(prompt.contains("could not be parsed"));
                }
                Ok("no marker here".into())
            }
            fn identity(&self) -> &str {
                "flaky"
            }
        }
        let backend = Flaky(AtomicUsize::new(0));
        let err = propose_edits(&backend, &ctx(), &wrong_tool_feedback(), 2).unwrap_err();
        assert!(matches!(err, ReflectError::ParseFailure { .. }));
        assert_eq!(backend.0.load(Ordering::SeqCst), 3);
    }
}
