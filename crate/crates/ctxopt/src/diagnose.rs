//! Structured failure signals extracted from a (predicted, gold) trace pair.
//! These feed the reflector: instead of a bare score, each failed rollout
//! yields machine-readable records of tool confusions, missing or wrong
//! slots, and format violations.

use serde::{Deserialize, Serialize};

use crate::dataset::ToolCall;
use crate::families::{self, FamilyId};
use crate::metrics::{match_calls, value_equal};
use crate::schema::{ParamType, ToolSchema};

/// Failure category. `BackendError` is reserved for rollouts where the agent
/// backend itself failed and no trace exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    MissedTool,
    WrongTool,
    ExtraTool,
    MissingSlot,
    WrongValue,
    FormatViolation,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureSignal {
    pub example_id: String,
    pub kind: FailureKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_tool: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_tool: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected_value: Option<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub predicted_value: Option<serde_json::Value>,
    pub note: String,
}

impl FailureSignal {
    pub fn new(example_id: &str, kind: FailureKind, note: impl Into<String>) -> Self {
        Self {
            example_id: example_id.to_string(),
            kind,
            expected_tool: None,
            predicted_tool: None,
            slot: None,
            expected_value: None,
            predicted_value: None,
            note: note.into(),
        }
    }
}

fn description_of<'a>(tools: &'a [ToolSchema], name: &str) -> &'a str {
    tools
        .iter()
        .find(|t| t.name == name)
        .map(|t| t.description.as_str())
        .unwrap_or("")
}

fn declared_type_matches(value: &serde_json::Value, ty: ParamType) -> bool {
    use serde_json::Value;
    match ty {
        ParamType::String => value.is_string(),
        ParamType::Integer => value.is_i64() || value.is_u64(),
        ParamType::Number => value.is_number(),
        ParamType::Boolean => value.is_boolean(),
        ParamType::Array => matches!(value, Value::Array(_)),
        ParamType::Object => matches!(value, Value::Object(_)),
    }
}

fn is_iso_date_like(value: &serde_json::Value) -> bool {
    match value.as_str() {
        Some(s) => {
            let s = s.trim();
            chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok()
                || chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S").is_ok()
                || chrono::DateTime::parse_from_rfc3339(s).is_ok()
        }
        None => false,
    }
}

/// Checks a predicted value against the parameter's declared type and, for
/// date-family and boolean-family slots, the canonical wire form.
fn format_problem(
    param: &crate::schema::ParameterSpec,
    value: &serde_json::Value,
) -> Option<String> {
    if !declared_type_matches(value, param.param_type) {
        return Some(format!(
            "value does not match declared type {}",
            param.param_type.as_str()
        ));
    }
    match families::classify_param(&param.name, param.param_type) {
        Some(FamilyId::DatetimeFields) if param.param_type == ParamType::String => {
            if !is_iso_date_like(value) {
                return Some("date value is not in ISO-8601 form".into());
            }
        }
        Some(FamilyId::BooleanParameters) => {
            if !value.is_boolean() {
                return Some("boolean value is not a JSON boolean literal".into());
            }
        }
        _ => {}
    }
    None
}

/// Converts a trace pair into failure signals.
///
/// Unmatched gold and predicted calls are first paired into `WrongTool`
/// confusions, most-similar tool descriptions first (token overlap);
/// leftovers become `MissedTool` / `ExtraTool`. Matched pairs contribute
/// `MissingSlot` for absent gold keys, `WrongValue` for unequal or
/// unexpected values, and `FormatViolation` for type or canonical-form
/// breaks. The list is empty exactly when the rollout was fully correct.
pub fn diagnose(
    example_id: &str,
    predicted: &[ToolCall],
    gold: &[ToolCall],
    tools: &[ToolSchema],
) -> Vec<FailureSignal> {
    let matching = match_calls(predicted, gold);
    let mut signals = Vec::new();

    // Pair off unmatched calls as tool confusions, highest description
    // similarity first; ties fall back to lowest index order.
    let mut open_gold: Vec<usize> = matching.unmatched_gold.clone();
    let mut open_pred: Vec<usize> = matching.unmatched_predicted.clone();
    while !open_gold.is_empty() && !open_pred.is_empty() {
        let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
        for (gi, &g) in open_gold.iter().enumerate() {
            for (pi, &p) in open_pred.iter().enumerate() {
                let sim = crate::analysis::token_overlap(
                    description_of(tools, &gold[g].tool),
                    description_of(tools, &predicted[p].tool),
                );
                if sim > best.0 {
                    best = (sim, gi, pi);
                }
            }
        }
        let g = open_gold.remove(best.1);
        let p = open_pred.remove(best.2);
        let mut signal = FailureSignal::new(
            example_id,
            FailureKind::WrongTool,
            format!(
                "called `{}` where `{}` was expected",
                predicted[p].tool, gold[g].tool
            ),
        );
        signal.expected_tool = Some(gold[g].tool.clone());
        signal.predicted_tool = Some(predicted[p].tool.clone());
        signals.push(signal);
    }
    for g in open_gold {
        let mut signal = FailureSignal::new(
            example_id,
            FailureKind::MissedTool,
            format!("never called `{}`", gold[g].tool),
        );
        signal.expected_tool = Some(gold[g].tool.clone());
        signals.push(signal);
    }
    for p in open_pred {
        let mut signal = FailureSignal::new(
            example_id,
            FailureKind::ExtraTool,
            format!("called `{}` which was not needed", predicted[p].tool),
        );
        signal.predicted_tool = Some(predicted[p].tool.clone());
        signals.push(signal);
    }

    for &(p, g) in &matching.pairs {
        let pred_call = &predicted[p];
        let gold_call = &gold[g];
        let tool = tools.iter().find(|t| t.name == gold_call.tool);
        for (key, gold_value) in &gold_call.arguments {
            match pred_call.arguments.get(key) {
                None => {
                    let mut signal = FailureSignal::new(
                        example_id,
                        FailureKind::MissingSlot,
                        format!("slot `{key}` of `{}` was not filled", gold_call.tool),
                    );
                    signal.expected_tool = Some(gold_call.tool.clone());
                    signal.slot = Some(key.clone());
                    signal.expected_value = Some(gold_value.clone());
                    signals.push(signal);
                }
                Some(pred_value) if !value_equal(pred_value, gold_value) => {
                    let mut signal = FailureSignal::new(
                        example_id,
                        FailureKind::WrongValue,
                        format!("slot `{key}` of `{}` has the wrong value", gold_call.tool),
                    );
                    signal.expected_tool = Some(gold_call.tool.clone());
                    signal.slot = Some(key.clone());
                    signal.expected_value = Some(gold_value.clone());
                    signal.predicted_value = Some(pred_value.clone());
                    signals.push(signal);
                    if let Some(param) = tool.and_then(|t| t.param(key)) {
                        if let Some(problem) = format_problem(param, pred_value) {
                            let mut signal = FailureSignal::new(
                                example_id,
                                FailureKind::FormatViolation,
                                format!("slot `{key}` of `{}`: {problem}", gold_call.tool),
                            );
                            signal.expected_tool = Some(gold_call.tool.clone());
                            signal.slot = Some(key.clone());
                            signal.predicted_value = Some(pred_value.clone());
                            signals.push(signal);
                        }
                    }
                }
                Some(_) => {}
            }
        }
        // Keys the prediction invented. Overall success requires exact key
        // sets, so these must surface as signals too.
        for (key, pred_value) in &pred_call.arguments {
            if !gold_call.arguments.contains_key(key) {
                let mut signal = FailureSignal::new(
                    example_id,
                    FailureKind::WrongValue,
                    format!(
                        "slot `{key}` of `{}` was filled but not expected",
                        gold_call.tool
                    ),
                );
                signal.expected_tool = Some(gold_call.tool.clone());
                signal.slot = Some(key.clone());
                signal.predicted_value = Some(pred_value.clone());
                signals.push(signal);
            }
        }
    }
    signals
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{eval_example, LossWeights};
    use crate::schema::{ParamType, ParameterSpec, ToolSchema};
    use serde_json::json;

    fn tools() -> Vec<ToolSchema> {
        vec![
            ToolSchema::new("get_report", "Retrieve the expense report for finance.")
                .with_param(ParameterSpec::new("date", "Report date.", ParamType::String))
                .with_param(ParameterSpec::new("account_id", "Account.", ParamType::String)),
            ToolSchema::new("get_summary", "Retrieve the expense summary for finance."),
            ToolSchema::new("send_mail", "Deliver a message to an inbox."),
        ]
    }

    fn call(tool: &str, args: &[(&str, serde_json::Value)]) -> ToolCall {
        let mut c = ToolCall::new(tool);
        for (k, v) in args {
            c.arguments.insert(k.to_string(), v.clone());
        }
        c
    }

    #[test]
    fn perfect_trace_yields_no_signals() {
        let gold = vec![call("get_report", &[("date", json!("2024-01-05"))])];
        assert!(diagnose("e", &gold, &gold, &tools()).is_empty());
    }

    #[test]
    fn single_unmatched_pair_is_a_wrong_tool() {
        let gold = vec![call("get_report", &[])];
        let predicted = vec![call("get_summary", &[])];
        let signals = diagnose("e", &predicted, &gold, &tools());
        assert_eq!(signals.len(), 1);
        assert_eq!(signals[0].kind, FailureKind::WrongTool);
        assert_eq!(signals[0].expected_tool.as_deref(), Some("get_report"));
        assert_eq!(signals[0].predicted_tool.as_deref(), Some("get_summary"));
    }

    #[test]
    fn confusion_pairing_follows_description_similarity() {
        let gold = vec![call("send_mail", &[]), call("get_report", &[])];
        let predicted = vec![call("get_summary", &[])];
        let signals = diagnose("e", &predicted, &gold, &tools());
        let wrong: Vec<_> = signals
            .iter()
            .filter(|s| s.kind == FailureKind::WrongTool)
            .collect();
        assert_eq!(wrong.len(), 1);
        assert_eq!(wrong[0].expected_tool.as_deref(), Some("get_report"));
        assert!(signals.iter().any(|s| s.kind == FailureKind::MissedTool
            && s.expected_tool.as_deref() == Some("send_mail")));
    }

    #[test]
    fn bad_date_yields_wrong_value_and_format_violation() {
        let gold = vec![call("get_report", &[("date", json!("2024-01-05"))])];
        let predicted = vec![call("get_report", &[("date", json!("Jan 5 2024"))])];
        let signals = diagnose("e", &predicted, &gold, &tools());
        assert!(signals.iter().any(|s| s.kind == FailureKind::WrongValue));
        assert!(signals
            .iter()
            .any(|s| s.kind == FailureKind::FormatViolation && s.note.contains("ISO-8601")));
    }

    #[test]
    fn missing_slot_is_reported() {
        let gold = vec![call(
            "get_report",
            &[("date", json!("2024-01-05")), ("account_id", json!("ACC-1"))],
        )];
        let predicted = vec![call("get_report", &[("date", json!("2024-01-05"))])];
        let signals = diagnose("e", &predicted, &gold, &tools());
        assert_eq!(signals.len(), 1);
        assert_eq!(signals[0].kind, FailureKind::MissingSlot);
        assert_eq!(signals[0].slot.as_deref(), Some("account_id"));
    }

    #[test]
    fn empty_signals_iff_overall_success() {
        let w = LossWeights::default();
        let gold = vec![call("get_report", &[("date", json!("2024-01-05"))])];
        let cases = vec![
            vec![call("get_report", &[("date", json!("2024-01-05"))])],
            vec![call("get_report", &[])],
            vec![call(
                "get_report",
                &[("date", json!("2024-01-05")), ("account_id", json!("x"))],
            )],
            vec![call("get_summary", &[])],
        ];
        for predicted in cases {
            let metrics = eval_example(&predicted, &gold, &w);
            let signals = diagnose("e", &predicted, &gold, &tools());
            assert_eq!(signals.is_empty(), metrics.osr, "trace {predicted:?}");
        }
    }
}
