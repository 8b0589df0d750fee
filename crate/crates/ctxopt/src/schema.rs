//! Context variables for a tool-calling agent: the global instruction prompt,
//! per-tool schemas, and named global rules, plus the operations that keep
//! them consistent — inventory validation, deterministic context rendering,
//! and schema-preserving description revisions.
//!
//! Tool descriptions may point at a global rule with the token
//! `@rule:<name>`; every pointer must resolve to a rule carried by the
//! surrounding [`CandidateContext`].

use std::collections::{BTreeMap, BTreeSet};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Wire type of a tool parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Integer => "integer",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::Array => "array",
            ParamType::Object => "object",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "string" => Some(ParamType::String),
            "integer" => Some(ParamType::Integer),
            "number" => Some(ParamType::Number),
            "boolean" => Some(ParamType::Boolean),
            "array" => Some(ParamType::Array),
            "object" => Some(ParamType::Object),
            _ => None,
        }
    }
}

/// One typed parameter (slot) of a tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpec {
    pub name: String,
    pub description: String,
    pub param_type: ParamType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enum_values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<serde_json::Value>,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, description: impl Into<String>, ty: ParamType) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            param_type: ty,
            enum_values: None,
            default: None,
        }
    }
}

/// A tool's schema entry: name, description, typed parameters, and the list
/// of required parameter names.
///
/// Serializes to the function-calling wire shape:
///
/// ```json
/// {"name": "...", "description": "...",
///  "parameters": {"type": "dict",
///                 "properties": {"p": {"description": "...", "type": "string"}},
///                 "required": ["p"]}}
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct ToolSchema {
    pub name: String,
    pub description: String,
    pub parameters: Vec<ParameterSpec>,
    pub required: Vec<String>,
}

impl ToolSchema {
    pub fn new(name: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            parameters: Vec::new(),
            required: Vec::new(),
        }
    }

    pub fn with_param(mut self, param: ParameterSpec) -> Self {
        self.parameters.push(param);
        self
    }

    pub fn with_required(mut self, names: &[&str]) -> Self {
        self.required = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn param(&self, name: &str) -> Option<&ParameterSpec> {
        self.parameters.iter().find(|p| p.name == name)
    }

    fn to_wire(&self) -> serde_json::Value {
        let mut properties = serde_json::Map::new();
        for p in &self.parameters {
            let mut prop = serde_json::Map::new();
            prop.insert("description".into(), p.description.clone().into());
            prop.insert("type".into(), p.param_type.as_str().into());
            if let Some(ev) = &p.enum_values {
                prop.insert(
                    "enum".into(),
                    serde_json::Value::Array(ev.iter().map(|v| v.clone().into()).collect()),
                );
            }
            if let Some(d) = &p.default {
                prop.insert("default".into(), d.clone());
            }
            properties.insert(p.name.clone(), serde_json::Value::Object(prop));
        }
        let mut params = serde_json::Map::new();
        params.insert("type".into(), "dict".into());
        params.insert("properties".into(), serde_json::Value::Object(properties));
        params.insert(
            "required".into(),
            serde_json::Value::Array(self.required.iter().map(|r| r.clone().into()).collect()),
        );
        let mut obj = serde_json::Map::new();
        obj.insert("name".into(), self.name.clone().into());
        obj.insert("description".into(), self.description.clone().into());
        obj.insert("parameters".into(), serde_json::Value::Object(params));
        serde_json::Value::Object(obj)
    }

    fn from_wire(value: &serde_json::Value) -> Result<Self, String> {
        let obj = value.as_object().ok_or("tool entry must be an object")?;
        let name = obj
            .get("name")
            .and_then(|v| v.as_str())
            .ok_or("tool entry missing string field `name`")?
            .to_string();
        let description = obj
            .get("description")
            .and_then(|v| v.as_str())
            .unwrap_or_default()
            .to_string();
        let mut parameters = Vec::new();
        let mut required = Vec::new();
        if let Some(params) = obj.get("parameters") {
            let params = params
                .as_object()
                .ok_or_else(|| format!("tool `{name}`: `parameters` must be an object"))?;
            if let Some(props) = params.get("properties") {
                let props = props
                    .as_object()
                    .ok_or_else(|| format!("tool `{name}`: `properties` must be an object"))?;
                for (pname, pval) in props {
                    let pobj = pval
                        .as_object()
                        .ok_or_else(|| format!("tool `{name}`: property `{pname}` must be an object"))?;
                    let ty_str = pobj
                        .get("type")
                        .and_then(|v| v.as_str())
                        .ok_or_else(|| format!("tool `{name}`: property `{pname}` missing `type`"))?;
                    let param_type = ParamType::parse(ty_str).ok_or_else(|| {
                        format!("tool `{name}`: property `{pname}` has unknown type `{ty_str}`")
                    })?;
                    let enum_values = pobj.get("enum").and_then(|v| v.as_array()).map(|arr| {
                        arr.iter()
                            .filter_map(|v| v.as_str().map(str::to_string))
                            .collect()
                    });
                    parameters.push(ParameterSpec {
                        name: pname.clone(),
                        description: pobj
                            .get("description")
                            .and_then(|v| v.as_str())
                            .unwrap_or_default()
                            .to_string(),
                        param_type,
                        enum_values,
                        default: pobj.get("default").cloned(),
                    });
                }
            }
            if let Some(req) = params.get("required").and_then(|v| v.as_array()) {
                required = req
                    .iter()
                    .filter_map(|v| v.as_str().map(str::to_string))
                    .collect();
            }
        }
        Ok(Self {
            name,
            description,
            parameters,
            required,
        })
    }
}

impl Serialize for ToolSchema {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_wire().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ToolSchema {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        ToolSchema::from_wire(&value).map_err(D::Error::custom)
    }
}

/// A named rule in the global instruction layer. Tool and parameter
/// descriptions reference it with `@rule:<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalRule {
    pub name: String,
    pub text: String,
}

/// One candidate under optimization: global instructions, accumulated
/// example-specific guidance, the tool inventory, and named global rules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateContext {
    pub global_instructions: String,
    #[serde(default)]
    pub example_specific_instructions: String,
    #[serde(default)]
    pub global_rules: Vec<GlobalRule>,
    pub tools: Vec<ToolSchema>,
}

impl CandidateContext {
    /// A fresh context over `tools` with the given instruction prompt and no
    /// accumulated guidance or rules.
    pub fn seed(global_instructions: impl Into<String>, tools: Vec<ToolSchema>) -> Self {
        Self {
            global_instructions: global_instructions.into(),
            example_specific_instructions: String::new(),
            global_rules: Vec::new(),
            tools,
        }
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.iter().find(|t| t.name == name)
    }

    pub fn rule(&self, name: &str) -> Option<&GlobalRule> {
        self.global_rules.iter().find(|r| r.name == name)
    }

    /// Validates the inventory plus context-level constraints: a nonempty
    /// tool list, unique rule names, and resolvable `@rule:` pointers.
    pub fn validate(&self) -> ValidationReport {
        let mut report = validate_inventory(&self.tools);
        if self.tools.is_empty() {
            report.error("context", "context has no tools");
        }
        let mut rule_names = BTreeSet::new();
        for rule in &self.global_rules {
            if !rule_names.insert(rule.name.as_str()) {
                report.error(
                    format!("rule {}", rule.name),
                    format!("duplicate rule name `{}`", rule.name),
                );
            }
        }
        for tool in &self.tools {
            for pointer in rule_pointers(&tool.description) {
                if !rule_names.contains(pointer.as_str()) {
                    report.error(
                        format!("tool {}", tool.name),
                        format!("unresolved rule pointer `@rule:{pointer}`"),
                    );
                }
            }
            for param in &tool.parameters {
                for pointer in rule_pointers(&param.description) {
                    if !rule_names.contains(pointer.as_str()) {
                        report.error(
                            format!("tool {} param {}", tool.name, param.name),
                            format!("unresolved rule pointer `@rule:{pointer}`"),
                        );
                    }
                }
            }
        }
        report
    }
}

/// Severity of a validation issue. A report is `ok` iff it carries no
/// `Error`-level issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.issues.iter().all(|i| i.severity != Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        });
    }

    fn warning(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        });
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.issues.is_empty() {
            return write!(f, "ok");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let tag = match issue.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            write!(f, "{tag} [{}]: {}", issue.location, issue.message)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("context failed validation:\n{0}")]
    InvalidContext(ValidationReport),
    #[error("revision rejected for tool `{tool}`: {reason}")]
    RevisionRejected { tool: String, reason: String },
}

/// Extracts `@rule:<name>` pointer names from a description text.
pub fn rule_pointers(text: &str) -> Vec<String> {
    const MARKER: &str = "@rule:";
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(pos) = rest.find(MARKER) {
        let tail = &rest[pos + MARKER.len()..];
        let name: String = tail
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_' || *c == '-')
            .collect();
        let len = name.len();
        if !name.is_empty() {
            out.push(name);
        }
        rest = &tail[len..];
    }
    out
}

/// Checks an inventory for structural problems: duplicate tool names,
/// `required` entries naming no parameter, duplicate or empty parameter
/// names, and empty descriptions (warning only). Problems are reported,
/// never thrown.
pub fn validate_inventory(tools: &[ToolSchema]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = BTreeSet::new();
    for tool in tools {
        let loc = format!("tool {}", tool.name);
        if tool.name.is_empty() {
            report.error("tool", "empty tool name");
        } else if !seen.insert(tool.name.as_str()) {
            report.error(&loc, format!("duplicate tool name `{}`", tool.name));
        }
        if tool.description.trim().is_empty() {
            report.warning(&loc, "empty tool description");
        }
        let mut param_names = BTreeSet::new();
        for param in &tool.parameters {
            if param.name.is_empty() {
                report.error(&loc, "empty parameter name");
            } else if !param_names.insert(param.name.as_str()) {
                report.error(&loc, format!("duplicate parameter name `{}`", param.name));
            }
            if param.description.trim().is_empty() {
                report.warning(
                    format!("{loc} param {}", param.name),
                    "empty parameter description",
                );
            }
        }
        for req in &tool.required {
            if !param_names.contains(req.as_str()) {
                report.error(
                    &loc,
                    format!("dangling required entry `{req}` names no parameter"),
                );
            }
        }
    }
    report
}

const SECTION_GLOBAL: &str = "## Global Instructions";
const SECTION_RULES: &str = "## Global Rules";
const SECTION_EXAMPLES: &str = "## Example-Specific Instructions";
const SECTION_TOOLS: &str = "## Tools";
const SECTION_QUERY: &str = "## Query";

/// Assembles the full agent context for one query: instructions, global
/// rules, example-specific guidance, the serialized tool inventory in
/// inventory order, and the query last. Identical inputs yield byte-identical
/// output.
pub fn render_context(ctx: &CandidateContext, query: &str) -> Result<String, SchemaError> {
    let report = ctx.validate();
    if !report.ok() {
        return Err(SchemaError::InvalidContext(report));
    }
    let mut out = String::new();
    out.push_str(SECTION_GLOBAL);
    out.push('\n');
    out.push_str(&ctx.global_instructions);
    out.push_str("\n\n");
    out.push_str(SECTION_RULES);
    out.push('\n');
    for rule in &ctx.global_rules {
        out.push_str("- ");
        out.push_str(&rule.name);
        out.push_str(": ");
        out.push_str(&rule.text);
        out.push('\n');
    }
    out.push('\n');
    out.push_str(SECTION_EXAMPLES);
    out.push('\n');
    out.push_str(&ctx.example_specific_instructions);
    out.push_str("\n\n");
    out.push_str(SECTION_TOOLS);
    out.push('\n');
    for tool in &ctx.tools {
        out.push_str(&serde_json::to_string(tool).expect("tool serialization is infallible"));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(SECTION_QUERY);
    out.push('\n');
    out.push_str(query);
    Ok(out)
}

/// Applies a reflector-proposed revision to one tool, replacing only the
/// tool description and per-parameter descriptions. The parameter set,
/// parameter types, and required list always come from the original;
/// a revision that tries to change any of them is rejected as malformed.
pub fn apply_tool_revision(tool: &ToolSchema, revision: &ToolSchema) -> Result<ToolSchema, SchemaError> {
    let reject = |reason: String| SchemaError::RevisionRejected {
        tool: tool.name.clone(),
        reason,
    };
    if revision.name != tool.name {
        return Err(reject(format!(
            "revision names `{}`, expected `{}`",
            revision.name, tool.name
        )));
    }
    let original_names: BTreeSet<&str> = tool.parameters.iter().map(|p| p.name.as_str()).collect();
    let revised_names: BTreeSet<&str> = revision.parameters.iter().map(|p| p.name.as_str()).collect();
    for extra in revised_names.difference(&original_names) {
        return Err(reject(format!("revision adds parameter `{extra}`")));
    }
    for missing in original_names.difference(&revised_names) {
        return Err(reject(format!("revision removes parameter `{missing}`")));
    }
    let revised_types: BTreeMap<&str, ParamType> = revision
        .parameters
        .iter()
        .map(|p| (p.name.as_str(), p.param_type))
        .collect();
    for param in &tool.parameters {
        let revised = revised_types[param.name.as_str()];
        if revised != param.param_type {
            return Err(reject(format!(
                "revision changes type of `{}` from {} to {}",
                param.name,
                param.param_type.as_str(),
                revised.as_str()
            )));
        }
    }
    let mut original_required: Vec<&str> = tool.required.iter().map(String::as_str).collect();
    let mut revised_required: Vec<&str> = revision.required.iter().map(String::as_str).collect();
    original_required.sort_unstable();
    revised_required.sort_unstable();
    if original_required != revised_required {
        return Err(reject(format!(
            "revision alters required list (expected {:?}, got {:?})",
            tool.required, revision.required
        )));
    }
    let mut updated = tool.clone();
    updated.description = revision.description.clone();
    for param in &mut updated.parameters {
        if let Some(rev) = revision.param(&param.name) {
            param.description = rev.description.clone();
        }
    }
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weather_tool() -> ToolSchema {
        ToolSchema::new("get_weather", "Look up the current weather for a city.")
            .with_param(ParameterSpec::new("city", "City name.", ParamType::String))
            .with_param(ParameterSpec::new("units", "Unit system.", ParamType::String))
            .with_required(&["city"])
    }

    fn search_tool() -> ToolSchema {
        ToolSchema::new("search_items", "Search the item catalog.")
            .with_param(ParameterSpec::new("query", "Free-text query.", ParamType::String))
    }

    #[test]
    fn duplicate_tool_names_are_errors() {
        let tools = vec![
            ToolSchema::new("search", "a"),
            ToolSchema::new("search", "b"),
        ];
        let report = validate_inventory(&tools);
        assert!(!report.ok());
        assert!(report
            .errors()
            .any(|i| i.message.contains("duplicate tool name")));
    }

    #[test]
    fn dangling_required_is_an_error() {
        let tool = ToolSchema::new("t", "desc").with_required(&["x"]);
        let report = validate_inventory(&[tool]);
        assert!(!report.ok());
        assert!(report.errors().any(|i| i.message.contains("dangling required")));
    }

    #[test]
    fn empty_description_is_only_a_warning() {
        let tool = ToolSchema::new("t", "");
        let report = validate_inventory(&[tool]);
        assert!(report.ok());
        assert_eq!(report.issues.len(), 1);
        assert_eq!(report.issues[0].severity, Severity::Warning);
    }

    #[test]
    fn render_contains_tools_and_ends_with_query() {
        let ctx = CandidateContext::seed("Use tools.", vec![weather_tool(), search_tool()]);
        let text = render_context(&ctx, "q").unwrap();
        assert!(text.contains("get_weather"));
        assert!(text.contains("search_items"));
        assert!(text.ends_with("q"));
    }

    #[test]
    fn render_is_deterministic() {
        let ctx = CandidateContext::seed("Use tools.", vec![weather_tool()]);
        let a = render_context(&ctx, "what is the weather in Lyon").unwrap();
        let b = render_context(&ctx, "what is the weather in Lyon").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn render_expands_rule_body_exactly_once() {
        let mut tool = weather_tool();
        tool.parameters[0].description = "@rule:DateTimeFields".into();
        let ctx = CandidateContext {
            global_instructions: "P".into(),
            example_specific_instructions: String::new(),
            global_rules: vec![GlobalRule {
                name: "DateTimeFields".into(),
                text: "Dates use ISO-8601 format.".into(),
            }],
            tools: vec![tool],
        };
        let text = render_context(&ctx, "q").unwrap();
        assert_eq!(text.matches("Dates use ISO-8601 format.").count(), 1);
        let rules_section = text
            .split(SECTION_RULES)
            .nth(1)
            .and_then(|s| s.split(SECTION_EXAMPLES).next())
            .unwrap();
        assert!(rules_section.contains("Dates use ISO-8601 format."));
    }

    #[test]
    fn render_rejects_unresolved_pointer() {
        let mut tool = weather_tool();
        tool.description = "see @rule:Missing".into();
        let ctx = CandidateContext::seed("P", vec![tool]);
        assert!(matches!(
            render_context(&ctx, "q"),
            Err(SchemaError::InvalidContext(_))
        ));
    }

    #[test]
    fn revision_replaces_descriptions_only() {
        let tool = weather_tool();
        let mut revision = tool.clone();
        revision.description = "Fetch weather conditions. PREFERRED for city queries.".into();
        revision.parameters[0].description = "Target city, e.g. Lyon.".into();
        let updated = apply_tool_revision(&tool, &revision).unwrap();
        assert_eq!(updated.description, revision.description);
        assert_eq!(updated.parameters[0].description, "Target city, e.g. Lyon.");
        assert_eq!(updated.required, tool.required);
        assert_eq!(updated.parameters.len(), tool.parameters.len());
    }

    #[test]
    fn revision_adding_parameter_is_rejected() {
        let tool = weather_tool();
        let mut revision = tool.clone();
        revision
            .parameters
            .push(ParameterSpec::new("extra", "x", ParamType::String));
        assert!(matches!(
            apply_tool_revision(&tool, &revision),
            Err(SchemaError::RevisionRejected { .. })
        ));
    }

    #[test]
    fn revision_dropping_required_is_rejected() {
        let tool = weather_tool();
        let mut revision = tool.clone();
        revision.required.clear();
        let err = apply_tool_revision(&tool, &revision).unwrap_err();
        assert!(err.to_string().contains("required"));
    }

    #[test]
    fn revision_changing_type_is_rejected() {
        let tool = weather_tool();
        let mut revision = tool.clone();
        revision.parameters[1].param_type = ParamType::Integer;
        assert!(apply_tool_revision(&tool, &revision).is_err());
    }

    #[test]
    fn tool_schema_round_trips_through_wire_format() {
        let mut tool = weather_tool();
        tool.parameters[1].enum_values = Some(vec!["metric".into(), "imperial".into()]);
        tool.parameters[1].default = Some("metric".into());
        let json = serde_json::to_string(&tool).unwrap();
        assert!(json.contains("\"type\":\"dict\""));
        assert!(json.contains("\"properties\""));
        let back: ToolSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, tool);
    }

    #[test]
    fn wire_format_preserves_parameter_order() {
        let tool = ToolSchema::new("t", "d")
            .with_param(ParameterSpec::new("zeta", "", ParamType::String))
            .with_param(ParameterSpec::new("alpha", "", ParamType::String));
        let json = serde_json::to_string(&tool).unwrap();
        let back: ToolSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back.parameters[0].name, "zeta");
        assert_eq!(back.parameters[1].name, "alpha");
    }

    #[test]
    fn rule_pointer_scanner_finds_names() {
        assert_eq!(
            rule_pointers("see @rule:DateTimeFields and @rule:numeric_bounds."),
            vec!["DateTimeFields".to_string(), "numeric_bounds".to_string()]
        );
        assert!(rule_pointers("no pointers here").is_empty());
    }
}
