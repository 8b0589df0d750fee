//! Pluggable backends: text completion for the reflector/merger and trace
//! prediction for the agent under evaluation.
//!
//! Offline work runs against deterministic mocks — a substring-scenario
//! completion backend, a gold-echoing agent, and a phrase-sensitive
//! disambiguation pair (agent + scripted reflector) for end-to-end loop
//! exercises. Online work goes through a chat-completion-style HTTP backend
//! with the API key taken from a named environment variable.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, ToolCall};
use crate::schema::ToolSchema;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend transport error: {0}")]
    Transport(String),
    #[error("backend returned HTTP status {0}")]
    Status(u16),
    #[error("no scenario rule matched the prompt")]
    NoRuleMatched,
    #[error("failed to parse backend response: {0}")]
    Parse(String),
    #[error("environment variable `{0}` is not set")]
    MissingKey(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Text-completion interface used by the reflector and the merger.
/// Implementations must tolerate concurrent calls.
pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
    fn identity(&self) -> &str;
}

/// Agent interface: given the rendered context (which embeds the query) and
/// the raw query, produce a predicted tool-call trace.
pub trait AgentBackend: Send + Sync {
    fn predict(&self, context: &str, query: &str) -> Result<Vec<ToolCall>, BackendError>;
    fn identity(&self) -> &str;
}

// ---------------------------------------------------------------------------
// Scenario-driven mock completion
// ---------------------------------------------------------------------------

/// One rule of a mock scenario: `response` is returned for the first rule
/// whose `match` substring occurs in the prompt.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub response: String,
}

/// Deterministic offline completion backend driven by an ordered rule list;
/// first match wins.
pub struct MockCompletion {
    rules: Vec<ScenarioRule>,
    label: String,
}

impl MockCompletion {
    pub fn new(rules: Vec<ScenarioRule>) -> Self {
        Self {
            rules,
            label: "mock".into(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)?;
        let rules = serde_json::from_str(&text).map_err(|e| BackendError::Parse(e.to_string()))?;
        Ok(Self::new(rules))
    }
}

impl CompletionBackend for MockCompletion {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.rules
            .iter()
            .find(|r| prompt.contains(&r.pattern))
            .map(|r| r.response.clone())
            .ok_or(BackendError::NoRuleMatched)
    }

    fn identity(&self) -> &str {
        &self.label
    }
}

/// Reflector that never proposes an edit.
pub struct NoopReflector;

impl CompletionBackend for NoopReflector {
    fn complete(&self, _prompt: &str) -> Result<String, BackendError> {
        Ok("Answer: {}".into())
    }

    fn identity(&self) -> &str {
        "noop"
    }
}

// ---------------------------------------------------------------------------
// Mock agents
// ---------------------------------------------------------------------------

/// Agent that answers every known query with its gold trace. Unknown queries
/// produce an empty trace.
pub struct GoldEchoAgent {
    gold: BTreeMap<String, Vec<ToolCall>>,
}

impl GoldEchoAgent {
    pub fn new(dataset: &Dataset) -> Self {
        let gold = dataset
            .examples
            .iter()
            .map(|e| (e.query.clone(), e.gold_calls.clone()))
            .collect();
        Self { gold }
    }
}

impl AgentBackend for GoldEchoAgent {
    fn predict(&self, _context: &str, query: &str) -> Result<Vec<ToolCall>, BackendError> {
        Ok(self.gold.get(query).cloned().unwrap_or_default())
    }

    fn identity(&self) -> &str {
        "gold_echo"
    }
}

/// One rule of a mock agent scenario: the trace to emit when the substring
/// matches the rendered context.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub calls: Vec<ToolCall>,
}

/// Deterministic rule-driven agent; first matching rule wins, no match means
/// no tool call.
pub struct MockAgent {
    rules: Vec<AgentRule>,
}

impl MockAgent {
    pub fn new(rules: Vec<AgentRule>) -> Self {
        Self { rules }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)?;
        let rules = serde_json::from_str(&text).map_err(|e| BackendError::Parse(e.to_string()))?;
        Ok(Self::new(rules))
    }
}

impl AgentBackend for MockAgent {
    fn predict(&self, context: &str, _query: &str) -> Result<Vec<ToolCall>, BackendError> {
        Ok(self
            .rules
            .iter()
            .find(|r| context.contains(&r.pattern))
            .map(|r| r.calls.clone())
            .unwrap_or_default())
    }

    fn identity(&self) -> &str {
        "mock_agent"
    }
}

// ---------------------------------------------------------------------------
// Scripted disambiguation scenario (agent + reflector)
// ---------------------------------------------------------------------------

/// A confusable tool pair and the cue phrase that resolves it. While the
/// phrase is absent from the rendered context, the scenario agent flips
/// calls between the two tools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisambiguationPair {
    pub general: String,
    pub specialized: String,
    pub phrase: String,
}

/// Agent that knows the gold traces but confuses each pair's tools until the
/// pair's cue phrase appears in the context.
pub struct DisambiguationAgent {
    gold: BTreeMap<String, Vec<ToolCall>>,
    pairs: Vec<DisambiguationPair>,
}

impl DisambiguationAgent {
    pub fn new(dataset: &Dataset, pairs: Vec<DisambiguationPair>) -> Self {
        let gold = dataset
            .examples
            .iter()
            .map(|e| (e.query.clone(), e.gold_calls.clone()))
            .collect();
        Self { gold, pairs }
    }

    fn partner(&self, tool: &str, context: &str) -> Option<String> {
        for pair in &self.pairs {
            if context.contains(&pair.phrase) {
                continue;
            }
            if pair.general == tool {
                return Some(pair.specialized.clone());
            }
            if pair.specialized == tool {
                return Some(pair.general.clone());
            }
        }
        None
    }
}

impl AgentBackend for DisambiguationAgent {
    fn predict(&self, context: &str, query: &str) -> Result<Vec<ToolCall>, BackendError> {
        let mut calls = self.gold.get(query).cloned().unwrap_or_default();
        for call in &mut calls {
            if let Some(partner) = self.partner(&call.tool, context) {
                call.tool = partner;
            }
        }
        Ok(calls)
    }

    fn identity(&self) -> &str {
        "disambiguation_agent"
    }
}

/// Scripted reflector for the disambiguation scenario: whenever a pair's cue
/// phrase is missing from the prompt (which embeds the current tool
/// definitions), it proposes revisions appending the phrase to both tool
/// descriptions. Revisions preserve the base schema structure.
pub struct DisambiguationReflector {
    base_tools: BTreeMap<String, ToolSchema>,
    pairs: Vec<DisambiguationPair>,
}

impl DisambiguationReflector {
    pub fn new(tools: &[ToolSchema], pairs: Vec<DisambiguationPair>) -> Self {
        let base_tools = tools.iter().map(|t| (t.name.clone(), t.clone())).collect();
        Self { base_tools, pairs }
    }
}

impl CompletionBackend for DisambiguationReflector {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let mut revisions: Vec<serde_json::Value> = Vec::new();
        for pair in &self.pairs {
            if prompt.contains(&pair.phrase) {
                continue;
            }
            for (name, scope) in [
                (&pair.general, "general-purpose"),
                (&pair.specialized, "specialized"),
            ] {
                let Some(base) = self.base_tools.get(name) else {
                    continue;
                };
                let mut revised = base.clone();
                revised.description =
                    format!("{} {} ({scope} variant.)", base.description, pair.phrase);
                revisions
                    .push(serde_json::to_value(&revised).expect("tool serialization"));
            }
        }
        if revisions.is_empty() {
            return Ok("Answer: {}".into());
        }
        let edit = serde_json::json!({
            "example_specific_instructions":
                "- When two tools share a description, pick the one whose scope clause matches the request.",
            "tool_revisions": revisions,
        });
        Ok(format!("Answer: {edit}"))
    }

    fn identity(&self) -> &str {
        "disambiguation_reflector"
    }
}

// ---------------------------------------------------------------------------
// HTTP backends
// ---------------------------------------------------------------------------

/// Connection settings for chat-completion-style HTTP services. The API key
/// is read from the environment variable named by `api_key_env`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_temperature() -> f64 {
    1.0
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

impl HttpConfig {
    fn api_key(&self) -> Result<Option<String>, BackendError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| BackendError::MissingKey(var.clone())),
        }
    }
}

fn http_agent(config: &HttpConfig) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(config.timeout_s)))
        .build()
        .into()
}

fn chat_completion(config: &HttpConfig, prompt: &str) -> Result<String, BackendError> {
    let agent = http_agent(config);
    let url = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
    let body = serde_json::json!({
        "model": config.model,
        "temperature": config.temperature,
        "messages": [{"role": "user", "content": prompt}],
    });
    let key = config.api_key()?;
    let mut last_error = BackendError::Transport("no attempt made".into());
    for _ in 0..=config.max_retries {
        let mut request = agent.post(&url).header("content-type", "application/json");
        if let Some(key) = &key {
            request = request.header("authorization", format!("Bearer {key}"));
        }
        match request.send_json(&body) {
            Ok(mut response) => {
                let text = response
                    .body_mut()
                    .read_to_string()
                    .map_err(|e| BackendError::Transport(e.to_string()))?;
                let value: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| BackendError::Parse(e.to_string()))?;
                let content = value["choices"][0]["message"]["content"]
                    .as_str()
                    .ok_or_else(|| {
                        BackendError::Parse("response carries no message content".into())
                    })?;
                return Ok(content.to_string());
            }
            Err(ureq::Error::StatusCode(code)) => {
                last_error = BackendError::Status(code);
                // Client errors will not improve on retry.
                if (400..500).contains(&code) {
                    return Err(last_error);
                }
            }
            Err(e) => last_error = BackendError::Transport(e.to_string()),
        }
    }
    Err(last_error)
}

/// Chat-completion HTTP reflector backend.
pub struct HttpCompletion {
    config: HttpConfig,
    label: String,
}

impl HttpCompletion {
    pub fn new(config: HttpConfig) -> Self {
        let label = format!("http:{}", config.model);
        Self { config, label }
    }
}

impl CompletionBackend for HttpCompletion {
    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        chat_completion(&self.config, prompt)
    }

    fn identity(&self) -> &str {
        &self.label
    }
}

/// Chat-completion HTTP agent. The model is expected to answer with a JSON
/// array of `{"tool", "arguments"}` objects; the first JSON array found in
/// the response is used.
pub struct HttpAgent {
    config: HttpConfig,
    label: String,
}

impl HttpAgent {
    pub fn new(config: HttpConfig) -> Self {
        let label = format!("http:{}", config.model);
        Self { config, label }
    }
}

/// Extracts a tool-call array from model output: the whole text if it parses,
/// otherwise the outermost bracketed array.
pub fn parse_call_array(text: &str) -> Result<Vec<ToolCall>, BackendError> {
    let trimmed = text.trim();
    if let Ok(calls) = serde_json::from_str::<Vec<ToolCall>>(trimmed) {
        return Ok(calls);
    }
    if let (Some(start), Some(end)) = (trimmed.find('['), trimmed.rfind(']')) {
        if start < end {
            if let Ok(calls) = serde_json::from_str::<Vec<ToolCall>>(&trimmed[start..=end]) {
                return Ok(calls);
            }
        }
    }
    Err(BackendError::Parse(
        "response carries no tool-call array".into(),
    ))
}

impl AgentBackend for HttpAgent {
    fn predict(&self, context: &str, _query: &str) -> Result<Vec<ToolCall>, BackendError> {
        let content = chat_completion(&self.config, context)?;
        parse_call_array(&content)
    }

    fn identity(&self) -> &str {
        &self.label
    }
}

// ---------------------------------------------------------------------------
// Config-driven construction
// ---------------------------------------------------------------------------

/// Reflector/merger backend selection, as written in run config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum CompletionConfig {
    Mock { scenario: std::path::PathBuf },
    Noop,
    Disambiguation {
        tools: std::path::PathBuf,
        pairs: Vec<DisambiguationPair>,
    },
    Http(HttpConfig),
}

/// Agent backend selection, as written in run config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AgentConfig {
    GoldEcho,
    Mock { scenario: std::path::PathBuf },
    Disambiguation { pairs: Vec<DisambiguationPair> },
    Http(HttpConfig),
}

pub fn build_completion(config: &CompletionConfig) -> Result<Box<dyn CompletionBackend>, BackendError> {
    Ok(match config {
        CompletionConfig::Mock { scenario } => Box::new(MockCompletion::from_file(scenario)?),
        CompletionConfig::Noop => Box::new(NoopReflector),
        CompletionConfig::Disambiguation { tools, pairs } => {
            let tools = crate::dataset::load_tools(tools)
                .map_err(|e| BackendError::Parse(e.to_string()))?;
            Box::new(DisambiguationReflector::new(&tools, pairs.clone()))
        }
        CompletionConfig::Http(http) => Box::new(HttpCompletion::new(http.clone())),
    })
}

/// Builds an agent backend. Gold-aware mock agents read their traces from
/// `dataset`.
pub fn build_agent(config: &AgentConfig, dataset: &Dataset) -> Result<Box<dyn AgentBackend>, BackendError> {
    Ok(match config {
        AgentConfig::GoldEcho => Box::new(GoldEchoAgent::new(dataset)),
        AgentConfig::Mock { scenario } => Box::new(MockAgent::from_file(scenario)?),
        AgentConfig::Disambiguation { pairs } => {
            Box::new(DisambiguationAgent::new(dataset, pairs.clone()))
        }
        AgentConfig::Http(http) => Box::new(HttpAgent::new(http.clone())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Example, Split};
    use serde_json::json;

    #[test]
    fn mock_completion_first_match_wins() {
        let mock = MockCompletion::new(vec![
            ScenarioRule {
                pattern: "alpha".into(),
                response: "first".into(),
            },
            ScenarioRule {
                pattern: "a".into(),
                response: "second".into(),
            },
        ]);
        assert_eq!(mock.complete("the alpha case").unwrap(), "first");
        assert_eq!(mock.complete("plain a").unwrap(), "second");
        assert!(matches!(
            mock.complete("nothing"),
            Err(BackendError::NoRuleMatched)
        ));
    }

    fn scenario_dataset() -> Dataset {
        let tools = vec![
            ToolSchema::new("get_a", "Fetch record A."),
            ToolSchema::new("get_b", "Fetch record B."),
        ];
        let examples = vec![Example {
            id: "e1".into(),
            query: "fetch the a record".into(),
            gold_calls: vec![ToolCall::new("get_a").with_arg("x", json!(1))],
            split: Split::Test,
        }];
        Dataset { tools, examples }
    }

    #[test]
    fn gold_echo_returns_gold_calls() {
        let ds = scenario_dataset();
        let agent = GoldEchoAgent::new(&ds);
        let calls = agent.predict("ctx", "fetch the a record").unwrap();
        assert_eq!(calls, ds.examples[0].gold_calls);
        assert!(agent.predict("ctx", "unknown").unwrap().is_empty());
    }

    #[test]
    fn disambiguation_agent_flips_until_phrase_present() {
        let ds = scenario_dataset();
        let pairs = vec![DisambiguationPair {
            general: "get_a".into(),
            specialized: "get_b".into(),
            phrase: "PREFER get_a for plain record lookups".into(),
        }];
        let agent = DisambiguationAgent::new(&ds, pairs);
        let wrong = agent.predict("no cue here", "fetch the a record").unwrap();
        assert_eq!(wrong[0].tool, "get_b");
        assert_eq!(wrong[0].arguments, ds.examples[0].gold_calls[0].arguments);
        let right = agent
            .predict(
                "tools: PREFER get_a for plain record lookups",
                "fetch the a record",
            )
            .unwrap();
        assert_eq!(right[0].tool, "get_a");
    }

    #[test]
    fn disambiguation_reflector_emits_revisions_for_missing_phrases() {
        let ds = scenario_dataset();
        let pairs = vec![DisambiguationPair {
            general: "get_a".into(),
            specialized: "get_b".into(),
            phrase: "PREFER get_a for plain record lookups".into(),
        }];
        let reflector = DisambiguationReflector::new(&ds.tools, pairs);
        let out = reflector.complete("prompt without the cue").unwrap();
        assert!(out.starts_with("Answer: "));
        assert!(out.contains("tool_revisions"));
        assert!(out.contains("PREFER get_a"));
        let idle = reflector
            .complete("prompt with PREFER get_a for plain record lookups present")
            .unwrap();
        assert_eq!(idle, "Answer: {}");
    }

    #[test]
    fn call_array_parsing_tolerates_prose() {
        let calls =
            parse_call_array("Sure: [{\"tool\": \"t\", \"arguments\": {\"a\": 1}}] done").unwrap();
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].tool, "t");
        assert!(parse_call_array("no array").is_err());
    }
}
