//! Trace-supervised datasets: queries paired with gold tool calls over a
//! fixed tool inventory, plus loaders, split regimes, and inventory
//! statistics.
//!
//! Wire formats: `tools.json` is an array of tool schema entries;
//! `examples.jsonl` carries one example object per line:
//! `{"id", "query", "gold_calls": [{"tool", "arguments": {...}}], "split"}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::ToolSchema;

/// A single structured tool invocation: the tool name plus argument values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    #[serde(default)]
    pub arguments: serde_json::Map<String, serde_json::Value>,
}

impl ToolCall {
    pub fn new(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            arguments: serde_json::Map::new(),
        }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: impl Into<serde_json::Value>) -> Self {
        self.arguments.insert(key.into(), value.into());
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One labeled example: a user query and the gold tool-call trace. An empty
/// `gold_calls` list means the correct behavior is to call no tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub query: String,
    #[serde(default)]
    pub gold_calls: Vec<ToolCall>,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub tools: Vec<ToolSchema>,
    pub examples: Vec<Example>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("example `{example}`: {message}")]
    SchemaMismatch { example: String, message: String },
    #[error("tool `{tool}` has {available} non-test examples, needs {needed}")]
    InsufficientExamples {
        tool: String,
        available: usize,
        needed: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Dataset {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn split_count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    pub fn tool(&self, name: &str) -> Option<&ToolSchema> {
        self.tools.iter().find(|t| t.name == name)
    }

    /// Checks the cross-references: every gold call names a known tool, every
    /// gold argument key names a parameter of that tool, and argument keys
    /// are nonempty.
    pub fn validate(&self) -> Result<(), DatasetError> {
        for example in &self.examples {
            for call in &example.gold_calls {
                let tool = self.tool(&call.tool).ok_or_else(|| DatasetError::SchemaMismatch {
                    example: example.id.clone(),
                    message: format!("gold call names unknown tool `{}`", call.tool),
                })?;
                for key in call.arguments.keys() {
                    if key.is_empty() {
                        return Err(DatasetError::SchemaMismatch {
                            example: example.id.clone(),
                            message: format!("empty argument key in call to `{}`", call.tool),
                        });
                    }
                    if tool.param(key).is_none() {
                        return Err(DatasetError::SchemaMismatch {
                            example: example.id.clone(),
                            message: format!(
                                "gold argument `{key}` is not a parameter of `{}`",
                                call.tool
                            ),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, tools_path: &Path, examples_path: &Path) -> Result<(), DatasetError> {
        fs::write(
            tools_path,
            serde_json::to_string_pretty(&self.tools).expect("tools serialize") + "\n",
        )?;
        let mut lines = String::new();
        for example in &self.examples {
            lines.push_str(&serde_json::to_string(example).expect("example serialize"));
            lines.push('\n');
        }
        fs::write(examples_path, lines)?;
        Ok(())
    }
}

/// Loads and validates a dataset from `tools.json` + `examples.jsonl`.
pub fn load_dataset(tools_path: &Path, examples_path: &Path) -> Result<Dataset, DatasetError> {
    let tools = load_tools(tools_path)?;
    let text = fs::read_to_string(examples_path)?;
    let mut examples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let example: Example = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: format!("{}:{}", examples_path.display(), lineno + 1),
            message: e.to_string(),
        })?;
        examples.push(example);
    }
    let dataset = Dataset { tools, examples };
    dataset.validate()?;
    Ok(dataset)
}

pub fn load_tools(path: &Path) -> Result<Vec<ToolSchema>, DatasetError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Relabels splits for a low-supervision regime: each tool contributes
/// exactly `n` train and `n` val examples, drawn deterministically under
/// `seed` from its non-test examples; everything already in test stays in
/// test. Remaining non-test examples move to test so the example multiset is
/// preserved. Examples with no gold calls keep their split, as they belong
/// to no tool.
pub fn make_train_regime(ds: &Dataset, n: usize, seed: u64) -> Result<Dataset, DatasetError> {
    let mut per_tool: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for tool in &ds.tools {
        per_tool.insert(tool.name.as_str(), Vec::new());
    }
    for (idx, example) in ds.examples.iter().enumerate() {
        if example.split == Split::Test {
            continue;
        }
        if let Some(call) = example.gold_calls.first() {
            if let Some(bucket) = per_tool.get_mut(call.tool.as_str()) {
                bucket.push(idx);
            }
        }
    }
    for tool in &ds.tools {
        let available = per_tool[tool.name.as_str()].len();
        if available < 2 * n {
            return Err(DatasetError::InsufficientExamples {
                tool: tool.name.clone(),
                available,
                needed: 2 * n,
            });
        }
    }
    let mut out = ds.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for tool in &ds.tools {
        let mut indices = per_tool[tool.name.as_str()].clone();
        indices.shuffle(&mut rng);
        for (rank, idx) in indices.into_iter().enumerate() {
            out.examples[idx].split = if rank < n {
                Split::Train
            } else if rank < 2 * n {
                Split::Val
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Inventory-level argument statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub n_tools: usize,
    pub total_args_avg: f64,
    pub total_args_max: usize,
    pub required_args_avg: f64,
    pub required_args_max: usize,
}

pub fn dataset_stats(ds: &Dataset) -> StatsTable {
    let n = ds.tools.len();
    let totals: Vec<usize> = ds.tools.iter().map(|t| t.parameters.len()).collect();
    let required: Vec<usize> = ds.tools.iter().map(|t| t.required.len()).collect();
    let avg = |v: &[usize]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<usize>() as f64 / v.len() as f64
        }
    };
    StatsTable {
        n_tools: n,
        total_args_avg: avg(&totals),
        total_args_max: totals.iter().copied().max().unwrap_or(0),
        required_args_avg: avg(&required),
        required_args_max: required.iter().copied().max().unwrap_or(0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{ParamType, ParameterSpec};

    fn tool(name: &str, params: &[&str], required: &[&str]) -> ToolSchema {
        let mut t = ToolSchema::new(name, format!("The {name} tool."));
        for p in params {
            t = t.with_param(ParameterSpec::new(*p, "A value.", ParamType::String));
        }
        t.with_required(required)
    }

    fn tiny_dataset() -> Dataset {
        Dataset {
            tools: vec![tool("alpha", &["x", "y"], &["x"]), tool("beta", &["z"], &[])],
            examples: vec![
                Example {
                    id: "e1".into(),
                    query: "use alpha".into(),
                    gold_calls: vec![ToolCall::new("alpha").with_arg("x", "1")],
                    split: Split::Train,
                },
                Example {
                    id: "e2".into(),
                    query: "use beta".into(),
                    gold_calls: vec![ToolCall::new("beta")],
                    split: Split::Test,
                },
            ],
        }
    }

    #[test]
    fn unknown_gold_tool_is_a_schema_mismatch() {
        let mut ds = tiny_dataset();
        ds.examples[0].gold_calls[0].tool = "ghost".into();
        assert!(matches!(
            ds.validate(),
            Err(DatasetError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn unknown_argument_key_is_a_schema_mismatch() {
        let mut ds = tiny_dataset();
        ds.examples[0].gold_calls[0]
            .arguments
            .insert("nope".into(), "v".into());
        let err = ds.validate().unwrap_err();
        assert!(err.to_string().contains("nope"));
    }

    #[test]
    fn empty_examples_file_loads_with_valid_tools() {
        let dir = tempfile::tempdir().unwrap();
        let tools_path = dir.path().join("tools.json");
        let examples_path = dir.path().join("examples.jsonl");
        let ds = tiny_dataset();
        std::fs::write(
            &tools_path,
            serde_json::to_string_pretty(&ds.tools).unwrap(),
        )
        .unwrap();
        std::fs::write(&examples_path, "").unwrap();
        let loaded = load_dataset(&tools_path, &examples_path).unwrap();
        assert_eq!(loaded.examples.len(), 0);
        assert_eq!(loaded.tools.len(), 2);
    }

    #[test]
    fn save_load_round_trip_is_deep_equal() {
        let dir = tempfile::tempdir().unwrap();
        let tools_path = dir.path().join("tools.json");
        let examples_path = dir.path().join("examples.jsonl");
        let ds = tiny_dataset();
        ds.save(&tools_path, &examples_path).unwrap();
        let loaded = load_dataset(&tools_path, &examples_path).unwrap();
        assert_eq!(loaded, ds);
    }

    #[test]
    fn regime_rejects_tools_with_too_few_examples() {
        let ds = tiny_dataset();
        let err = make_train_regime(&ds, 1, 7).unwrap_err();
        match err {
            DatasetError::InsufficientExamples { tool, .. } => {
                assert!(tool == "alpha" || tool == "beta")
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn regime_is_deterministic_and_balanced() {
        let mut ds = tiny_dataset();
        ds.examples.clear();
        for tool_name in ["alpha", "beta"] {
            for j in 0..5 {
                ds.examples.push(Example {
                    id: format!("{tool_name}_{j}"),
                    query: format!("call {tool_name} {j}"),
                    gold_calls: vec![ToolCall::new(tool_name)],
                    split: Split::Train,
                });
            }
        }
        let a = make_train_regime(&ds, 2, 42).unwrap();
        let b = make_train_regime(&ds, 2, 42).unwrap();
        assert_eq!(a, b);
        for tool_name in ["alpha", "beta"] {
            let count = |split| {
                a.examples
                    .iter()
                    .filter(|e| e.split == split && e.gold_calls[0].tool == tool_name)
                    .count()
            };
            assert_eq!(count(Split::Train), 2);
            assert_eq!(count(Split::Val), 2);
            assert_eq!(count(Split::Test), 1);
        }
        // Only split labels changed.
        let strip = |ds: &Dataset| {
            ds.examples
                .iter()
                .map(|e| (e.id.clone(), e.query.clone(), e.gold_calls.clone()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&ds));
    }

    #[test]
    fn stats_on_single_tool() {
        let ds = Dataset {
            tools: vec![tool("t", &["a", "b", "c"], &["a"])],
            examples: vec![],
        };
        let stats = dataset_stats(&ds);
        assert_eq!(stats.n_tools, 1);
        assert_eq!(stats.total_args_avg, 3.0);
        assert_eq!(stats.total_args_max, 3);
        assert_eq!(stats.required_args_avg, 1.0);
        assert_eq!(stats.required_args_max, 1);
    }
}
