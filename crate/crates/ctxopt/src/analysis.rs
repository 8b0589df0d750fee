//! Post-hoc analyses over tool inventories and run artifacts: confusable
//! tool groups by shared name prefix, intra-group description similarity
//! (local TF-IDF by default, sentence-embedding HTTP endpoint optionally),
//! description-length deltas between inventories, per-example improvement
//! counting, and convergence-history export.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::HttpConfig;
use crate::metrics::PerExampleRecord;
use crate::optimizer::IterationRecord;
use crate::schema::ToolSchema;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("group `{0}` has fewer than two members")]
    GroupTooSmall(String),
    #[error("inventory mismatch: {0}")]
    InventoryMismatch(String),
    #[error("metric lists are not aligned: {0}")]
    Alignment(String),
    #[error("embedding backend failed: {0}")]
    EmbedBackend(String),
    #[error("cannot embed empty text")]
    EmptyText,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Lowercase alphanumeric tokens of a text.
pub fn tokenize(text: &str) -> Vec<String> {
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

/// Jaccard overlap between the token sets of two texts, in `[0, 1]`.
pub fn token_overlap(a: &str, b: &str) -> f64 {
    let set_a: BTreeSet<String> = tokenize(a).into_iter().collect();
    let set_b: BTreeSet<String> = tokenize(b).into_iter().collect();
    let union = set_a.union(&set_b).count();
    if union == 0 {
        return 0.0;
    }
    set_a.intersection(&set_b).count() as f64 / union as f64
}

/// Tools sharing a leading name-token prefix, a proxy for routing risk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusableGroup {
    pub prefix: String,
    pub tool_names: Vec<String>,
}

/// Groups tools by the longest shared leading token sequence (tokens split
/// on underscores) of at least `min_prefix_tokens` tokens. Each tool lands
/// in at most one group — its longest shared prefix — and only groups with
/// two or more members are returned, sorted by prefix.
pub fn confusable_groups(tools: &[ToolSchema], min_prefix_tokens: usize) -> Vec<ConfusableGroup> {
    let min = min_prefix_tokens.max(1);
    let names: Vec<Vec<&str>> = tools.iter().map(|t| t.name.split('_').collect()).collect();
    let mut prefix_counts: BTreeMap<String, usize> = BTreeMap::new();
    for tokens in &names {
        for len in min..=tokens.len() {
            *prefix_counts.entry(tokens[..len].join("_")).or_insert(0) += 1;
        }
    }
    let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for (tool, tokens) in tools.iter().zip(&names) {
        let longest_shared = (min..=tokens.len())
            .rev()
            .map(|len| tokens[..len].join("_"))
            .find(|prefix| prefix_counts[prefix] >= 2);
        if let Some(prefix) = longest_shared {
            groups.entry(prefix).or_default().push(tool.name.clone());
        }
    }
    groups
        .into_iter()
        .filter(|(_, members)| members.len() >= 2)
        .map(|(prefix, tool_names)| ConfusableGroup { prefix, tool_names })
        .collect()
}

/// Description similarity backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Embedder {
    /// Corpus-fit TF-IDF vectors with cosine similarity. Deterministic and
    /// offline; the default.
    TfidfLocal,
    /// Sentence-embedding HTTP endpoint (`POST {base_url}/embeddings`),
    /// needed to reproduce sentence-embedding similarity figures.
    External(HttpConfig),
}

/// TF-IDF document model over a fixed corpus. Weights use raw term counts
/// and smoothed inverse document frequency `ln((1 + n) / (1 + df)) + 1`.
pub struct TfidfModel {
    vocab: BTreeMap<String, usize>,
    idf: Vec<f64>,
}

impl TfidfModel {
    pub fn fit<S: AsRef<str>>(corpus: &[S]) -> Self {
        let n = corpus.len();
        let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
        let mut df: Vec<usize> = Vec::new();
        for doc in corpus {
            let distinct: BTreeSet<String> = tokenize(doc.as_ref()).into_iter().collect();
            for token in distinct {
                match vocab.get(&token) {
                    Some(&idx) => df[idx] += 1,
                    None => {
                        vocab.insert(token, df.len());
                        df.push(1);
                    }
                }
            }
        }
        let idf = df
            .iter()
            .map(|&d| ((1 + n) as f64 / (1 + d) as f64).ln() + 1.0)
            .collect();
        Self { vocab, idf }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for token in tokenize(text) {
            if let Some(&idx) = self.vocab.get(&token) {
                *counts.entry(idx).or_insert(0) += 1;
            }
        }
        let mut vector = vec![0.0; self.idf.len()];
        for (idx, count) in counts {
            vector[idx] = count as f64 * self.idf[idx];
        }
        vector
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let norm_a: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let norm_b: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm_a == 0.0 || norm_b == 0.0 {
        return 0.0;
    }
    dot / (norm_a * norm_b)
}

fn external_embeddings(config: &HttpConfig, texts: &[&str]) -> Result<Vec<Vec<f64>>, AnalysisError> {
    let url = format!("{}/embeddings", config.base_url.trim_end_matches('/'));
    let body = serde_json::json!({"model": config.model, "input": texts});
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(std::time::Duration::from_secs(config.timeout_s)))
        .build()
        .into();
    let mut request = agent.post(&url).header("content-type", "application/json");
    if let Some(var) = &config.api_key_env {
        let key =
            std::env::var(var).map_err(|_| AnalysisError::EmbedBackend(format!("${var} unset")))?;
        request = request.header("authorization", format!("Bearer {key}"));
    }
    let mut response = request
        .send_json(&body)
        .map_err(|e| AnalysisError::EmbedBackend(e.to_string()))?;
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| AnalysisError::EmbedBackend(e.to_string()))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| AnalysisError::EmbedBackend(e.to_string()))?;
    let data = value["data"]
        .as_array()
        .ok_or_else(|| AnalysisError::EmbedBackend("response carries no data array".into()))?;
    let mut out = Vec::with_capacity(data.len());
    for item in data {
        let embedding = item["embedding"]
            .as_array()
            .ok_or_else(|| AnalysisError::EmbedBackend("item carries no embedding".into()))?
            .iter()
            .filter_map(|v| v.as_f64())
            .collect();
        out.push(embedding);
    }
    if out.len() != texts.len() {
        return Err(AnalysisError::EmbedBackend(format!(
            "asked for {} embeddings, got {}",
            texts.len(),
            out.len()
        )));
    }
    Ok(out)
}

fn pairwise_cosines(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            out.push(cosine(&vectors[i], &vectors[j]));
        }
    }
    out
}

fn embed(texts: &[&str], embedder: &Embedder) -> Result<Vec<Vec<f64>>, AnalysisError> {
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(AnalysisError::EmptyText);
    }
    match embedder {
        Embedder::TfidfLocal => {
            let model = TfidfModel::fit(texts);
            Ok(texts.iter().map(|t| model.vector(t)).collect())
        }
        Embedder::External(config) => external_embeddings(config, texts),
    }
}

/// Cosine similarity of two texts under the chosen embedder. The local
/// TF-IDF route fits its vocabulary on exactly these two texts.
pub fn embed_and_cosine(a: &str, b: &str, embedder: &Embedder) -> Result<f64, AnalysisError> {
    let vectors = embed(&[a, b], embedder)?;
    Ok(cosine(&vectors[0], &vectors[1]))
}

/// Mean cosine similarity over all unordered description pairs in a group.
/// With the local embedder the TF-IDF vocabulary is fit on the whole
/// description corpus, not just the group.
pub fn intra_group_similarity(
    group: &ConfusableGroup,
    descriptions: &BTreeMap<String, String>,
    embedder: &Embedder,
) -> Result<f64, AnalysisError> {
    if group.tool_names.len() < 2 {
        return Err(AnalysisError::GroupTooSmall(group.prefix.clone()));
    }
    let texts: Vec<&str> = group
        .tool_names
        .iter()
        .map(|name| {
            descriptions
                .get(name)
                .map(String::as_str)
                .ok_or_else(|| AnalysisError::InventoryMismatch(format!("no description for `{name}`")))
        })
        .collect::<Result<_, _>>()?;
    let vectors = match embedder {
        Embedder::TfidfLocal => {
            if texts.iter().any(|t| t.trim().is_empty()) {
                return Err(AnalysisError::EmptyText);
            }
            let corpus: Vec<&str> = descriptions.values().map(String::as_str).collect();
            let model = TfidfModel::fit(&corpus);
            texts.iter().map(|t| model.vector(t)).collect()
        }
        Embedder::External(_) => embed(&texts, embedder)?,
    };
    let cosines = pairwise_cosines(&vectors);
    Ok(cosines.iter().sum::<f64>() / cosines.len() as f64)
}

/// Before/after similarity for one confusable group; negative `delta` means
/// the descriptions moved apart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub group: ConfusableGroup,
    pub before: f64,
    pub after: f64,
    pub delta: f64,
}

/// Intra-group similarity before and after optimization for every
/// confusable group of the inventory.
pub fn disambiguation_report(
    before: &[ToolSchema],
    after: &[ToolSchema],
    min_prefix_tokens: usize,
    embedder: &Embedder,
) -> Result<Vec<SimilarityReport>, AnalysisError> {
    check_same_names(before, after)?;
    let desc = |tools: &[ToolSchema]| -> BTreeMap<String, String> {
        tools
            .iter()
            .map(|t| (t.name.clone(), t.description.clone()))
            .collect()
    };
    let before_desc = desc(before);
    let after_desc = desc(after);
    let mut out = Vec::new();
    for group in confusable_groups(before, min_prefix_tokens) {
        let b = intra_group_similarity(&group, &before_desc, embedder)?;
        let a = intra_group_similarity(&group, &after_desc, embedder)?;
        out.push(SimilarityReport {
            group,
            before: b,
            after: a,
            delta: a - b,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolLengthDelta {
    pub tool: String,
    pub before_len: usize,
    pub after_len: usize,
}

/// Description-change summary between two inventories over the same tools.
/// Lengths are character counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub modified: usize,
    pub modified_fraction: f64,
    pub mean_len_before: f64,
    pub mean_len_after: f64,
    pub relative_increase_pct: f64,
    pub per_tool: Vec<ToolLengthDelta>,
}

fn check_same_names(before: &[ToolSchema], after: &[ToolSchema]) -> Result<(), AnalysisError> {
    let names = |tools: &[ToolSchema]| -> BTreeSet<String> {
        tools.iter().map(|t| t.name.clone()).collect()
    };
    let before_names = names(before);
    let after_names = names(after);
    if before_names != after_names {
        let missing: Vec<String> = before_names.symmetric_difference(&after_names).cloned().collect();
        return Err(AnalysisError::InventoryMismatch(format!(
            "tool name sets differ on: {}",
            missing.join(", ")
        )));
    }
    Ok(())
}

pub fn description_delta(
    before: &[ToolSchema],
    after: &[ToolSchema],
) -> Result<DeltaReport, AnalysisError> {
    check_same_names(before, after)?;
    let after_by_name: BTreeMap<&str, &ToolSchema> =
        after.iter().map(|t| (t.name.as_str(), t)).collect();
    let mut modified = 0;
    let mut per_tool = Vec::with_capacity(before.len());
    let mut total_before = 0usize;
    let mut total_after = 0usize;
    for tool in before {
        let revised = after_by_name[tool.name.as_str()];
        if revised.description != tool.description {
            modified += 1;
        }
        let before_len = tool.description.chars().count();
        let after_len = revised.description.chars().count();
        total_before += before_len;
        total_after += after_len;
        per_tool.push(ToolLengthDelta {
            tool: tool.name.clone(),
            before_len,
            after_len,
        });
    }
    let n = before.len().max(1) as f64;
    let mean_len_before = total_before as f64 / n;
    let mean_len_after = total_after as f64 / n;
    let relative_increase_pct = if total_before == 0 {
        0.0
    } else {
        (mean_len_after - mean_len_before) / mean_len_before * 100.0
    };
    Ok(DeltaReport {
        modified,
        modified_fraction: modified as f64 / before.len().max(1) as f64,
        mean_len_before,
        mean_len_after,
        relative_increase_pct,
        per_tool,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImprovementCriterion {
    Sfa,
    Osr,
}

/// Counts examples where the optimized run strictly beats the baseline on
/// the chosen criterion. Inputs must be aligned by example id.
pub fn per_example_improvement(
    base: &[PerExampleRecord],
    opt: &[PerExampleRecord],
    criterion: ImprovementCriterion,
) -> Result<(usize, usize, f64), AnalysisError> {
    if base.len() != opt.len() {
        return Err(AnalysisError::Alignment(format!(
            "{} baseline vs {} optimized records",
            base.len(),
            opt.len()
        )));
    }
    let mut improved = 0usize;
    for (b, o) in base.iter().zip(opt.iter()) {
        if b.id != o.id {
            return Err(AnalysisError::Alignment(format!(
                "id `{}` paired with `{}`",
                b.id, o.id
            )));
        }
        let gained = match criterion {
            ImprovementCriterion::Sfa => {
                o.sfa.unwrap_or(0.0) > b.sfa.unwrap_or(0.0)
            }
            ImprovementCriterion::Osr => o.osr > b.osr,
        };
        if gained {
            improved += 1;
        }
    }
    let total = base.len();
    let rate = if total == 0 {
        0.0
    } else {
        improved as f64 / total as f64
    };
    Ok((improved, total, rate))
}

/// Writes the convergence curve data for a run history.
pub fn export_convergence(history: &[IterationRecord], path: &Path) -> Result<(), AnalysisError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    writer
        .write_record([
            "iter",
            "minibatch_before",
            "minibatch_after",
            "accepted",
            "val_score",
            "best_val_score",
        ])
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    for r in history {
        writer
            .write_record([
                r.iter.to_string(),
                format!("{}", r.minibatch_score_before),
                format!("{}", r.minibatch_score_after),
                r.accepted.to_string(),
                r.val_score.map(|v| v.to_string()).unwrap_or_default(),
                r.best_val_score.map(|v| v.to_string()).unwrap_or_default(),
            ])
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    writer.flush().map_err(AnalysisError::Io)?;
    Ok(())
}
