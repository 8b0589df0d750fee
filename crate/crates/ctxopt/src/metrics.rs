//! Call-level correctness metrics for tool-calling rollouts.
//!
//! One rollout is judged on three axes: tool selection (the predicted tool
//! multiset equals the gold multiset, including the no-tool case), slot
//! filling (recall of gold argument assignments, conditional on correct tool
//! selection), and overall success (tool plus every slot and value exact).
//! The scalar loss combines the three with nonnegative weights:
//!
//! ```text
//! loss = w_tsa * (1 - tsa) + w_sfa * tsa * (1 - sfa) + w_osr * (1 - osr)
//! ```
//!
//! Multi-call traces are aligned by a maximum-cardinality matching on exact
//! tool-name equality; among maximum matchings the one with the most exact
//! argument-value agreements wins, with lowest-index pairs breaking ties.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::ToolCall;

/// Nonnegative weights for the three loss terms. Must not all be zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_tsa: f64,
    pub lambda_sfa: f64,
    pub lambda_osr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_tsa: 1.0,
            lambda_sfa: 1.0,
            lambda_osr: 1.0,
        }
    }
}

impl LossWeights {
    pub fn sum(&self) -> f64 {
        self.lambda_tsa + self.lambda_sfa + self.lambda_osr
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let all = [self.lambda_tsa, self.lambda_sfa, self.lambda_osr];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(MetricsError::BadWeights);
        }
        if self.sum() == 0.0 {
            return Err(MetricsError::BadWeights);
        }
        Ok(())
    }
}

/// Per-example evaluation outcome. `sfa` is only defined when tool selection
/// was correct; overall success implies both of the other flags.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub tsa: bool,
    pub sfa: Option<f64>,
    pub osr: bool,
    pub loss: f64,
}

impl RolloutMetrics {
    /// All-zero metrics for a rollout that never produced a trace.
    pub fn failed(weights: &LossWeights) -> Self {
        Self {
            tsa: false,
            sfa: None,
            osr: false,
            loss: weights.lambda_tsa + weights.lambda_osr,
        }
    }

    pub fn tsa_value(&self) -> f64 {
        if self.tsa {
            1.0
        } else {
            0.0
        }
    }

    pub fn osr_value(&self) -> f64 {
        if self.osr {
            1.0
        } else {
            0.0
        }
    }
}

/// Alignment between predicted and gold calls. Indexes refer back to the
/// input slices; paired calls always share a tool name.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_predicted: Vec<usize>,
    pub unmatched_gold: Vec<usize>,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot score an empty result list")]
    EmptyResults,
    #[error("loss weights must be finite, nonnegative, and not all zero")]
    BadWeights,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("failed to parse report line {line}: {message}")]
    Report { line: usize, message: String },
}

fn as_bool(v: &serde_json::Value) -> Option<bool> {
    match v {
        serde_json::Value::Bool(b) => Some(*b),
        serde_json::Value::String(s) => {
            let t = s.trim();
            if t.eq_ignore_ascii_case("true") {
                Some(true)
            } else if t.eq_ignore_ascii_case("false") {
                Some(false)
            } else {
                None
            }
        }
        _ => None,
    }
}

enum Num {
    Int(i64),
    Float(f64),
}

fn as_num(v: &serde_json::Value) -> Option<Num> {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(Num::Int(i))
            } else {
                n.as_f64().map(Num::Float)
            }
        }
        serde_json::Value::String(s) => {
            let t = s.trim();
            if t.is_empty() {
                return None;
            }
            if let Ok(i) = t.parse::<i64>() {
                Some(Num::Int(i))
            } else if let Ok(f) = t.parse::<f64>() {
                if f.is_finite() {
                    Some(Num::Float(f))
                } else {
                    None
                }
            } else {
                None
            }
        }
        _ => None,
    }
}

/// Canonicalized value equality: strings are compared after trimming outer
/// whitespace (case-sensitive), numeric-looking values numerically
/// (`"2"` equals `2`), booleans case-insensitively, lists element-wise in
/// order, and objects key-wise.
pub fn value_equal(a: &serde_json::Value, b: &serde_json::Value) -> bool {
    use serde_json::Value;
    if let (Some(x), Some(y)) = (as_bool(a), as_bool(b)) {
        return x == y;
    }
    if let (Some(x), Some(y)) = (as_num(a), as_num(b)) {
        return match (x, y) {
            (Num::Int(i), Num::Int(j)) => i == j,
            (Num::Int(i), Num::Float(f)) | (Num::Float(f), Num::Int(i)) => i as f64 == f,
            (Num::Float(f), Num::Float(g)) => f == g,
        };
    }
    match (a, b) {
        (Value::Null, Value::Null) => true,
        (Value::String(x), Value::String(y)) => x.trim() == y.trim(),
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y.iter()).all(|(u, v)| value_equal(u, v))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len()
                && x.iter().all(|(k, u)| y.get(k).is_some_and(|v| value_equal(u, v)))
        }
        _ => false,
    }
}

/// Count of gold argument entries reproduced by the prediction: the key
/// exists and the values agree under [`value_equal`].
fn agreement_count(predicted: &ToolCall, gold: &ToolCall) -> usize {
    gold.arguments
        .iter()
        .filter(|(k, v)| predicted.arguments.get(*k).is_some_and(|pv| value_equal(pv, v)))
        .count()
}

fn exact_arguments(predicted: &ToolCall, gold: &ToolCall) -> bool {
    predicted.arguments.len() == gold.arguments.len()
        && agreement_count(predicted, gold) == gold.arguments.len()
}

#[derive(Clone, Default)]
struct Assignment {
    agreements: usize,
    pairs: Vec<(usize, usize)>,
}

/// Exhaustive best assignment inside one tool-name group: match every member
/// of the smaller side, maximize total agreements, break ties toward the
/// lexicographically smallest pair list.
fn best_group_assignment(
    pred_idx: &[usize],
    gold_idx: &[usize],
    predicted: &[ToolCall],
    gold: &[ToolCall],
) -> Assignment {
    let rows = pred_idx.len();
    let cols = gold_idx.len();
    let scores: Vec<Vec<usize>> = pred_idx
        .iter()
        .map(|&p| {
            gold_idx
                .iter()
                .map(|&g| agreement_count(&predicted[p], &gold[g]))
                .collect()
        })
        .collect();
    let target = rows.min(cols);

    // Past 16 gold calls per name the bitmask gets too wide; fall back to a
    // greedy sweep. Real traces have a handful of parallel calls at most.
    if cols > 16 {
        return greedy_group_assignment(pred_idx, gold_idx, &scores, target);
    }

    fn better(a: &Assignment, b: &Assignment) -> bool {
        if a.pairs.len() != b.pairs.len() {
            return a.pairs.len() > b.pairs.len();
        }
        if a.agreements != b.agreements {
            return a.agreements > b.agreements;
        }
        a.pairs < b.pairs
    }

    #[allow(clippy::too_many_arguments)]
    fn solve(
        row: usize,
        mask: u32,
        rows: usize,
        cols: usize,
        target: usize,
        pred_idx: &[usize],
        gold_idx: &[usize],
        scores: &[Vec<usize>],
        memo: &mut BTreeMap<(usize, u32), Assignment>,
    ) -> Assignment {
        if row == rows {
            return Assignment::default();
        }
        if let Some(hit) = memo.get(&(row, mask)) {
            return hit.clone();
        }
        let used = mask.count_ones() as usize;
        let mut best: Option<Assignment> = None;
        for col in 0..cols {
            if mask & (1 << col) != 0 {
                continue;
            }
            let mut cand = solve(
                row + 1,
                mask | (1 << col),
                rows,
                cols,
                target,
                pred_idx,
                gold_idx,
                scores,
                memo,
            );
            cand.agreements += scores[row][col];
            cand.pairs.insert(0, (pred_idx[row], gold_idx[col]));
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
        // Skipping this predicted call is only legal when the rows below can
        // still fill the matching to full cardinality.
        let remaining_rows = rows - row - 1;
        if remaining_rows + used >= target {
            let cand = solve(
                row + 1,
                mask,
                rows,
                cols,
                target,
                pred_idx,
                gold_idx,
                scores,
                memo,
            );
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
        let best = best.unwrap_or_default();
        memo.insert((row, mask), best.clone());
        best
    }

    let mut memo = BTreeMap::new();
    solve(0, 0, rows, cols, target, pred_idx, gold_idx, &scores, &mut memo)
}

fn greedy_group_assignment(
    pred_idx: &[usize],
    gold_idx: &[usize],
    scores: &[Vec<usize>],
    target: usize,
) -> Assignment {
    let mut candidates: Vec<(usize, usize, usize)> = Vec::new();
    for (r, row) in scores.iter().enumerate() {
        for (c, &s) in row.iter().enumerate() {
            candidates.push((s, r, c));
        }
    }
    candidates.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_r = vec![false; pred_idx.len()];
    let mut used_c = vec![false; gold_idx.len()];
    let mut out = Assignment::default();
    for (s, r, c) in candidates {
        if out.pairs.len() == target {
            break;
        }
        if used_r[r] || used_c[c] {
            continue;
        }
        used_r[r] = true;
        used_c[c] = true;
        out.agreements += s;
        out.pairs.push((pred_idx[r], gold_idx[c]));
    }
    out.pairs.sort_unstable();
    out
}

/// Aligns predicted calls with gold calls: maximum-cardinality matching on
/// exact tool-name equality, maximizing exact argument-value agreements among
/// maximum matchings, deterministic under a lowest-index tie-break.
pub fn match_calls(predicted: &[ToolCall], gold: &[ToolCall]) -> Matching {
    let mut groups: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, call) in predicted.iter().enumerate() {
        groups.entry(call.tool.as_str()).or_default().0.push(i);
    }
    for (i, call) in gold.iter().enumerate() {
        groups.entry(call.tool.as_str()).or_default().1.push(i);
    }
    let mut matching = Matching::default();
    for (pred_idx, gold_idx) in groups.values() {
        if pred_idx.is_empty() || gold_idx.is_empty() {
            continue;
        }
        let assignment = best_group_assignment(pred_idx, gold_idx, predicted, gold);
        matching.pairs.extend(assignment.pairs);
    }
    matching.pairs.sort_unstable();
    let matched_p: Vec<usize> = matching.pairs.iter().map(|&(p, _)| p).collect();
    let matched_g: Vec<usize> = matching.pairs.iter().map(|&(_, g)| g).collect();
    matching.unmatched_predicted = (0..predicted.len())
        .filter(|i| !matched_p.contains(i))
        .collect();
    matching.unmatched_gold = (0..gold.len()).filter(|i| !matched_g.contains(i)).collect();
    matching
}

fn name_multiset(calls: &[ToolCall]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for call in calls {
        *counts.entry(call.tool.as_str()).or_insert(0usize) += 1;
    }
    counts
}

/// Evaluates one (predicted, gold) pair.
///
/// - `tsa` is set iff the predicted tool-name multiset equals the gold
///   multiset (both empty counts as correct: no tool was needed).
/// - `sfa` is the recall of gold argument assignments over matched pairs,
///   defined only when `tsa` holds; zero gold slots make it vacuously 1.
/// - `osr` additionally requires every matched pair to agree on the exact
///   argument key set with equal values — extra predicted keys break it.
pub fn eval_example(
    predicted: &[ToolCall],
    gold: &[ToolCall],
    weights: &LossWeights,
) -> RolloutMetrics {
    let tsa = name_multiset(predicted) == name_multiset(gold);
    let matching = match_calls(predicted, gold);
    let total_gold_slots: usize = gold.iter().map(|c| c.arguments.len()).sum();
    let sfa = if tsa {
        if total_gold_slots == 0 {
            Some(1.0)
        } else {
            let agreements: usize = matching
                .pairs
                .iter()
                .map(|&(p, g)| agreement_count(&predicted[p], &gold[g]))
                .sum();
            Some(agreements as f64 / total_gold_slots as f64)
        }
    } else {
        None
    };
    let osr = tsa
        && matching.unmatched_gold.is_empty()
        && matching.unmatched_predicted.is_empty()
        && matching
            .pairs
            .iter()
            .all(|&(p, g)| exact_arguments(&predicted[p], &gold[g]));
    let tsa_v = if tsa { 1.0 } else { 0.0 };
    let osr_v = if osr { 1.0 } else { 0.0 };
    let loss = weights.lambda_tsa * (1.0 - tsa_v)
        + weights.lambda_sfa * tsa_v * (1.0 - sfa.unwrap_or(0.0))
        + weights.lambda_osr * (1.0 - osr_v);
    RolloutMetrics {
        tsa,
        sfa,
        osr,
        loss,
    }
}

/// Composite per-candidate score in `[0, 1]`: the weight-normalized mean of
/// `w_tsa * tsa + w_sfa * tsa * sfa + w_osr * osr` over examples. Perfect
/// rollouts score 1, wrong-tool rollouts contribute 0.
pub fn score(results: &[RolloutMetrics], weights: &LossWeights) -> Result<f64, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::EmptyResults);
    }
    weights.validate()?;
    let total: f64 = results
        .iter()
        .map(|m| {
            let tsa = m.tsa_value();
            weights.lambda_tsa * tsa
                + weights.lambda_sfa * tsa * m.sfa.unwrap_or(0.0)
                + weights.lambda_osr * m.osr_value()
        })
        .sum();
    Ok(total / (weights.sum() * results.len() as f64))
}

/// Dataset-level aggregate: TSA and OSR as percentages over all examples,
/// SFA as a percentage over the examples with correct tool selection (absent
/// when there are none).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub tsa_pct: f64,
    pub sfa_pct_given_tsa: Option<f64>,
    pub osr_pct: f64,
}

pub fn aggregate(results: &[RolloutMetrics]) -> Aggregate {
    let n = results.len();
    if n == 0 {
        return Aggregate {
            tsa_pct: 0.0,
            sfa_pct_given_tsa: None,
            osr_pct: 0.0,
        };
    }
    let tsa_pct = 100.0 * results.iter().filter(|m| m.tsa).count() as f64 / n as f64;
    let osr_pct = 100.0 * results.iter().filter(|m| m.osr).count() as f64 / n as f64;
    let sfas: Vec<f64> = results.iter().filter_map(|m| m.sfa).collect();
    let sfa_pct_given_tsa = if sfas.is_empty() {
        None
    } else {
        Some(100.0 * sfas.iter().sum::<f64>() / sfas.len() as f64)
    };
    Aggregate {
        tsa_pct,
        sfa_pct_given_tsa,
        osr_pct,
    }
}

/// One line of a `per_example.jsonl` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerExampleRecord {
    pub id: String,
    pub tsa: u8,
    pub sfa: Option<f64>,
    pub osr: u8,
    pub loss: f64,
}

impl PerExampleRecord {
    pub fn new(id: impl Into<String>, metrics: &RolloutMetrics) -> Self {
        Self {
            id: id.into(),
            tsa: metrics.tsa as u8,
            sfa: metrics.sfa,
            osr: metrics.osr as u8,
            loss: metrics.loss,
        }
    }

    pub fn metrics(&self) -> RolloutMetrics {
        RolloutMetrics {
            tsa: self.tsa != 0,
            sfa: self.sfa,
            osr: self.osr != 0,
            loss: self.loss,
        }
    }
}

pub fn write_per_example(path: &Path, records: &[PerExampleRecord]) -> Result<(), MetricsError> {
    let mut file = std::fs::File::create(path)?;
    for record in records {
        serde_json::to_writer(&mut file, record).map_err(std::io::Error::other)?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_per_example(path: &Path) -> Result<Vec<PerExampleRecord>, MetricsError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| MetricsError::Report {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

/// One row of a `metrics.csv` summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCsvRow {
    pub dataset: String,
    pub candidate: String,
    pub tsa_pct: f64,
    pub sfa_pct: Option<f64>,
    pub osr_pct: f64,
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsCsvRow]) -> Result<(), MetricsError> {
    let mut writer =
        csv::Writer::from_path(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    writer
        .write_record(["dataset", "candidate", "tsa_pct", "sfa_pct", "osr_pct"])
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    for row in rows {
        writer
            .write_record([
                row.dataset.clone(),
                row.candidate.clone(),
                format!("{:.4}", row.tsa_pct),
                row.sfa_pct.map(|v| format!("{v:.4}")).unwrap_or_default(),
                format!("{:.4}", row.osr_pct),
            ])
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}
