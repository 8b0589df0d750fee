//! The optimization loop: minibatch rollouts, failure diagnosis, reflector
//! edit proposals, best-merge, optional slot globalization, and a two-stage
//! acceptance gate (strict minibatch improvement, then full-validation
//! scoring). Improved candidates enter the bounded Pareto pool; the best
//! context only moves on a strictly better validation score, so the best
//! validation score is non-decreasing over the run.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{AgentBackend, CompletionBackend};
use crate::dataset::{Dataset, Example, Split};
use crate::diagnose::{diagnose, FailureKind, FailureSignal};
use crate::globalize::{detect_slot_families, globalize};
use crate::metrics::{
    aggregate, eval_example, score, Aggregate, LossWeights, PerExampleRecord, RolloutMetrics,
};
use crate::pool::Pool;
use crate::reflect::{
    apply_edits, merge_with_best, propose_edits, FeedbackBundle, FeedbackItem, MergeMode,
    ReflectError,
};
use crate::schema::{render_context, CandidateContext};

/// Detection thresholds for the per-iteration globalization pass.
const GLOBALIZE_MIN_TOOLS: usize = 5;
const GLOBALIZE_MIN_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub pool_capacity: usize,
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub globalize_enabled: bool,
    #[serde(default = "default_merge_mode")]
    pub merge_mode: MergeMode,
    #[serde(default = "default_retry_limit")]
    pub retry_limit: u32,
}

fn default_true() -> bool {
    true
}

fn default_merge_mode() -> MergeMode {
    MergeMode::Deterministic
}

fn default_retry_limit() -> u32 {
    2
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            iterations: 10,
            batch_size: 4,
            pool_capacity: 8,
            weights: LossWeights::default(),
            seed: 0,
            globalize_enabled: true,
            merge_mode: MergeMode::Deterministic,
            retry_limit: 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {message}")]
    Config { message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        if self.iterations == 0 || self.batch_size == 0 || self.pool_capacity == 0 {
            return Err(RunError::Config {
                message: "iterations, batch_size, and pool_capacity must be positive".into(),
            });
        }
        self.weights.validate().map_err(|e| RunError::Config {
            message: e.to_string(),
        })
    }
}

/// One row of the run history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: u64,
    pub selected_candidate: u64,
    pub minibatch_score_before: f64,
    pub minibatch_score_after: f64,
    pub accepted: bool,
    pub val_score: Option<f64>,
    pub best_val_score: Option<f64>,
    /// Cumulative agent rollouts, for matched-budget comparisons.
    pub rollouts_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_context: CandidateContext,
    pub best_val_score: Option<f64>,
    pub history: Vec<IterationRecord>,
    pub final_test_metrics: Option<Aggregate>,
}

/// Runs the agent over `examples` under `candidate`, evaluating and
/// diagnosing each rollout. Metrics come back in example order; failed
/// agent calls are recorded as all-zero metrics with a backend-error signal
/// and the run continues. Rollouts execute concurrently.
pub fn rollout(
    candidate: &CandidateContext,
    examples: &[&Example],
    agent: &dyn AgentBackend,
    weights: &LossWeights,
) -> (Vec<RolloutMetrics>, FeedbackBundle) {
    let outcomes: Vec<(RolloutMetrics, Option<FeedbackItem>)> = examples
        .par_iter()
        .map(|example| {
            let context = match render_context(candidate, &example.query) {
                Ok(text) => text,
                Err(e) => {
                    let mut signal = FailureSignal::new(
                        &example.id,
                        FailureKind::BackendError,
                        format!("context rendering failed: {e}"),
                    );
                    signal.note.truncate(500);
                    return (
                        RolloutMetrics::failed(weights),
                        Some(FeedbackItem {
                            example_id: example.id.clone(),
                            query: example.query.clone(),
                            predicted_calls: vec![],
                            gold_calls: example.gold_calls.clone(),
                            signals: vec![signal],
                        }),
                    );
                }
            };
            match agent.predict(&context, &example.query) {
                Ok(calls) => {
                    let metrics = eval_example(&calls, &example.gold_calls, weights);
                    let signals = if metrics.osr {
                        Vec::new()
                    } else {
                        diagnose(&example.id, &calls, &example.gold_calls, &candidate.tools)
                    };
                    let item = (!signals.is_empty()).then(|| FeedbackItem {
                        example_id: example.id.clone(),
                        query: example.query.clone(),
                        predicted_calls: calls,
                        gold_calls: example.gold_calls.clone(),
                        signals,
                    });
                    (metrics, item)
                }
                Err(e) => {
                    let signal = FailureSignal::new(
                        &example.id,
                        FailureKind::BackendError,
                        format!("agent backend failed: {e}"),
                    );
                    (
                        RolloutMetrics::failed(weights),
                        Some(FeedbackItem {
                            example_id: example.id.clone(),
                            query: example.query.clone(),
                            predicted_calls: vec![],
                            gold_calls: example.gold_calls.clone(),
                            signals: vec![signal],
                        }),
                    )
                }
            }
        })
        .collect();
    let mut metrics = Vec::with_capacity(outcomes.len());
    let mut bundle = FeedbackBundle::default();
    for (m, item) in outcomes {
        metrics.push(m);
        if let Some(item) = item {
            bundle.items.push(item);
        }
    }
    (metrics, bundle)
}

fn per_instance_scores(
    examples: &[&Example],
    metrics: &[RolloutMetrics],
    weights: &LossWeights,
) -> BTreeMap<String, f64> {
    examples
        .iter()
        .zip(metrics.iter())
        .map(|(example, m)| {
            let contribution = (weights.lambda_tsa * m.tsa_value()
                + weights.lambda_sfa * m.tsa_value() * m.sfa.unwrap_or(0.0)
                + weights.lambda_osr * m.osr_value())
                / weights.sum();
            (example.id.clone(), contribution)
        })
        .collect()
}

struct Checkpointer<'a> {
    dir: Option<&'a Path>,
}

impl Checkpointer<'_> {
    fn init(&self) -> Result<(), RunError> {
        if let Some(dir) = self.dir {
            fs::create_dir_all(dir.join("per_example"))?;
        }
        Ok(())
    }

    fn per_example(
        &self,
        iter: u64,
        examples: &[&Example],
        metrics: &[RolloutMetrics],
    ) -> Result<(), RunError> {
        if let Some(dir) = self.dir {
            let records: Vec<PerExampleRecord> = examples
                .iter()
                .zip(metrics.iter())
                .map(|(e, m)| PerExampleRecord::new(e.id.clone(), m))
                .collect();
            crate::metrics::write_per_example(
                &dir.join("per_example").join(format!("{iter}.jsonl")),
                &records,
            )
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        }
        Ok(())
    }

    fn state(
        &self,
        pool: &Pool,
        best: &CandidateContext,
        history: &[IterationRecord],
    ) -> Result<(), RunError> {
        if let Some(dir) = self.dir {
            fs::write(
                dir.join("pool.json"),
                serde_json::to_string_pretty(pool).expect("pool serialization") + "\n",
            )?;
            fs::write(
                dir.join("best_context.json"),
                serde_json::to_string_pretty(best).expect("context serialization") + "\n",
            )?;
            write_history_csv(&dir.join("history.csv"), history)?;
        }
        Ok(())
    }
}

/// Writes the run history with one row per iteration.
pub fn write_history_csv(path: &Path, history: &[IterationRecord]) -> Result<(), std::io::Error> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| std::io::Error::other(e.to_string()))?;
    writer
        .write_record([
            "iter",
            "selected_candidate",
            "minibatch_score_before",
            "minibatch_score_after",
            "accepted",
            "val_score",
            "best_val_score",
            "rollouts_total",
        ])
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    for r in history {
        writer
            .write_record([
                r.iter.to_string(),
                r.selected_candidate.to_string(),
                format!("{}", r.minibatch_score_before),
                format!("{}", r.minibatch_score_after),
                r.accepted.to_string(),
                r.val_score.map(|v| v.to_string()).unwrap_or_default(),
                r.best_val_score.map(|v| v.to_string()).unwrap_or_default(),
                r.rollouts_total.to_string(),
            ])
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    writer.flush()?;
    Ok(())
}

/// Executes the optimization loop.
///
/// Per iteration: sample a seeded minibatch, Pareto-select a start candidate,
/// score it on the minibatch, diagnose failures, propose and apply reflector
/// edits, merge with the current best, optionally globalize slot semantics,
/// and re-score on the same minibatch. Only a strict minibatch improvement
/// earns a full-validation scoring; a validation score at least as good as
/// the best admits the candidate to the pool, and only a strictly better one
/// moves the best pointer. Iterations whose minibatch had no failures, or
/// whose reflector output stayed malformed through the retry budget, are
/// skipped.
pub fn run(
    config: &RunConfig,
    dataset: &Dataset,
    seed_context: CandidateContext,
    agent: &dyn AgentBackend,
    reflector: &dyn CompletionBackend,
    checkpoint_dir: Option<&Path>,
) -> Result<OptimizationResult, RunError> {
    config.validate()?;
    let report = seed_context.validate();
    if !report.ok() {
        return Err(RunError::Config {
            message: format!("seed context invalid:\n{report}"),
        });
    }
    let train: Vec<&Example> = dataset.split(Split::Train).collect();
    let val: Vec<&Example> = dataset.split(Split::Val).collect();
    let test: Vec<&Example> = dataset.split(Split::Test).collect();
    if train.is_empty() || val.is_empty() {
        return Err(RunError::Config {
            message: "dataset needs nonempty train and val splits".into(),
        });
    }

    let checkpoint = Checkpointer {
        dir: checkpoint_dir,
    };
    checkpoint.init()?;

    let weights = &config.weights;
    let mut minibatch_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(2).wrapping_add(1));
    let mut select_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_mul(2).wrapping_add(2));

    let mut pool = Pool::new(config.pool_capacity, seed_context.clone());
    let mut rollouts_total: u64 = 0;

    // Seed the pool entry's per-instance profile so Pareto selection has
    // training scores to weigh from the first iteration.
    let (seed_train_metrics, _) = rollout(&seed_context, &train, agent, weights);
    rollouts_total += train.len() as u64;
    if let Some(entry) = pool.entry_mut(0) {
        entry.per_instance_scores = per_instance_scores(&train, &seed_train_metrics, weights);
    }

    let mut best_context = seed_context;
    let mut best_val: Option<f64> = None;
    let mut history: Vec<IterationRecord> = Vec::new();

    for iter in 1..=config.iterations {
        let batch_len = config.batch_size.min(train.len());
        let mut batch_idx =
            rand::seq::index::sample(&mut minibatch_rng, train.len(), batch_len).into_vec();
        batch_idx.sort_unstable();
        let minibatch: Vec<&Example> = batch_idx.iter().map(|&i| train[i]).collect();

        let selected = pool
            .pareto_select(&mut select_rng)
            .map_err(|e| RunError::Config {
                message: e.to_string(),
            })?;
        let selected_id = selected.id;
        let selected_ctx = selected.candidate.clone();

        let (before_metrics, feedback) = rollout(&selected_ctx, &minibatch, agent, weights);
        rollouts_total += minibatch.len() as u64;
        let score_before = score(&before_metrics, weights).expect("nonempty minibatch");
        checkpoint.per_example(iter, &minibatch, &before_metrics)?;

        let mut record = IterationRecord {
            iter,
            selected_candidate: selected_id,
            minibatch_score_before: score_before,
            minibatch_score_after: score_before,
            accepted: false,
            val_score: None,
            best_val_score: best_val,
            rollouts_total,
        };

        // A fully clean minibatch gives the reflector nothing to work from.
        if feedback.is_empty() {
            history.push(record);
            checkpoint.state(&pool, &best_context, &history)?;
            continue;
        }

        let candidate = propose_edits(reflector, &selected_ctx, &feedback, config.retry_limit)
            .and_then(|edits| {
                let revised: std::collections::BTreeSet<String> = edits
                    .tool_revisions
                    .iter()
                    .map(|t| t.name.clone())
                    .collect();
                let draft = apply_edits(&selected_ctx, &edits)?;
                match merge_with_best(
                    &draft,
                    &best_context,
                    &revised,
                    config.merge_mode,
                    Some(reflector),
                ) {
                    Ok(merged) => Ok(merged),
                    Err(ReflectError::MergeBackendFailure { .. }) => Ok(merge_with_best(
                        &draft,
                        &best_context,
                        &revised,
                        MergeMode::Deterministic,
                        None,
                    )?),
                    Err(e) => Err(e),
                }
            });
        let candidate = match candidate {
            Ok(ctx) => ctx,
            Err(_) => {
                // Malformed reflector output through the whole retry budget:
                // the iteration proposes no edit.
                history.push(record);
                checkpoint.state(&pool, &best_context, &history)?;
                continue;
            }
        };

        let candidate = if config.globalize_enabled {
            let families = detect_slot_families(
                &candidate.tools,
                GLOBALIZE_MIN_TOOLS,
                GLOBALIZE_MIN_FRACTION,
            );
            globalize(&candidate, &families)
        } else {
            candidate
        };

        let (after_metrics, _) = rollout(&candidate, &minibatch, agent, weights);
        rollouts_total += minibatch.len() as u64;
        let score_after = score(&after_metrics, weights).expect("nonempty minibatch");
        record.minibatch_score_after = score_after;
        record.rollouts_total = rollouts_total;

        if score_after > score_before {
            record.accepted = true;
            let (val_metrics, _) = rollout(&candidate, &val, agent, weights);
            rollouts_total += val.len() as u64;
            let val_score = score(&val_metrics, weights).expect("nonempty val split");
            record.val_score = Some(val_score);
            record.rollouts_total = rollouts_total;

            if best_val.is_none_or(|b| val_score >= b) {
                let (train_metrics, _) = rollout(&candidate, &train, agent, weights);
                rollouts_total += train.len() as u64;
                record.rollouts_total = rollouts_total;
                let scores = per_instance_scores(&train, &train_metrics, weights);
                pool.add(candidate.clone(), scores, val_score, iter);
                pool.update_front();
                if best_val.is_none_or(|b| val_score > b) {
                    best_context = candidate;
                    best_val = Some(val_score);
                }
            }
        }

        record.best_val_score = best_val;
        history.push(record);
        checkpoint.state(&pool, &best_context, &history)?;
    }

    let final_test_metrics = if test.is_empty() {
        None
    } else {
        let (test_metrics, _) = rollout(&best_context, &test, agent, weights);
        Some(aggregate(&test_metrics))
    };

    Ok(OptimizationResult {
        best_context,
        best_val_score: best_val,
        history,
        final_test_metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{GoldEchoAgent, NoopReflector};
    use crate::dataset::ToolCall;
    use crate::schema::{ParamType, ParameterSpec, ToolSchema};
    use serde_json::json;

    fn two_tool_dataset() -> Dataset {
        let tools = vec![
            ToolSchema::new("get_alpha", "Fetch the alpha record.")
                .with_param(ParameterSpec::new("key", "Record key.", ParamType::String))
                .with_required(&["key"]),
            ToolSchema::new("get_beta", "Fetch the beta record."),
        ];
        let mut examples = Vec::new();
        for (i, split) in [(0, Split::Train), (1, Split::Train), (2, Split::Val), (3, Split::Test)]
        {
            examples.push(Example {
                id: format!("e{i}"),
                query: format!("fetch alpha {i}"),
                gold_calls: vec![ToolCall::new("get_alpha").with_arg("key", json!(format!("k{i}")))],
                split,
            });
        }
        Dataset { tools, examples }
    }

    #[test]
    fn gold_agent_rollout_is_perfect_and_quiet() {
        let ds = two_tool_dataset();
        let agent = GoldEchoAgent::new(&ds);
        let ctx = CandidateContext::seed("P", ds.tools.clone());
        let train: Vec<&Example> = ds.split(Split::Train).collect();
        let (metrics, feedback) = rollout(&ctx, &train, &agent, &LossWeights::default());
        assert!(metrics.iter().all(|m| m.osr));
        assert!(feedback.is_empty());
    }

    #[test]
    fn wrong_example_yields_one_feedback_item() {
        struct OneWrong;
        impl AgentBackend for OneWrong {
            fn predict(
                &self,
                _context: &str,
                query: &str,
            ) -> Result<Vec<ToolCall>, crate::backend::BackendError> {
                if query.ends_with('0') {
                    Ok(vec![ToolCall::new("get_beta")])
                } else {
                    Ok(vec![ToolCall::new("get_alpha")
                        .with_arg("key", json!(query.rsplit(' ').next().map(|s| format!("k{s}")).unwrap()))])
                }
            }
            fn identity(&self) -> &str {
                "one_wrong"
            }
        }
        let ds = two_tool_dataset();
        let ctx = CandidateContext::seed("P", ds.tools.clone());
        let train: Vec<&Example> = ds.split(Split::Train).collect();
        let (metrics, feedback) = rollout(&ctx, &train, &OneWrong, &LossWeights::default());
        assert_eq!(feedback.items.len(), 1);
        assert_eq!(feedback.items[0].example_id, "e0");
        assert!(!metrics[0].tsa);
        assert!(metrics[1].osr);
    }

    #[test]
    fn metrics_match_per_example_recomputation() {
        let ds = two_tool_dataset();
        let agent = GoldEchoAgent::new(&ds);
        let ctx = CandidateContext::seed("P", ds.tools.clone());
        let all: Vec<&Example> = ds.examples.iter().collect();
        let w = LossWeights::default();
        let (metrics, _) = rollout(&ctx, &all, &agent, &w);
        for (example, m) in all.iter().zip(metrics.iter()) {
            let direct = eval_example(&example.gold_calls, &example.gold_calls, &w);
            assert_eq!(*m, direct);
        }
    }

    #[test]
    fn noop_reflector_leaves_seed_untouched() {
        let ds = two_tool_dataset();
        // An agent that is wrong everywhere, so every minibatch has feedback.
        struct AlwaysWrong;
        impl AgentBackend for AlwaysWrong {
            fn predict(
                &self,
                _context: &str,
                _query: &str,
            ) -> Result<Vec<ToolCall>, crate::backend::BackendError> {
                Ok(vec![ToolCall::new("get_beta")])
            }
            fn identity(&self) -> &str {
                "always_wrong"
            }
        }
        let config = RunConfig {
            iterations: 4,
            batch_size: 2,
            globalize_enabled: false,
            ..RunConfig::default()
        };
        let seed_ctx = CandidateContext::seed("stay the same", ds.tools.clone());
        let result = run(&config, &ds, seed_ctx.clone(), &AlwaysWrong, &NoopReflector, None).unwrap();
        assert_eq!(result.best_context, seed_ctx);
        assert_eq!(result.best_val_score, None);
        assert!(result.history.iter().all(|r| !r.accepted));
        assert!(result
            .history
            .iter()
            .all(|r| r.minibatch_score_after == r.minibatch_score_before));
    }

    #[test]
    fn identical_seeds_give_identical_runs() {
        let ds = two_tool_dataset();
        let config = RunConfig {
            iterations: 3,
            batch_size: 2,
            ..RunConfig::default()
        };
        let seed_ctx = CandidateContext::seed("P", ds.tools.clone());
        let agent = GoldEchoAgent::new(&ds);
        let a = run(&config, &ds, seed_ctx.clone(), &agent, &NoopReflector, None).unwrap();
        let b = run(&config, &ds, seed_ctx, &agent, &NoopReflector, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let ds = two_tool_dataset();
        let config = RunConfig {
            batch_size: 0,
            ..RunConfig::default()
        };
        let seed_ctx = CandidateContext::seed("P", ds.tools.clone());
        let agent = GoldEchoAgent::new(&ds);
        assert!(matches!(
            run(&config, &ds, seed_ctx, &agent, &NoopReflector, None),
            Err(RunError::Config { .. })
        ));
    }
}
