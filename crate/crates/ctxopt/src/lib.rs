//! Context optimizer for tool-calling agents.
//!
//! `ctxopt` jointly edits a global instruction prompt and per-tool schema
//! descriptions from rollout feedback, targeting call-level correctness:
//! tool selection, slot filling, and overall success. The optimizer keeps a
//! bounded pool of candidate contexts under Pareto retention, proposes
//! localized edits via a pluggable reflector backend, merges accepted drafts
//! with the validation-best context, and lifts recurring cross-tool slot
//! conventions into named global rules to keep the context compact.
//!
//! The crate is organized around the optimization loop:
//!
//! - [`schema`] — tool schemas, candidate contexts, rendering, revisions
//! - [`dataset`] — examples with gold traces, loaders, split regimes, stats
//! - [`synth`] — deterministic synthetic inventory/example generator
//! - [`metrics`] — TSA/SFA/OSR evaluation, loss, call matching, scoring
//! - [`diagnose`] — structured failure signals from (predicted, gold) pairs
//! - [`pool`] — candidate pool with Pareto front maintenance and sampling
//! - [`reflect`] — reflector prompt, edit parsing/application, best-merge
//! - [`backend`] — completion/agent backend traits plus mock and HTTP impls
//! - [`globalize`] — slot-family detection and two-level context rewriting
//! - [`optimizer`] — the main loop: rollouts, acceptance gates, checkpoints
//! - [`analysis`] — confusable-group similarity, description deltas, exports
//! - [`cli`] — operator subcommands (`synth`, `optimize`, `eval`, `analyze`, `stats`)

pub mod analysis;
pub mod backend;
pub mod cli;
pub mod dataset;
pub mod diagnose;
pub mod families;
pub mod globalize;
pub mod metrics;
pub mod optimizer;
pub mod pool;
pub mod reflect;
pub mod schema;
pub mod synth;

pub use backend::{AgentBackend, BackendError, CompletionBackend};
pub use dataset::{Dataset, Example, Split, ToolCall};
pub use metrics::{LossWeights, RolloutMetrics};
pub use schema::{CandidateContext, GlobalRule, ParamType, ParameterSpec, ToolSchema};
