//! Operator commands. Each subcommand prints exactly one JSON object to
//! stdout; diagnostics go to stderr. Exit codes: 0 success, 2 usage or
//! configuration problems, 3 data or backend problems.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::analysis::{
    confusable_groups, description_delta, disambiguation_report, export_convergence,
    per_example_improvement, Embedder, ImprovementCriterion,
};
use crate::backend::{build_agent, build_completion, AgentConfig, CompletionConfig, HttpConfig};
use crate::dataset::{dataset_stats, load_dataset, load_tools, Dataset, Split};
use crate::globalize::{detect_slot_families, family_report};
use crate::metrics::{aggregate, write_metrics_csv, write_per_example, MetricsCsvRow, PerExampleRecord};
use crate::optimizer::{rollout, run as run_optimizer, RunConfig, RunError};
use crate::reflect::MergeMode;
use crate::schema::CandidateContext;
use crate::synth::{synthesize, SynthSpec};

pub const DEFAULT_INITIAL_INSTRUCTIONS: &str = "You are a tool-calling assistant. Read the tool definitions, pick the tool whose description matches the request, and fill its arguments exactly as the schema specifies. Answer with a JSON array of {\"tool\", \"arguments\"} objects, and with an empty array when no tool is needed.";

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 2;
const EXIT_DATA: i32 = 3;

/// Analysis thresholds shared with the optimizer's globalization pass.
const ANALYZE_MIN_TOOLS: usize = 5;
const ANALYZE_MIN_FRACTION: f64 = 0.1;

#[derive(Parser)]
#[command(
    name = "ctxopt",
    about = "Context optimizer for tool-calling agents",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(value: SplitArg) -> Self {
        match value {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MergeModeArg {
    Llm,
    Deterministic,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedderArg {
    TfidfLocal,
    External,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic tool inventory with labeled examples
    Synth {
        /// Synthesis spec (JSON)
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for tools.json, examples.jsonl, and the
        /// ground-truth family ledger
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the optimization loop from a config file
    Optimize {
        /// Run config (JSON)
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lambda_tsa: Option<f64>,
        #[arg(long)]
        lambda_sfa: Option<f64>,
        #[arg(long)]
        lambda_osr: Option<f64>,
        /// Disable the slot-globalization pass
        #[arg(long)]
        no_globalize: bool,
        #[arg(long)]
        merge_mode: Option<MergeModeArg>,
        /// Select a backend profile from the config's `backends` map
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Evaluate a context file against a dataset split
    Eval {
        /// Candidate context (JSON)
        #[arg(long)]
        context: PathBuf,
        #[arg(long)]
        tools: PathBuf,
        #[arg(long)]
        examples: PathBuf,
        /// Agent backend config (JSON)
        #[arg(long)]
        agent: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Per-example report destination
        #[arg(long, default_value = "per_example.jsonl")]
        per_example: PathBuf,
        /// Optional metrics.csv destination
        #[arg(long)]
        metrics_csv: Option<PathBuf>,
    },
    /// Compare tool inventories before and after optimization
    Analyze {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 2)]
        min_prefix_tokens: usize,
        #[arg(long, value_enum, default_value = "tfidf-local")]
        embedder: EmbedderArg,
        /// HTTP config (JSON) for the external embedder
        #[arg(long)]
        embed_config: Option<PathBuf>,
        /// Baseline per_example.jsonl for improvement counting
        #[arg(long)]
        base_metrics: Option<PathBuf>,
        /// Optimized per_example.jsonl for improvement counting
        #[arg(long)]
        opt_metrics: Option<PathBuf>,
        /// A group counts as improved when its similarity delta falls below
        /// this threshold
        #[arg(long, default_value_t = -0.01)]
        improved_threshold: f64,
        /// Optional history.csv to re-export as convergence data
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Print inventory statistics
    Stats {
        #[arg(long)]
        tools: PathBuf,
        #[arg(long)]
        examples: PathBuf,
    },
}

enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

fn data(message: impl Into<String>) -> CliError {
    CliError::Data(message.into())
}

/// One backend pairing an optimize run can select with `--backend`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub agent: AgentConfig,
    pub reflector: CompletionConfig,
}

/// The optimize command's config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeConfig {
    #[serde(flatten)]
    pub run: RunConfig,
    pub tools: PathBuf,
    pub examples: PathBuf,
    #[serde(default)]
    pub initial_instructions: Option<String>,
    /// Active profile name in `backends`; defaults to "mock".
    #[serde(default)]
    pub backend: Option<String>,
    pub backends: BTreeMap<String, BackendProfile>,
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
}

pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests are success paths in clap.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::Synth { spec, out, seed } => cmd_synth(&spec, &out, seed),
        Command::Optimize {
            config,
            seed,
            lambda_tsa,
            lambda_sfa,
            lambda_osr,
            no_globalize,
            merge_mode,
            backend,
            run_dir,
        } => cmd_optimize(
            &config,
            OptimizeOverrides {
                seed,
                lambda_tsa,
                lambda_sfa,
                lambda_osr,
                no_globalize,
                merge_mode,
                backend,
                run_dir,
            },
        ),
        Command::Eval {
            context,
            tools,
            examples,
            agent,
            split,
            per_example,
            metrics_csv,
        } => cmd_eval(
            &context,
            &tools,
            &examples,
            &agent,
            split.into(),
            &per_example,
            metrics_csv.as_deref(),
        ),
        Command::Analyze {
            before,
            after,
            out_dir,
            min_prefix_tokens,
            embedder,
            embed_config,
            base_metrics,
            opt_metrics,
            improved_threshold,
            history,
        } => cmd_analyze(AnalyzeArgs {
            before,
            after,
            out_dir,
            min_prefix_tokens,
            embedder,
            embed_config,
            base_metrics,
            opt_metrics,
            improved_threshold,
            history,
        }),
        Command::Stats { tools, examples } => cmd_stats(&tools, &examples),
    };
    match outcome {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn cmd_synth(spec_path: &Path, out_dir: &Path, seed: Option<u64>) -> Result<String, CliError> {
    if !spec_path.exists() {
        return Err(usage(format!("spec not found: {}", spec_path.display())));
    }
    let text = fs::read_to_string(spec_path)
        .map_err(|e| usage(format!("cannot read spec: {e}")))?;
    let mut spec: SynthSpec =
        serde_json::from_str(&text).map_err(|e| usage(format!("bad spec: {e}")))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let synthesis = synthesize(&spec).map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(|e| data(e.to_string()))?;
    let tools_path = out_dir.join("tools.json");
    let examples_path = out_dir.join("examples.jsonl");
    synthesis
        .dataset
        .save(&tools_path, &examples_path)
        .map_err(|e| data(e.to_string()))?;
    fs::write(
        out_dir.join("families_ledger.json"),
        serde_json::to_string_pretty(&synthesis.ledger).expect("ledger serialization") + "\n",
    )
    .map_err(|e| data(e.to_string()))?;
    Ok(serde_json::json!({
        "tools": synthesis.dataset.tools.len(),
        "examples": synthesis.dataset.examples.len(),
        "ambiguity_pairs": synthesis.ledger.ambiguity_pairs.len(),
        "out_dir": out_dir.display().to_string(),
    })
    .to_string())
}

struct OptimizeOverrides {
    seed: Option<u64>,
    lambda_tsa: Option<f64>,
    lambda_sfa: Option<f64>,
    lambda_osr: Option<f64>,
    no_globalize: bool,
    merge_mode: Option<MergeModeArg>,
    backend: Option<String>,
    run_dir: Option<PathBuf>,
}

fn cmd_optimize(config_path: &Path, overrides: OptimizeOverrides) -> Result<String, CliError> {
    let text = fs::read_to_string(config_path)
        .map_err(|e| usage(format!("cannot read config {}: {e}", config_path.display())))?;
    let mut config: OptimizeConfig =
        serde_json::from_str(&text).map_err(|e| usage(format!("bad config: {e}")))?;

    if let Some(seed) = overrides.seed {
        config.run.seed = seed;
    }
    if let Some(w) = overrides.lambda_tsa {
        config.run.weights.lambda_tsa = w;
    }
    if let Some(w) = overrides.lambda_sfa {
        config.run.weights.lambda_sfa = w;
    }
    if let Some(w) = overrides.lambda_osr {
        config.run.weights.lambda_osr = w;
    }
    if overrides.no_globalize {
        config.run.globalize_enabled = false;
    }
    if let Some(mode) = overrides.merge_mode {
        config.run.merge_mode = match mode {
            MergeModeArg::Llm => MergeMode::Llm,
            MergeModeArg::Deterministic => MergeMode::Deterministic,
        };
    }
    if let Some(backend) = overrides.backend {
        config.backend = Some(backend);
    }
    if let Some(run_dir) = overrides.run_dir {
        config.run_dir = Some(run_dir);
    }

    config
        .run
        .validate()
        .map_err(|e| usage(e.to_string()))?;

    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };

    let dataset = load_dataset(&resolve(&config.tools), &resolve(&config.examples))
        .map_err(|e| data(e.to_string()))?;

    let profile_name = config.backend.clone().unwrap_or_else(|| "mock".into());
    let profile = config.backends.get(&profile_name).ok_or_else(|| {
        usage(format!(
            "backend profile `{profile_name}` not in config (available: {})",
            config.backends.keys().cloned().collect::<Vec<_>>().join(", ")
        ))
    })?;
    let agent = build_backend_agent(profile, &dataset, base)?;
    let reflector = build_backend_reflector(profile, base)?;

    let instructions = config
        .initial_instructions
        .clone()
        .unwrap_or_else(|| DEFAULT_INITIAL_INSTRUCTIONS.to_string());
    let seed_context = CandidateContext::seed(instructions, dataset.tools.clone());

    let run_dir = config.run_dir.clone().map(|p| resolve(&p));
    if let Some(dir) = &run_dir {
        fs::create_dir_all(dir).map_err(|e| data(e.to_string()))?;
        fs::write(
            dir.join("config.json"),
            serde_json::to_string_pretty(&config).expect("config serialization") + "\n",
        )
        .map_err(|e| data(e.to_string()))?;
    }

    let result = run_optimizer(
        &config.run,
        &dataset,
        seed_context,
        agent.as_ref(),
        reflector.as_ref(),
        run_dir.as_deref(),
    )
    .map_err(|e| match e {
        RunError::Config { .. } => usage(e.to_string()),
        RunError::Io(_) => data(e.to_string()),
    })?;

    if let Some(dir) = &run_dir {
        export_convergence(&result.history, &dir.join("convergence.csv"))
            .map_err(|e| data(e.to_string()))?;
    }

    Ok(serde_json::json!({
        "iterations": result.history.len(),
        "accepted": result.history.iter().filter(|r| r.accepted).count(),
        "best_val_score": result.best_val_score,
        "test": result.final_test_metrics,
        "run_dir": run_dir.map(|p| p.display().to_string()),
    })
    .to_string())
}

fn build_backend_agent(
    profile: &BackendProfile,
    dataset: &Dataset,
    base: &Path,
) -> Result<Box<dyn crate::backend::AgentBackend>, CliError> {
    let mut agent_config = profile.agent.clone();
    if let AgentConfig::Mock { scenario } = &mut agent_config {
        if !scenario.is_absolute() {
            *scenario = base.join(&scenario);
        }
    }
    build_agent(&agent_config, dataset).map_err(|e| data(e.to_string()))
}

fn build_backend_reflector(
    profile: &BackendProfile,
    base: &Path,
) -> Result<Box<dyn crate::backend::CompletionBackend>, CliError> {
    let mut reflector_config = profile.reflector.clone();
    match &mut reflector_config {
        CompletionConfig::Mock { scenario } => {
            if !scenario.is_absolute() {
                *scenario = base.join(&scenario);
            }
        }
        CompletionConfig::Disambiguation { tools, .. } => {
            if !tools.is_absolute() {
                *tools = base.join(&tools);
            }
        }
        _ => {}
    }
    build_completion(&reflector_config).map_err(|e| data(e.to_string()))
}

fn cmd_eval(
    context_path: &Path,
    tools_path: &Path,
    examples_path: &Path,
    agent_path: &Path,
    split: Split,
    per_example_path: &Path,
    metrics_csv: Option<&Path>,
) -> Result<String, CliError> {
    let dataset = load_dataset(tools_path, examples_path).map_err(|e| data(e.to_string()))?;
    let context_text =
        fs::read_to_string(context_path).map_err(|e| data(format!("cannot read context: {e}")))?;
    let context: CandidateContext =
        serde_json::from_str(&context_text).map_err(|e| data(format!("bad context: {e}")))?;
    let report = context.validate();
    if !report.ok() {
        return Err(data(format!("context failed validation:\n{report}")));
    }
    let agent_text =
        fs::read_to_string(agent_path).map_err(|e| data(format!("cannot read agent config: {e}")))?;
    let agent_config: AgentConfig =
        serde_json::from_str(&agent_text).map_err(|e| data(format!("bad agent config: {e}")))?;
    let agent = build_agent(&agent_config, &dataset).map_err(|e| data(e.to_string()))?;

    let examples: Vec<&crate::dataset::Example> = dataset.split(split).collect();
    if examples.is_empty() {
        let name = match split {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        };
        return Err(data(format!("no {name} examples")));
    }

    let weights = crate::metrics::LossWeights::default();
    let (metrics, _) = rollout(&context, &examples, agent.as_ref(), &weights);
    let records: Vec<PerExampleRecord> = examples
        .iter()
        .zip(metrics.iter())
        .map(|(e, m)| PerExampleRecord::new(e.id.clone(), m))
        .collect();
    write_per_example(per_example_path, &records).map_err(|e| data(e.to_string()))?;
    let agg = aggregate(&metrics);
    if let Some(csv_path) = metrics_csv {
        let row = MetricsCsvRow {
            dataset: examples_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            candidate: context_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            tsa_pct: agg.tsa_pct,
            sfa_pct: agg.sfa_pct_given_tsa,
            osr_pct: agg.osr_pct,
        };
        write_metrics_csv(csv_path, &[row]).map_err(|e| data(e.to_string()))?;
    }
    Ok(serde_json::json!({
        "examples": examples.len(),
        "tsa_pct": agg.tsa_pct,
        "sfa_pct_given_tsa": agg.sfa_pct_given_tsa,
        "osr_pct": agg.osr_pct,
        "per_example": per_example_path.display().to_string(),
    })
    .to_string())
}

struct AnalyzeArgs {
    before: PathBuf,
    after: PathBuf,
    out_dir: PathBuf,
    min_prefix_tokens: usize,
    embedder: EmbedderArg,
    embed_config: Option<PathBuf>,
    base_metrics: Option<PathBuf>,
    opt_metrics: Option<PathBuf>,
    improved_threshold: f64,
    history: Option<PathBuf>,
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<String, CliError> {
    let before = load_tools(&args.before).map_err(|e| data(e.to_string()))?;
    let after = load_tools(&args.after).map_err(|e| data(e.to_string()))?;
    let embedder = match args.embedder {
        EmbedderArg::TfidfLocal => Embedder::TfidfLocal,
        EmbedderArg::External => {
            let path = args
                .embed_config
                .as_ref()
                .ok_or_else(|| usage("--embedder external requires --embed-config"))?;
            let text = fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read embed config: {e}")))?;
            let config: HttpConfig =
                serde_json::from_str(&text).map_err(|e| usage(format!("bad embed config: {e}")))?;
            Embedder::External(config)
        }
    };

    fs::create_dir_all(&args.out_dir).map_err(|e| data(e.to_string()))?;

    let reports = disambiguation_report(&before, &after, args.min_prefix_tokens, &embedder)
        .map_err(|e| data(e.to_string()))?;
    {
        let mut writer = csv::Writer::from_path(args.out_dir.join("disambiguation.csv"))
            .map_err(|e| data(e.to_string()))?;
        writer
            .write_record(["group", "before", "after", "delta"])
            .map_err(|e| data(e.to_string()))?;
        for r in &reports {
            writer
                .write_record([
                    r.group.prefix.clone(),
                    format!("{:.6}", r.before),
                    format!("{:.6}", r.after),
                    format!("{:.6}", r.delta),
                ])
                .map_err(|e| data(e.to_string()))?;
        }
        writer.flush().map_err(|e| data(e.to_string()))?;
    }

    let delta = description_delta(&before, &after).map_err(|e| data(e.to_string()))?;
    {
        let mut writer = csv::Writer::from_path(args.out_dir.join("lengths.csv"))
            .map_err(|e| data(e.to_string()))?;
        writer
            .write_record(["tool", "before_len", "after_len"])
            .map_err(|e| data(e.to_string()))?;
        for row in &delta.per_tool {
            writer
                .write_record([
                    row.tool.clone(),
                    row.before_len.to_string(),
                    row.after_len.to_string(),
                ])
                .map_err(|e| data(e.to_string()))?;
        }
        writer.flush().map_err(|e| data(e.to_string()))?;
    }

    let families = detect_slot_families(&after, ANALYZE_MIN_TOOLS, ANALYZE_MIN_FRACTION);
    fs::write(
        args.out_dir.join("families.json"),
        serde_json::to_string_pretty(&family_report(&families)).expect("report serialization")
            + "\n",
    )
    .map_err(|e| data(e.to_string()))?;

    let mut improvement = None;
    if let (Some(base_path), Some(opt_path)) = (&args.base_metrics, &args.opt_metrics) {
        let base =
            crate::metrics::read_per_example(base_path).map_err(|e| data(e.to_string()))?;
        let opt = crate::metrics::read_per_example(opt_path).map_err(|e| data(e.to_string()))?;
        let mut writer = csv::Writer::from_path(args.out_dir.join("improvement.csv"))
            .map_err(|e| data(e.to_string()))?;
        writer
            .write_record(["criterion", "improved", "total", "rate"])
            .map_err(|e| data(e.to_string()))?;
        let mut rows = serde_json::Map::new();
        for (criterion, label) in [
            (ImprovementCriterion::Sfa, "sfa"),
            (ImprovementCriterion::Osr, "osr"),
        ] {
            let (improved, total, rate) =
                per_example_improvement(&base, &opt, criterion).map_err(|e| data(e.to_string()))?;
            writer
                .write_record([
                    label.to_string(),
                    improved.to_string(),
                    total.to_string(),
                    format!("{rate:.6}"),
                ])
                .map_err(|e| data(e.to_string()))?;
            rows.insert(
                label.into(),
                serde_json::json!({"improved": improved, "total": total, "rate": rate}),
            );
        }
        writer.flush().map_err(|e| data(e.to_string()))?;
        improvement = Some(serde_json::Value::Object(rows));
    }

    if let Some(history_path) = &args.history {
        let history = read_history_csv(history_path)?;
        export_convergence(&history, &args.out_dir.join("convergence.csv"))
            .map_err(|e| data(e.to_string()))?;
    }

    let groups_improved = reports
        .iter()
        .filter(|r| r.delta < args.improved_threshold)
        .count();
    let confusable_tools: usize = reports.iter().map(|r| r.group.tool_names.len()).sum();
    let avg_delta = if reports.is_empty() {
        0.0
    } else {
        reports.iter().map(|r| r.delta).sum::<f64>() / reports.len() as f64
    };
    Ok(serde_json::json!({
        "tools": before.len(),
        "modified_descriptions": delta.modified,
        "modified_fraction": delta.modified_fraction,
        "mean_len_before": delta.mean_len_before,
        "mean_len_after": delta.mean_len_after,
        "relative_increase_pct": delta.relative_increase_pct,
        "confusable_groups": reports.len(),
        "confusable_tools": confusable_tools,
        "groups_improved": groups_improved,
        "avg_similarity_delta": avg_delta,
        "improvement": improvement,
        "out_dir": args.out_dir.display().to_string(),
    })
    .to_string())
}

fn read_history_csv(path: &Path) -> Result<Vec<crate::optimizer::IterationRecord>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| data(e.to_string()))?;
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| data(e.to_string()))?;
        let get = |i: usize| row.get(i).unwrap_or_default();
        let parse_f = |i: usize| get(i).parse::<f64>().ok();
        out.push(crate::optimizer::IterationRecord {
            iter: get(0).parse().map_err(|_| data("bad history row"))?,
            selected_candidate: get(1).parse().unwrap_or(0),
            minibatch_score_before: parse_f(2).unwrap_or(0.0),
            minibatch_score_after: parse_f(3).unwrap_or(0.0),
            accepted: get(4) == "true",
            val_score: parse_f(5),
            best_val_score: parse_f(6),
            rollouts_total: get(7).parse().unwrap_or(0),
        });
    }
    Ok(out)
}

fn cmd_stats(tools_path: &Path, examples_path: &Path) -> Result<String, CliError> {
    let dataset = load_dataset(tools_path, examples_path).map_err(|e| data(e.to_string()))?;
    let stats = dataset_stats(&dataset);
    let groups = confusable_groups(&dataset.tools, 2);
    Ok(serde_json::json!({
        "n_tools": stats.n_tools,
        "total_args_avg": stats.total_args_avg,
        "total_args_max": stats.total_args_max,
        "required_args_avg": stats.required_args_avg,
        "required_args_max": stats.required_args_max,
        "examples": {
            "train": dataset.split_count(Split::Train),
            "val": dataset.split_count(Split::Val),
            "test": dataset.split_count(Split::Test),
        },
        "confusable_groups": groups.len(),
    })
    .to_string())
}
