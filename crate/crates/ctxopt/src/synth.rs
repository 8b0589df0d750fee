//! Deterministic generator for enterprise-style tool inventories and labeled
//! examples. Tools are assembled from a fixed verb x workflow-noun grid,
//! recurring slot families are planted across a controlled fraction of tools
//! with naming variants, and near-duplicate tool pairs differing in one scope
//! clause provide intentional routing ambiguity. All values come from closed
//! synthetic vocabularies; nothing resembles personal data.
//!
//! Generation is a pure function of the spec (including its seed): equal
//! specs produce byte-equal serialized datasets.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, Example, Split, ToolCall};
use crate::families::{self, FamilyId};
use crate::schema::{ParamType, ParameterSpec, ToolSchema};

/// One slot family to plant: which base field names it contributes and the
/// fraction of tools that carry it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family_name: String,
    pub member_field_names: Vec<String>,
    pub applies_fraction: f64,
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_tools: usize,
    #[serde(default)]
    pub slot_families: Vec<FamilySpec>,
    pub examples_per_tool: usize,
    #[serde(default)]
    pub ambiguity_pairs: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// A representative enterprise-style spec: identifier fields on 62% of
    /// tools, date windows on half, numeric bounds and an archive flag on a
    /// smaller share, plus intentionally ambiguous tool pairs.
    pub fn demo(n_tools: usize, examples_per_tool: usize, ambiguity_pairs: usize, seed: u64) -> Self {
        Self {
            n_tools,
            slot_families: vec![
                FamilySpec {
                    family_name: "identifier_fields".into(),
                    member_field_names: vec!["account_id".into()],
                    applies_fraction: 0.62,
                },
                FamilySpec {
                    family_name: "datetime_fields".into(),
                    member_field_names: vec!["start_date".into(), "end_date".into()],
                    applies_fraction: 0.5,
                },
                FamilySpec {
                    family_name: "numeric_bounds".into(),
                    member_field_names: vec!["range_minimum".into(), "range_maximum".into()],
                    applies_fraction: 0.3,
                },
                FamilySpec {
                    family_name: "boolean_parameters".into(),
                    member_field_names: vec!["include_archived".into()],
                    applies_fraction: 0.25,
                },
            ],
            examples_per_tool,
            ambiguity_pairs,
            seed,
        }
    }
}

#[derive(Debug, Error)]
#[error("invalid synthesis spec: {message}")]
pub struct SpecError {
    pub message: String,
}

impl SpecError {
    fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

/// Where a family was planted, for ground-truth comparison against detection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedMember {
    pub tool: String,
    pub param: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedFamily {
    pub family: FamilyId,
    pub tools: Vec<String>,
    pub members: Vec<PlantedMember>,
    /// Members whose description carries a divergent local convention on top
    /// of the shared rule sentence.
    pub overrides: Vec<PlantedMember>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguityPair {
    pub general: String,
    pub specialized: String,
}

/// Ground truth emitted alongside the dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SynthLedger {
    pub families: Vec<PlantedFamily>,
    pub ambiguity_pairs: Vec<AmbiguityPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthesis {
    pub dataset: Dataset,
    pub ledger: SynthLedger,
}

const VERBS: [(&str, &str); 6] = [
    ("get", "retrieve the"),
    ("list", "list"),
    ("search", "search"),
    ("create", "create a new"),
    ("update", "update an existing"),
    ("export", "export"),
];

const WORKFLOWS: [(&str, [&str; 3]); 8] = [
    ("search", ["catalog_entry", "knowledge_article", "vendor_profile"]),
    ("analytics", ["usage_trend", "conversion_funnel", "traffic_summary"]),
    ("reporting", ["expense_report", "sales_digest", "audit_log"]),
    ("inventory", ["stock_level", "item_overage", "warehouse_bin"]),
    ("finance", ["invoice", "payment_plan", "budget_line"]),
    ("support", ["support_ticket", "escalation_case", "feedback_note"]),
    ("scheduling", ["shift_roster", "meeting_slot", "maintenance_window"]),
    ("operations", ["deployment_task", "incident_record", "capacity_forecast"]),
];

const DATES: [&str; 8] = [
    "2024-01-05",
    "2024-02-17",
    "2024-03-02",
    "2024-04-22",
    "2024-06-30",
    "2024-07-14",
    "2024-09-09",
    "2024-11-28",
];

const BOUNDS: [i64; 8] = [5, 10, 25, 50, 100, 250, 500, 1000];
const CURRENCIES: [&str; 4] = ["USD", "EUR", "GBP", "JPY"];
const SORT_ORDERS: [&str; 2] = ["asc", "desc"];
const ID_DIGITS: [u32; 8] = [1042, 2208, 3731, 4620, 5114, 6387, 7755, 8096];
const ENTITY_NAMES: [&str; 6] = ["atlas", "northwind", "zephyr", "harbor", "meridian", "quartz"];

const GENERAL_CLAUSE: &str = " Use this variant for routine, general-purpose requests.";
const SPECIALIZED_CLAUSE: &str = " Use this variant for specialized analysis and review contexts.";

/// Extra sentence planted on one datetime member to exercise local overrides.
pub const EPOCH_OVERRIDE_SENTENCE: &str =
    "This tool instead requires epoch milliseconds since 1970-01-01 UTC.";

fn family_param_type(family: FamilyId) -> ParamType {
    match family {
        FamilyId::DatetimeFields => ParamType::String,
        FamilyId::NumericBounds => ParamType::Number,
        FamilyId::BooleanParameters => ParamType::Boolean,
        FamilyId::IdentifierFields => ParamType::String,
        FamilyId::Sorting => ParamType::String,
        FamilyId::CurrencyUnits => ParamType::String,
        FamilyId::Pagination => ParamType::Integer,
    }
}

fn validate_spec(spec: &SynthSpec) -> Result<Vec<FamilyId>, SpecError> {
    if spec.n_tools == 0 {
        return Err(SpecError::new("n_tools must be positive"));
    }
    if spec.examples_per_tool == 0 {
        return Err(SpecError::new("examples_per_tool must be positive"));
    }
    if spec.ambiguity_pairs * 2 > spec.n_tools {
        return Err(SpecError::new(format!(
            "{} ambiguity pairs need {} tools, only {} requested",
            spec.ambiguity_pairs,
            spec.ambiguity_pairs * 2,
            spec.n_tools
        )));
    }
    let mut ids = Vec::new();
    for fam in &spec.slot_families {
        let id = FamilyId::parse(&fam.family_name)
            .ok_or_else(|| SpecError::new(format!("unknown slot family `{}`", fam.family_name)))?;
        if ids.contains(&id) {
            return Err(SpecError::new(format!(
                "slot family `{}` listed twice",
                fam.family_name
            )));
        }
        if !(fam.applies_fraction > 0.0 && fam.applies_fraction <= 1.0) {
            return Err(SpecError::new(format!(
                "family `{}`: applies_fraction {} outside (0, 1]",
                fam.family_name, fam.applies_fraction
            )));
        }
        if fam.member_field_names.is_empty() {
            return Err(SpecError::new(format!(
                "family `{}` has no member field names",
                fam.family_name
            )));
        }
        let ty = family_param_type(id);
        for base in &fam.member_field_names {
            for variant in families::name_variants(base) {
                if families::classify_param(variant, ty) != Some(id) {
                    return Err(SpecError::new(format!(
                        "field `{variant}` (variant of `{base}`) does not classify into family `{id}`"
                    )));
                }
            }
        }
        ids.push(id);
    }
    Ok(ids)
}

fn tool_grid() -> Vec<(String, String, &'static str, &'static str, &'static str)> {
    let mut out = Vec::new();
    for (verb, verb_phrase) in VERBS {
        for (workflow, nouns) in WORKFLOWS {
            for noun in nouns {
                let name = format!("{verb}_{noun}");
                let noun_words = noun.replace('_', " ");
                out.push((name, noun_words, verb, verb_phrase, workflow));
            }
        }
    }
    out
}

fn humanize(name: &str) -> String {
    families::canonicalize_param_name(name).replace('_', " ")
}

fn identifier_prefix(base: &str) -> &'static str {
    let canonical = families::canonicalize_param_name(base);
    match canonical.split('_').next().unwrap_or("") {
        "account" => "ACC",
        "user" => "USR",
        "item" => "ITM",
        "order" => "ORD",
        "ticket" => "TCK",
        "record" => "REC",
        _ => "ID",
    }
}

fn family_value(
    family: FamilyId,
    param_name: &str,
    slot_index: usize,
    rng: &mut ChaCha8Rng,
) -> serde_json::Value {
    match family {
        FamilyId::DatetimeFields => DATES[slot_index % DATES.len()].into(),
        FamilyId::NumericBounds => BOUNDS[slot_index % BOUNDS.len()].into(),
        FamilyId::BooleanParameters => rng.random_bool(0.5).into(),
        FamilyId::IdentifierFields => {
            let digits = ID_DIGITS[rng.random_range(0..ID_DIGITS.len())];
            format!("{}-{digits}", identifier_prefix(param_name)).into()
        }
        FamilyId::Sorting => SORT_ORDERS[rng.random_range(0..SORT_ORDERS.len())].into(),
        FamilyId::CurrencyUnits => CURRENCIES[rng.random_range(0..CURRENCIES.len())].into(),
        FamilyId::Pagination => ((rng.random_range(0..4) + 1) * 10).into(),
    }
}

/// Runs the generator, returning the dataset together with the planted-family
/// ground truth.
pub fn synthesize(spec: &SynthSpec) -> Result<Synthesis, SpecError> {
    let family_ids = validate_spec(spec)?;
    let grid = tool_grid();
    if spec.n_tools > grid.len() {
        return Err(SpecError::new(format!(
            "n_tools {} exceeds the {}-name grid",
            spec.n_tools,
            grid.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut tools: Vec<ToolSchema> = Vec::with_capacity(spec.n_tools);
    // (tool_index, param_name, family) in planting order, for value synthesis.
    let mut family_params: Vec<Vec<(String, FamilyId)>> = vec![Vec::new(); spec.n_tools];
    for (name, noun_words, _verb, verb_phrase, workflow) in grid.iter().take(spec.n_tools) {
        let description = format!(
            "{} {} record for the {} workflow.",
            capitalize(verb_phrase),
            noun_words,
            workflow
        );
        let local_param = format!("{}_name", noun_words.replace(' ', "_"));
        let tool = ToolSchema::new(name.clone(), description)
            .with_param(ParameterSpec::new(
                local_param.clone(),
                format!("Name of the {noun_words} to operate on."),
                ParamType::String,
            ))
            .with_required(&[local_param.as_str()]);
        tools.push(tool);
    }

    let mut ledger = SynthLedger::default();

    for (fam_spec, family) in spec.slot_families.iter().zip(family_ids.iter().copied()) {
        let k = (fam_spec.applies_fraction * spec.n_tools as f64).ceil() as usize;
        let k = k.min(spec.n_tools);
        let mut selected: Vec<usize> = sample(&mut rng, spec.n_tools, k).into_vec();
        selected.sort_unstable();
        let mut planted = PlantedFamily {
            family,
            tools: Vec::new(),
            members: Vec::new(),
            overrides: Vec::new(),
        };
        let ty = family_param_type(family);
        for (rank, &tool_idx) in selected.iter().enumerate() {
            let tool_name = tools[tool_idx].name.clone();
            planted.tools.push(tool_name.clone());
            for base in &fam_spec.member_field_names {
                let variants = families::name_variants(base);
                let variant = variants[tool_idx % variants.len()];
                if tools[tool_idx].param(variant).is_some() {
                    return Err(SpecError::new(format!(
                        "parameter `{variant}` planted twice on tool `{tool_name}`"
                    )));
                }
                let mut description = format!(
                    "The {} for this request. {}",
                    humanize(variant),
                    families::rule_text(family)
                );
                let is_override =
                    family == FamilyId::DatetimeFields && rank == 0 && base == &fam_spec.member_field_names[0];
                if is_override {
                    description.push(' ');
                    description.push_str(EPOCH_OVERRIDE_SENTENCE);
                    planted.overrides.push(PlantedMember {
                        tool: tool_name.clone(),
                        param: variant.to_string(),
                    });
                }
                let mut param = ParameterSpec::new(variant, description, ty);
                if family == FamilyId::Sorting {
                    param.enum_values =
                        Some(SORT_ORDERS.iter().map(|s| s.to_string()).collect());
                }
                tools[tool_idx].parameters.push(param);
                family_params[tool_idx].push((variant.to_string(), family));
                planted.members.push(PlantedMember {
                    tool: tool_name.clone(),
                    param: variant.to_string(),
                });
            }
        }
        ledger.families.push(planted);
    }

    for pair in 0..spec.ambiguity_pairs {
        let a = pair * 2;
        let b = pair * 2 + 1;
        let base = tools[a].description.clone();
        let base = base.trim_end_matches(GENERAL_CLAUSE).to_string();
        tools[a].description = format!("{base}{GENERAL_CLAUSE}");
        tools[b].description = format!("{base}{SPECIALIZED_CLAUSE}");
        ledger.ambiguity_pairs.push(AmbiguityPair {
            general: tools[a].name.clone(),
            specialized: tools[b].name.clone(),
        });
    }

    let mut examples = Vec::new();
    for (tool_idx, tool) in tools.iter().enumerate() {
        let (_, noun_words, _verb, verb_phrase, _workflow) = &grid[tool_idx];
        for j in 0..spec.examples_per_tool {
            let mut call = ToolCall::new(tool.name.clone());
            // Per-family cursor so paired members (start/end, min/max) come
            // out non-decreasing in member order.
            let mut cursors: std::collections::BTreeMap<FamilyId, usize> =
                std::collections::BTreeMap::new();
            for param in &tool.parameters {
                let family = family_params[tool_idx]
                    .iter()
                    .find(|(name, _)| name == &param.name)
                    .map(|(_, f)| *f);
                let value = match family {
                    Some(f @ (FamilyId::DatetimeFields | FamilyId::NumericBounds)) => {
                        let cursor = cursors.entry(f).or_insert_with(|| rng.random_range(0..4));
                        let value = family_value(f, &param.name, *cursor, &mut rng);
                        *cursor += rng.random_range(1..3);
                        value
                    }
                    Some(f) => family_value(f, &param.name, 0, &mut rng),
                    None => {
                        ENTITY_NAMES[rng.random_range(0..ENTITY_NAMES.len())].into()
                    }
                };
                call.arguments.insert(param.name.clone(), value);
            }
            let args: Vec<String> = call
                .arguments
                .iter()
                .map(|(k, v)| match v {
                    serde_json::Value::String(s) => format!("{k}={s}"),
                    other => format!("{k}={other}"),
                })
                .collect();
            let action = format!("{} {} record", verb_phrase, noun_words);
            let args = args.join(", ");
            let query = match j % 4 {
                0 => format!("Please {action} with {args}."),
                1 => format!("I need to {action}. Parameters: {args}."),
                2 => format!("Could you {action}? Use {args}."),
                _ => format!("{} using {args}.", capitalize(&action)),
            };
            let split = match j % 3 {
                0 => Split::Train,
                1 => Split::Val,
                _ => Split::Test,
            };
            examples.push(Example {
                id: format!("{}-{j:03}", tool.name),
                query,
                gold_calls: vec![call],
                split,
            });
        }
    }

    let dataset = Dataset { tools, examples };
    Ok(Synthesis { dataset, ledger })
}

/// Generator entry point when the ground-truth ledger is not needed.
pub fn synthesize_inventory(spec: &SynthSpec) -> Result<Dataset, SpecError> {
    synthesize(spec).map(|s| s.dataset)
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;

    fn demo_spec(n_tools: usize, seed: u64) -> SynthSpec {
        SynthSpec::demo(n_tools, 3, 4, seed)
    }

    #[test]
    fn fraction_rounds_up_to_member_tool_count() {
        let spec = demo_spec(124, 7);
        let synthesis = synthesize(&spec).unwrap();
        let identifier = synthesis
            .ledger
            .families
            .iter()
            .find(|f| f.family == FamilyId::IdentifierFields)
            .unwrap();
        assert_eq!(identifier.tools.len(), 77);
    }

    #[test]
    fn single_tool_without_families() {
        let spec = SynthSpec {
            n_tools: 1,
            slot_families: vec![],
            examples_per_tool: 4,
            ambiguity_pairs: 0,
            seed: 3,
        };
        let ds = synthesize_inventory(&spec).unwrap();
        assert_eq!(ds.tools.len(), 1);
        assert_eq!(ds.examples.len(), 4);
    }

    #[test]
    fn generated_dataset_passes_loader_validation() {
        let spec = demo_spec(24, 11);
        let synthesis = synthesize(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let tools = dir.path().join("tools.json");
        let examples = dir.path().join("examples.jsonl");
        synthesis.dataset.save(&tools, &examples).unwrap();
        let loaded = load_dataset(&tools, &examples).unwrap();
        assert_eq!(loaded, synthesis.dataset);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = demo_spec(30, 99);
        let a = synthesize(&spec).unwrap();
        let b = synthesize(&spec).unwrap();
        assert_eq!(
            serde_json::to_string(&a.dataset).unwrap(),
            serde_json::to_string(&b.dataset).unwrap()
        );
        assert_eq!(a.ledger, b.ledger);
    }

    #[test]
    fn date_values_are_iso_and_bounds_ordered() {
        let spec = demo_spec(40, 5);
        let synthesis = synthesize(&spec).unwrap();
        for example in &synthesis.dataset.examples {
            for call in &example.gold_calls {
                let tool = synthesis.dataset.tool(&call.tool).unwrap();
                let mut dates = Vec::new();
                let mut bounds = Vec::new();
                for (key, value) in &call.arguments {
                    let param = tool.param(key).unwrap();
                    match families::classify_param(key, param.param_type) {
                        Some(FamilyId::DatetimeFields) => {
                            let s = value.as_str().unwrap();
                            assert!(
                                chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d").is_ok(),
                                "non-ISO date {s}"
                            );
                            dates.push(s.to_string());
                        }
                        Some(FamilyId::NumericBounds) => bounds.push(value.as_f64().unwrap()),
                        _ => {}
                    }
                }
                if dates.len() == 2 {
                    assert!(dates[0] <= dates[1], "dates out of order in {}", example.id);
                }
                if bounds.len() == 2 {
                    assert!(bounds[0] <= bounds[1], "bounds out of order in {}", example.id);
                }
            }
        }
    }

    #[test]
    fn ambiguity_pairs_share_a_description_stem() {
        let spec = demo_spec(20, 21);
        let synthesis = synthesize(&spec).unwrap();
        assert_eq!(synthesis.ledger.ambiguity_pairs.len(), 4);
        for pair in &synthesis.ledger.ambiguity_pairs {
            let a = synthesis.dataset.tool(&pair.general).unwrap();
            let b = synthesis.dataset.tool(&pair.specialized).unwrap();
            let stem = a.description.trim_end_matches(GENERAL_CLAUSE);
            assert!(b.description.starts_with(stem));
            assert!(a.description.ends_with(GENERAL_CLAUSE.trim_start()));
            assert!(b.description.ends_with(SPECIALIZED_CLAUSE.trim_start()));
            assert_ne!(a.description, b.description);
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let mut spec = demo_spec(10, 1);
        spec.slot_families[0].applies_fraction = 1.5;
        assert!(synthesize(&spec).is_err());
        let mut spec = demo_spec(10, 1);
        spec.ambiguity_pairs = 6;
        assert!(synthesize(&spec).is_err());
        let mut spec = demo_spec(10, 1);
        spec.n_tools = 0;
        assert!(synthesize(&spec).is_err());
        let mut spec = demo_spec(10, 1);
        spec.slot_families[0].family_name = "mystery".into();
        assert!(synthesize(&spec).is_err());
    }

    #[test]
    fn override_is_recorded_in_ledger() {
        let spec = demo_spec(40, 5);
        let synthesis = synthesize(&spec).unwrap();
        let datetime = synthesis
            .ledger
            .families
            .iter()
            .find(|f| f.family == FamilyId::DatetimeFields)
            .unwrap();
        assert_eq!(datetime.overrides.len(), 1);
        let o = &datetime.overrides[0];
        let tool = synthesis.dataset.tool(&o.tool).unwrap();
        let param = tool.param(&o.param).unwrap();
        assert!(param.description.contains(EPOCH_OVERRIDE_SENTENCE));
        assert!(param
            .description
            .contains(families::rule_text(FamilyId::DatetimeFields)));
    }
}
