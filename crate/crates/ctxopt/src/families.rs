//! Shared vocabulary for recurring cross-tool slot conventions: family
//! identifiers, the parameter-name synonym table, naming variants used by the
//! synthetic generator, canonical rule texts, and per-family cue words.
//!
//! Detection is name-driven: parameter names are canonicalized (lowercased,
//! camel-case and underscore boundaries split) and looked up in a fixed
//! synonym table, with `_id`/`_date`/`_time` suffix cues as a fallback.
//! Boolean-typed parameters not matched by name fall into
//! `boolean_parameters`.

use serde::{Deserialize, Serialize};

use crate::schema::ParamType;

/// The slot families recognized across tool inventories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyId {
    DatetimeFields,
    NumericBounds,
    BooleanParameters,
    IdentifierFields,
    Sorting,
    CurrencyUnits,
    Pagination,
}

impl FamilyId {
    pub const ALL: [FamilyId; 7] = [
        FamilyId::DatetimeFields,
        FamilyId::NumericBounds,
        FamilyId::BooleanParameters,
        FamilyId::IdentifierFields,
        FamilyId::Sorting,
        FamilyId::CurrencyUnits,
        FamilyId::Pagination,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyId::DatetimeFields => "datetime_fields",
            FamilyId::NumericBounds => "numeric_bounds",
            FamilyId::BooleanParameters => "boolean_parameters",
            FamilyId::IdentifierFields => "identifier_fields",
            FamilyId::Sorting => "sorting",
            FamilyId::CurrencyUnits => "currency_units",
            FamilyId::Pagination => "pagination",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl std::fmt::Display for FamilyId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The single canonical rule sentence lifted into the global layer when a
/// family is globalized. Generator-planted duplicate descriptions reuse these
/// sentences verbatim so that deduplication has something to find.
pub fn rule_text(family: FamilyId) -> &'static str {
    match family {
        FamilyId::DatetimeFields => {
            "Date and time values use ISO-8601 format, e.g. 2024-01-05 for calendar dates."
        }
        FamilyId::NumericBounds => {
            "Numeric range fields come in minimum/maximum pairs where the minimum never exceeds the maximum."
        }
        FamilyId::BooleanParameters => {
            "Boolean flags take the JSON literals true or false, never quoted strings or yes/no variants."
        }
        FamilyId::IdentifierFields => {
            "Identifier fields take the exact identifier string from the request, preserving case, with no surrounding whitespace."
        }
        FamilyId::Sorting => {
            "Sorting fields accept asc for ascending order and desc for descending order."
        }
        FamilyId::CurrencyUnits => {
            "Currency fields take uppercase ISO-4217 codes such as USD or EUR."
        }
        FamilyId::Pagination => {
            "Pagination fields are positive integers counted from page 1."
        }
    }
}

/// Topic words that mark a sentence as family-related. Used to decide which
/// retained sentences constitute a local override of the global rule.
pub fn cue_words(family: FamilyId) -> &'static [&'static str] {
    match family {
        FamilyId::DatetimeFields => &[
            "date", "dates", "time", "times", "iso", "8601", "epoch", "timestamp", "timestamps",
            "milliseconds", "seconds", "utc", "calendar",
        ],
        FamilyId::NumericBounds => &[
            "bound", "bounds", "minimum", "maximum", "range", "inclusive", "exclusive", "limit",
        ],
        FamilyId::BooleanParameters => &["boolean", "true", "false", "flag", "flags"],
        FamilyId::IdentifierFields => &["identifier", "identifiers", "id", "ids", "code", "uuid"],
        FamilyId::Sorting => &[
            "sort", "sorted", "sorting", "order", "ordering", "ascending", "descending", "asc",
            "desc",
        ],
        FamilyId::CurrencyUnits => &["currency", "currencies", "usd", "eur", "unit", "units", "4217"],
        FamilyId::Pagination => &["page", "pages", "pagination", "offset", "cursor"],
    }
}

const SYNONYMS: &[(&str, FamilyId)] = &[
    ("start_date", FamilyId::DatetimeFields),
    ("end_date", FamilyId::DatetimeFields),
    ("from_date", FamilyId::DatetimeFields),
    ("to_date", FamilyId::DatetimeFields),
    ("date", FamilyId::DatetimeFields),
    ("due_date", FamilyId::DatetimeFields),
    ("as_of_date", FamilyId::DatetimeFields),
    ("start_time", FamilyId::DatetimeFields),
    ("end_time", FamilyId::DatetimeFields),
    ("timestamp", FamilyId::DatetimeFields),
    ("range_minimum", FamilyId::NumericBounds),
    ("range_maximum", FamilyId::NumericBounds),
    ("min_value", FamilyId::NumericBounds),
    ("max_value", FamilyId::NumericBounds),
    ("minimum", FamilyId::NumericBounds),
    ("maximum", FamilyId::NumericBounds),
    ("lower_bound", FamilyId::NumericBounds),
    ("upper_bound", FamilyId::NumericBounds),
    ("min_amount", FamilyId::NumericBounds),
    ("max_amount", FamilyId::NumericBounds),
    ("id", FamilyId::IdentifierFields),
    ("identifier", FamilyId::IdentifierFields),
    ("sort_by", FamilyId::Sorting),
    ("sort_order", FamilyId::Sorting),
    ("order_by", FamilyId::Sorting),
    ("sort_direction", FamilyId::Sorting),
    ("currency", FamilyId::CurrencyUnits),
    ("currency_code", FamilyId::CurrencyUnits),
    ("amount_unit", FamilyId::CurrencyUnits),
    ("price_currency", FamilyId::CurrencyUnits),
    ("unit", FamilyId::CurrencyUnits),
    ("page", FamilyId::Pagination),
    ("page_size", FamilyId::Pagination),
    ("page_number", FamilyId::Pagination),
    ("offset", FamilyId::Pagination),
    ("limit", FamilyId::Pagination),
    ("cursor", FamilyId::Pagination),
];

/// Naming variants the generator may use when planting a family member. The
/// first entry is the base spelling.
pub fn name_variants(base: &str) -> &'static [&'static str] {
    match base {
        "start_date" => &["start_date", "startDate", "from_date"],
        "end_date" => &["end_date", "endDate", "to_date"],
        "due_date" => &["due_date", "dueDate"],
        "range_minimum" => &["range_minimum", "rangeMinimum", "min_value"],
        "range_maximum" => &["range_maximum", "rangeMaximum", "max_value"],
        "range_minimum_inclusive" => &["range_minimum_inclusive", "rangeMinimumInclusive"],
        "range_maximum_inclusive" => &["range_maximum_inclusive", "rangeMaximumInclusive"],
        "account_id" => &["account_id", "accountId"],
        "user_id" => &["user_id", "userId"],
        "item_id" => &["item_id", "itemId"],
        "order_id" => &["order_id", "orderId"],
        "ticket_id" => &["ticket_id", "ticketId"],
        "record_id" => &["record_id", "recordId"],
        "sort_by" => &["sort_by", "sortBy", "order_by"],
        "sort_order" => &["sort_order", "sortOrder"],
        "currency" => &["currency", "currency_code", "currencyCode"],
        "page_size" => &["page_size", "pageSize", "limit"],
        "page_number" => &["page_number", "pageNumber", "page"],
        "include_archived" => &["include_archived", "includeArchived"],
        _ => std::slice::from_ref(leak_free_base(base)),
    }
}

// Single-variant fallback for base names outside the fixed table. The table
// above covers everything the bundled specs use; this keeps custom spec files
// working without panicking.
fn leak_free_base(base: &str) -> &'static &'static str {
    use std::collections::BTreeMap;
    use std::sync::Mutex;
    use std::sync::OnceLock;
    static INTERNED: OnceLock<Mutex<BTreeMap<String, &'static &'static str>>> = OnceLock::new();
    let map = INTERNED.get_or_init(|| Mutex::new(BTreeMap::new()));
    let mut guard = map.lock().expect("intern table poisoned");
    if let Some(existing) = guard.get(base) {
        return existing;
    }
    let leaked: &'static str = Box::leak(base.to_string().into_boxed_str());
    let slot: &'static &'static str = Box::leak(Box::new(leaked));
    guard.insert(base.to_string(), slot);
    slot
}

/// Lowercases a parameter name and splits camel-case and underscore
/// boundaries into `_`-joined tokens: `rangeMinimumInclusive` becomes
/// `range_minimum_inclusive`.
pub fn canonicalize_param_name(name: &str) -> String {
    let mut tokens: Vec<String> = Vec::new();
    let mut current = String::new();
    let mut prev_lower = false;
    for c in name.chars() {
        if c == '_' || c == '-' || c == ' ' {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            prev_lower = false;
            continue;
        }
        if c.is_uppercase() && prev_lower {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        }
        prev_lower = c.is_lowercase() || c.is_ascii_digit();
        current.extend(c.to_lowercase());
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens.join("_")
}

/// Assigns a parameter to a slot family, or `None` when it is tool-local.
/// Name matches win over the boolean type cue.
pub fn classify_param(name: &str, param_type: ParamType) -> Option<FamilyId> {
    let canonical = canonicalize_param_name(name);
    if let Some((_, family)) = SYNONYMS.iter().find(|(n, _)| *n == canonical) {
        return Some(*family);
    }
    if canonical.ends_with("_id") {
        return Some(FamilyId::IdentifierFields);
    }
    if canonical.ends_with("_date") || canonical.ends_with("_time") {
        return Some(FamilyId::DatetimeFields);
    }
    if param_type == ParamType::Boolean {
        return Some(FamilyId::BooleanParameters);
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonicalization_splits_camel_case() {
        assert_eq!(canonicalize_param_name("startDate"), "start_date");
        assert_eq!(
            canonicalize_param_name("rangeMinimumInclusive"),
            "range_minimum_inclusive"
        );
        assert_eq!(canonicalize_param_name("user_id"), "user_id");
        assert_eq!(canonicalize_param_name("HTMLBody"), "htmlbody");
    }

    #[test]
    fn name_variants_share_a_family() {
        for base in ["start_date", "range_minimum", "sort_by", "currency", "account_id"] {
            let expected = classify_param(base, ParamType::String).unwrap();
            for variant in name_variants(base) {
                assert_eq!(
                    classify_param(variant, ParamType::String),
                    Some(expected),
                    "variant {variant} of {base}"
                );
            }
        }
    }

    #[test]
    fn boolean_type_cue_applies_when_name_does_not_match() {
        assert_eq!(
            classify_param("dry_run", ParamType::Boolean),
            Some(FamilyId::BooleanParameters)
        );
        assert_eq!(classify_param("dry_run", ParamType::String), None);
        // Name match beats the type cue.
        assert_eq!(
            classify_param("start_date", ParamType::Boolean),
            Some(FamilyId::DatetimeFields)
        );
    }

    #[test]
    fn id_suffix_cue_matches_unlisted_identifiers() {
        assert_eq!(
            classify_param("invoiceId", ParamType::String),
            Some(FamilyId::IdentifierFields)
        );
    }
}
