//! Prompt assembly: renders concrete prompt text from a plan, a translated
//! codebook, and a comment, and derives the machine-readable answer schema.
//!
//! Fragment order is fixed: preamble axes (role, context, task), the
//! coding-strategy lead-in, the category description, reasoning axes
//! (zero-shot phrase, chain-of-thought steps), the answer instruction, the
//! justification instruction, the output-format instruction, and finally the
//! comment announcement. Variants with code 0 contribute nothing.
//!
//! Two fragment families are selected by the assembler rather than carried
//! on an axis variant, because they depend on the coding-strategy and
//! coding-elements choices jointly: `category.cs{c}.ce{e}` (the translated
//! category description) and `answer.ce{e}` (the answer instruction). The
//! comment announcement uses the fixed key `announce`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::strategy::{ExperimentDesign, FragmentSlot, PromptPlan};

/// A coding category: translated description fragments plus the answer
/// field layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableSpec {
    #[serde(default)]
    pub variable_id: String,
    /// What code 1 means for this variable.
    pub positive_label: String,
    /// fragment_key -> fragment text.
    pub fragments: BTreeMap<String, String>,
    /// Answer field names when build-up elements are coded individually.
    #[serde(default)]
    pub indicator_fields: Vec<String>,
    /// Answer field name when no build-up elements are used.
    pub single_field_name: String,
    pub justification_field_name: String,
}

/// A translated codebook: one [`VariableSpec`] per coding category,
/// loaded from a TOML document versioned alongside the manifest.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub variables: BTreeMap<String, VariableSpec>,
}

impl Codebook {
    pub fn from_toml(text: &str) -> Result<Self, CodebookError> {
        let mut book: Codebook = toml::from_str(text)?;
        for (key, var) in book.variables.iter_mut() {
            if var.variable_id.is_empty() {
                var.variable_id = key.clone();
            } else if &var.variable_id != key {
                return Err(CodebookError::IdMismatch {
                    key: key.clone(),
                    variable_id: var.variable_id.clone(),
                });
            }
        }
        Ok(book)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CodebookError> {
        let text = std::fs::read_to_string(path).map_err(|source| CodebookError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn variable(&self, variable_id: &str) -> Option<&VariableSpec> {
        self.variables.get(variable_id)
    }
}

#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("cannot read codebook {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("codebook is not valid TOML: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("codebook key {key} disagrees with variable_id {variable_id}")]
    IdMismatch { key: String, variable_id: String },
}

impl VariableSpec {
    fn fragment(&self, key: &str) -> Result<&str, AssembleError> {
        self.fragments
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| AssembleError::MissingFragment {
                variable_id: self.variable_id.clone(),
                fragment_key: key.to_string(),
            })
    }
}

/// One unit of content to be coded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommentRecord {
    pub comment_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub source_meta: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Text,
    Boolean,
}

/// How per-field booleans fold into the binary coding value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// 1 iff at least one boolean field is true.
    AnyTrue,
    /// The sole boolean field, as 0/1.
    Single,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    pub kind: FieldKind,
}

/// Expected answer layout for one (plan, variable) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseSchema {
    /// Ordered; a justification text field, when present, precedes all
    /// boolean fields.
    pub fields: Vec<SchemaField>,
    pub aggregation: Aggregation,
}

impl ResponseSchema {
    pub fn boolean_fields(&self) -> impl Iterator<Item = &str> {
        self.fields
            .iter()
            .filter(|f| f.kind == FieldKind::Boolean)
            .map(|f| f.name.as_str())
    }

    pub fn justification_field(&self) -> Option<&str> {
        self.fields
            .iter()
            .find(|f| f.kind == FieldKind::Text)
            .map(|f| f.name.as_str())
    }

    /// The json answer pattern as announced in the prompt, e.g.
    /// `{'reason': string, 'climate_change': boolean}`.
    pub fn pattern_text(&self) -> String {
        let parts: Vec<String> = self
            .fields
            .iter()
            .map(|f| {
                let kind = match f.kind {
                    FieldKind::Text => "string",
                    FieldKind::Boolean => "boolean",
                };
                format!("'{}': {}", f.name, kind)
            })
            .collect();
        format!("{{{}}}", parts.join(", "))
    }
}

#[derive(Debug, Error)]
pub enum AssembleError {
    #[error("variable {variable_id}: fragment {fragment_key:?} is not in the codebook")]
    MissingFragment {
        variable_id: String,
        fragment_key: String,
    },
    #[error("variable {variable_id} declares no indicator fields but the plan codes build-up elements")]
    NoIndicatorFields { variable_id: String },
    #[error("plan has no choice for axis {axis_id}")]
    MissingChoice { axis_id: String },
    #[error("axis binding {binding} refers to unknown axis {axis_id}")]
    UnknownBoundAxis { binding: String, axis_id: String },
}

fn choice(plan: &PromptPlan, axis_id: &str) -> Result<u8, AssembleError> {
    plan.choice(axis_id).ok_or_else(|| AssembleError::MissingChoice {
        axis_id: axis_id.to_string(),
    })
}

/// Derives the expected answer schema for a plan.
///
/// Coding elements 1 yields one boolean per indicator field aggregated
/// any-true; 0 yields the single boolean field. A justification variant
/// above 0 prepends the variable's justification text field.
pub fn derive_schema(
    design: &ExperimentDesign,
    plan: &PromptPlan,
    variable: &VariableSpec,
) -> Result<ResponseSchema, AssembleError> {
    let ce = choice(plan, &design.bindings.coding_elements)?;
    let j = choice(plan, &design.bindings.justification)?;

    let mut fields = Vec::new();
    if j >= 1 {
        fields.push(SchemaField {
            name: variable.justification_field_name.clone(),
            kind: FieldKind::Text,
        });
    }
    let aggregation = if ce >= 1 {
        if variable.indicator_fields.is_empty() {
            return Err(AssembleError::NoIndicatorFields {
                variable_id: variable.variable_id.clone(),
            });
        }
        for name in &variable.indicator_fields {
            fields.push(SchemaField {
                name: name.clone(),
                kind: FieldKind::Boolean,
            });
        }
        Aggregation::AnyTrue
    } else {
        fields.push(SchemaField {
            name: variable.single_field_name.clone(),
            kind: FieldKind::Boolean,
        });
        Aggregation::Single
    };
    Ok(ResponseSchema { fields, aggregation })
}

/// Renders the instruction part of a prompt: everything up to and including
/// the comment announcement, without the comment itself.
///
/// Pure: identical inputs yield byte-identical text.
pub fn render_instructions(
    design: &ExperimentDesign,
    plan: &PromptPlan,
    variable: &VariableSpec,
) -> Result<String, AssembleError> {
    let cs_axis = &design.bindings.coding_strategy;
    let ce_axis = &design.bindings.coding_elements;
    let cs = choice(plan, cs_axis)?;
    let ce = choice(plan, ce_axis)?;

    let mut parts: Vec<&str> = Vec::new();
    let mut push_slot_fragments =
        |slot: FragmentSlot, parts: &mut Vec<&str>| -> Result<(), AssembleError> {
            for axis in design.axes.iter().filter(|a| a.slot == Some(slot)) {
                let code = choice(plan, &axis.axis_id)?;
                if let Some(variant) = axis.variant(code) {
                    if let Some(key) = &variant.fragment_key {
                        parts.push(variable.fragment(key)?);
                    }
                }
            }
            Ok(())
        };

    push_slot_fragments(FragmentSlot::Preamble, &mut parts)?;

    // Coding-strategy lead-in, carried on the chosen variant.
    let cs_variant = design
        .axes
        .iter()
        .find(|a| &a.axis_id == cs_axis)
        .ok_or_else(|| AssembleError::UnknownBoundAxis {
            binding: "coding_strategy".into(),
            axis_id: cs_axis.clone(),
        })?
        .variant(cs);
    if let Some(key) = cs_variant.and_then(|v| v.fragment_key.as_ref()) {
        parts.push(variable.fragment(key)?);
    }

    let category_key = format!("category.cs{cs}.ce{ce}");
    parts.push(variable.fragment(&category_key)?);

    push_slot_fragments(FragmentSlot::Reasoning, &mut parts)?;

    let answer_key = format!("answer.ce{ce}");
    parts.push(variable.fragment(&answer_key)?);

    push_slot_fragments(FragmentSlot::PostAnswer, &mut parts)?;

    let schema = derive_schema(design, plan, variable)?;
    let format_instruction = format!(
        "Answer using the following pattern in json format: {}.",
        schema.pattern_text()
    );
    let announce = variable.fragment("announce")?;

    let mut out = parts.join(" ");
    if !out.is_empty() {
        out.push(' ');
    }
    out.push_str(&format_instruction);
    out.push(' ');
    out.push_str(announce);
    Ok(out)
}

/// Renders the full prompt for one comment: instructions, a line break,
/// then the comment text verbatim.
pub fn render_prompt(
    design: &ExperimentDesign,
    plan: &PromptPlan,
    variable: &VariableSpec,
    comment: &CommentRecord,
) -> Result<String, AssembleError> {
    let mut text = render_instructions(design, plan, variable)?;
    text.push('\n');
    text.push_str(&comment.text);
    Ok(text)
}

/// The six codebook-translation rules the checklist walks through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChecklistRule {
    Completeness,
    Conciseness,
    Comprehensibility,
    Clarity,
    Explicitness,
    Structure,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistFlag {
    pub rule: ChecklistRule,
    pub detail: String,
}

/// Advisory report for a human translator. Never rewrites text.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistReport {
    pub flags: Vec<ChecklistFlag>,
}

impl ChecklistReport {
    pub fn is_clean(&self) -> bool {
        self.flags.is_empty()
    }
}

const FILLER_WORDS: &[&str] = &["simply", "basically", "really", "very", "generally"];
const AMBIGUITY_MARKERS: &[&str] = &["etc", "maybe", "possibly", "perhaps", "somehow", "might", "usw"];
const NEGATION_WORDS: &[&str] = &[
    "kein", "keine", "keinen", "nicht", "never", "cannot", "can't", "don't", "doesn't", "isn't",
    "aren't",
];
const MAX_SENTENCE_WORDS: usize = 35;

fn words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

/// Walks a category text through the six translation rules and reports
/// advisory flags: negations ("avoid negations"), missing example lists,
/// overlong sentences, filler words, ambiguity markers, and broken
/// enumeration order.
///
/// "not" directly followed by a gerund ("not flying") names an affirmative
/// example action and is not flagged.
pub fn codebook_translation_checklist(category_text: &str) -> ChecklistReport {
    let mut flags = Vec::new();
    let tokens = words(category_text);

    // Completeness: the text must identify components the coder can follow.
    let has_enumeration = tokens.iter().any(|w| w.chars().all(|c| c.is_ascii_digit()))
        || category_text.contains("1)")
        || category_text.contains("- ");
    if !has_enumeration {
        flags.push(ChecklistFlag {
            rule: ChecklistRule::Completeness,
            detail: "no enumerated definition components found".into(),
        });
    }

    // Conciseness: filler words.
    for filler in FILLER_WORDS {
        if tokens.iter().any(|w| w == filler) {
            flags.push(ChecklistFlag {
                rule: ChecklistRule::Conciseness,
                detail: format!("filler word {filler:?}"),
            });
        }
    }

    // Comprehensibility: negations and overlong sentences.
    for neg in NEGATION_WORDS {
        if tokens.iter().any(|w| w == neg) {
            flags.push(ChecklistFlag {
                rule: ChecklistRule::Comprehensibility,
                detail: format!("negation {neg:?}"),
            });
        }
    }
    for pair in tokens.windows(2) {
        if pair[0] == "not" && !pair[1].ends_with("ing") {
            flags.push(ChecklistFlag {
                rule: ChecklistRule::Comprehensibility,
                detail: format!("negation \"not {}\"", pair[1]),
            });
        }
    }
    if tokens.last().map(|w| w.as_str()) == Some("not") {
        flags.push(ChecklistFlag {
            rule: ChecklistRule::Comprehensibility,
            detail: "negation \"not\"".into(),
        });
    }
    for sentence in category_text.split(". ") {
        let n = sentence.split_whitespace().count();
        if n > MAX_SENTENCE_WORDS {
            flags.push(ChecklistFlag {
                rule: ChecklistRule::Comprehensibility,
                detail: format!("sentence with {n} words exceeds {MAX_SENTENCE_WORDS}"),
            });
        }
    }

    // Clarity: indicators or examples must be present.
    let has_examples = category_text.contains("(e.g.")
        || category_text.contains("(z.B.")
        || category_text.contains("(z. B.");
    if !has_examples {
        flags.push(ChecklistFlag {
            rule: ChecklistRule::Clarity,
            detail: "no parenthesized example or indicator list".into(),
        });
    }

    // Explicitness: ambiguity markers.
    for marker in AMBIGUITY_MARKERS {
        if tokens.iter().any(|w| w == marker) {
            flags.push(ChecklistFlag {
                rule: ChecklistRule::Explicitness,
                detail: format!("ambiguous expression {marker:?}"),
            });
        }
    }

    // Structure: enumeration numbers must run 1..n.
    let mut numbers = Vec::new();
    let mut rest = category_text;
    while let Some(pos) = rest.find(')') {
        let head = &rest[..pos];
        let digits: String = head
            .chars()
            .rev()
            .take_while(|c| c.is_ascii_digit())
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        if !digits.is_empty() {
            // Only count list markers at a word start, not "(1970)".
            let before = head.len() - digits.len();
            let prev = head[..before].chars().next_back();
            if prev.is_none() || prev == Some(' ') {
                if let Ok(n) = digits.parse::<usize>() {
                    numbers.push(n);
                }
            }
        }
        rest = &rest[pos + 1..];
    }
    if !numbers.is_empty() && numbers != (1..=numbers.len()).collect::<Vec<_>>() {
        flags.push(ChecklistFlag {
            rule: ChecklistRule::Structure,
            detail: format!("enumeration numbers {numbers:?} do not run 1..{}", numbers.len()),
        });
    }

    ChecklistReport { flags }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{climate_variable, paper_design, plan_from};

    #[test]
    fn schema_for_build_up_elements_with_detailed_justification() {
        let design = paper_design();
        let variable = climate_variable();
        let plan = plan_from(&design, "v_climate", &[2, 0, 0, 2, 1, 0, 1, 2]);
        let schema = derive_schema(&design, &plan, &variable).unwrap();
        let names: Vec<&str> = schema.fields.iter().map(|f| f.name.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "reason",
                "explanation_climate_change",
                "causes_climate_change",
                "signs_climate_change",
                "measures_climate_change",
                "evaluation_climate_change",
            ]
        );
        assert_eq!(schema.aggregation, Aggregation::AnyTrue);
        assert_eq!(schema.boolean_fields().count(), 5);
    }

    #[test]
    fn schema_for_single_field_with_normal_justification() {
        let design = paper_design();
        let variable = climate_variable();
        let plan = plan_from(&design, "v_climate", &[2, 1, 1, 1, 0, 2, 1, 1]);
        let schema = derive_schema(&design, &plan, &variable).unwrap();
        assert_eq!(
            schema.pattern_text(),
            "{'reason': string, 'climate_change': boolean}"
        );
        assert_eq!(schema.aggregation, Aggregation::Single);
    }

    #[test]
    fn schema_without_justification_or_elements_is_single_boolean() {
        let design = paper_design();
        let variable = climate_variable();
        let plan = plan_from(&design, "v_climate", &[0, 0, 0, 1, 0, 0, 0, 0]);
        let schema = derive_schema(&design, &plan, &variable).unwrap();
        assert_eq!(schema.fields.len(), 1);
        assert_eq!(schema.justification_field(), None);
        assert_eq!(schema.pattern_text(), "{'climate_change': boolean}");
    }

    #[test]
    fn justification_field_precedes_all_booleans() {
        let design = paper_design();
        let variable = climate_variable();
        for codes in [[1, 0, 0, 1, 1, 0, 0, 1], [2, 1, 1, 2, 1, 2, 1, 2]] {
            let plan = plan_from(&design, "v_climate", &codes);
            let schema = derive_schema(&design, &plan, &variable).unwrap();
            assert_eq!(schema.fields[0].kind, FieldKind::Text);
            assert!(schema.fields[1..].iter().all(|f| f.kind == FieldKind::Boolean));
        }
    }

    #[test]
    fn build_up_elements_without_indicator_fields_is_config_error() {
        let design = paper_design();
        let mut variable = climate_variable();
        variable.indicator_fields.clear();
        let plan = plan_from(&design, "v_climate", &[0, 0, 0, 1, 1, 0, 0, 0]);
        assert!(matches!(
            derive_schema(&design, &plan, &variable),
            Err(AssembleError::NoIndicatorFields { .. })
        ));
    }

    #[test]
    fn missing_fragment_error_names_the_key() {
        let design = paper_design();
        let mut variable = climate_variable();
        variable.fragments.remove("cot.1");
        let plan = plan_from(&design, "v_climate", &[2, 1, 1, 1, 0, 2, 1, 1]);
        match render_instructions(&design, &plan, &variable) {
            Err(AssembleError::MissingFragment { fragment_key, .. }) => {
                assert_eq!(fragment_key, "cot.1")
            }
            other => panic!("expected missing fragment, got {other:?}"),
        }
    }

    #[test]
    fn all_zero_capable_plan_renders_only_mandatory_sections() {
        let design = paper_design();
        let variable = climate_variable();
        let plan = plan_from(&design, "v_climate", &[0, 0, 0, 1, 0, 0, 0, 0]);
        let text = render_instructions(&design, &plan, &variable).unwrap();
        let expected = format!(
            "{} {} {} {} {}",
            variable.fragments["cs.1.lead_in"],
            variable.fragments["category.cs1.ce0"],
            variable.fragments["answer.ce0"],
            "Answer using the following pattern in json format: {'climate_change': boolean}.",
            variable.fragments["announce"],
        );
        assert_eq!(text, expected);
    }

    #[test]
    fn optional_axis_contributes_exactly_its_fragment() {
        let design = paper_design();
        let variable = climate_variable();
        // Pure-fragment axes: everything except coding strategy / elements /
        // justification (which also reshape the answer pattern).
        let base = [0u8, 0, 0, 1, 0, 0, 0, 0];
        let cases: &[(usize, u8, &str)] = &[
            (0, 2, "role.2"),
            (1, 1, "context.1"),
            (2, 1, "task.1"),
            (5, 2, "zsct.2"),
            (6, 1, "cot.1"),
        ];
        let plain = render_instructions(
            &design,
            &plan_from(&design, "v_climate", &base),
            &variable,
        )
        .unwrap();
        for &(pos, code, key) in cases {
            let mut codes = base;
            codes[pos] = code;
            let with = render_instructions(
                &design,
                &plan_from(&design, "v_climate", &codes),
                &variable,
            )
            .unwrap();
            let fragment = &variable.fragments[key];
            let reassembled = with.replacen(&format!("{fragment} "), "", 1);
            assert_eq!(reassembled, plain, "axis at position {pos} is not a pure insertion");
        }
    }

    #[test]
    fn render_prompt_appends_comment_after_line_break() {
        let design = paper_design();
        let variable = climate_variable();
        let plan = plan_from(&design, "v_climate", &[2, 1, 1, 1, 0, 2, 1, 1]);
        let comment = CommentRecord {
            comment_id: "c1".into(),
            text: "Die Dürren häufen sich — Überschwemmungen auch.".into(),
            source_meta: BTreeMap::new(),
        };
        let text = render_prompt(&design, &plan, &variable, &comment).unwrap();
        assert!(text.ends_with("\nDie Dürren häufen sich — Überschwemmungen auch."));
        let instructions = render_instructions(&design, &plan, &variable).unwrap();
        assert_eq!(text, format!("{instructions}\n{}", comment.text));
    }

    #[test]
    fn render_is_deterministic() {
        let design = paper_design();
        let variable = climate_variable();
        let plan = plan_from(&design, "v_climate", &[1, 1, 0, 2, 1, 1, 1, 1]);
        let a = render_instructions(&design, &plan, &variable).unwrap();
        let b = render_instructions(&design, &plan, &variable).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checklist_flags_negations() {
        let report = codebook_translation_checklist("Code 1 if the topic is not mentioned.");
        assert!(report
            .flags
            .iter()
            .any(|f| f.rule == ChecklistRule::Comprehensibility));
        let report = codebook_translation_checklist("1) Kein Bezug zum Klima (e.g., nichts).");
        assert!(report
            .flags
            .iter()
            .any(|f| f.rule == ChecklistRule::Comprehensibility));
    }

    #[test]
    fn checklist_flags_missing_example_list() {
        let report = codebook_translation_checklist("1) Mentions of climate change.");
        assert!(report.flags.iter().any(|f| f.rule == ChecklistRule::Clarity));
    }

    #[test]
    fn checklist_accepts_translated_climate_category() {
        let variable = climate_variable();
        let report = codebook_translation_checklist(&variable.fragments["category.cs1.ce0"]);
        assert!(report.is_clean(), "unexpected flags: {:?}", report.flags);
    }

    #[test]
    fn checklist_allows_not_before_gerund() {
        let report =
            codebook_translation_checklist("1) Actions (e.g., not eating meat, not flying).");
        assert!(
            !report
                .flags
                .iter()
                .any(|f| f.rule == ChecklistRule::Comprehensibility),
            "gerund examples must not count as negations"
        );
    }

    #[test]
    fn checklist_flags_broken_enumeration() {
        let report = codebook_translation_checklist("1) First (e.g., a). 3) Third (e.g., b).");
        assert!(report.flags.iter().any(|f| f.rule == ChecklistRule::Structure));
    }
}
