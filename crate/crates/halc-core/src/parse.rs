//! Extraction, repair, and validation of JSON from raw LLM text.
//!
//! The endpoint is a black box: responses may wrap the JSON in prose or
//! code fences, use Python-style quoting, truncate the closing brace, or
//! answer boolean fields with "ja"/"nein". The repair sequence here is
//! fixed and ordered so that results stay reproducible:
//!
//! 1. normalize single quotes to double quotes outside string bodies,
//! 2. quote bare object keys,
//! 3. remove trailing commas,
//! 4. close unterminated strings and balance truncated braces/brackets,
//! 5. lowercase bare `true`/`false` tokens,
//! 6. after parsing, map "true"/"false"/"yes"/"no"/"ja"/"nein" strings to
//!    booleans for schema boolean fields only.
//!
//! Anything still unparseable is `unrepairable`; the gateway re-requests
//! instead of guessing.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::prompt::{Aggregation, ResponseSchema};

/// Identifies one logical coding slot.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SlotKey {
    pub variable_id: String,
    pub prompt_id: String,
    pub comment_id: String,
    pub repetition_index: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Validity {
    /// Strict JSON that met the schema as-is.
    Valid,
    /// Met the schema after the documented repair sequence.
    Repaired,
    Invalid,
}

/// One parsed LLM response for (prompt, comment, repetition).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingOutcome {
    pub slot: SlotKey,
    /// Schema boolean fields; populated exactly when valid or repaired.
    pub fields: BTreeMap<String, bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub justification: Option<String>,
    /// 0 or 1 when valid/repaired, `None` (missing) otherwise.
    pub derived_value: Option<u8>,
    pub validity: Validity,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<String>,
}

impl CodingOutcome {
    pub fn is_usable(&self) -> bool {
        matches!(self.validity, Validity::Valid | Validity::Repaired)
    }
}

/// Why a document failed schema validation or parsing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InvalidReason {
    NoJson,
    Unrepairable,
    NotAnObject,
    MissingField(String),
    WrongType(String),
}

impl std::fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InvalidReason::NoJson => write!(f, "no_json"),
            InvalidReason::Unrepairable => write!(f, "unrepairable"),
            InvalidReason::NotAnObject => write!(f, "not_an_object"),
            InvalidReason::MissingField(name) => write!(f, "missing_field:{name}"),
            InvalidReason::WrongType(name) => write!(f, "wrong_type:{name}"),
        }
    }
}

/// Returns the first maximal balanced-brace region of `raw`, after
/// stripping code fences and surrounding prose. A truncated region (opened
/// but never closed) is returned as-is for the repair step. `None` if no
/// opening brace exists.
pub fn extract_json(raw: &str) -> Option<String> {
    let body = strip_code_fence(raw);
    let start = body.find('{')?;
    let tail = &body[start..];

    let mut depth = 0usize;
    let mut in_double = false;
    let mut in_single = false;
    let mut escaped = false;
    for (i, c) in tail.char_indices() {
        if escaped {
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_double || in_single => escaped = true,
            '"' if !in_single => in_double = !in_double,
            '\'' if !in_double => in_single = !in_single,
            '{' if !in_double && !in_single => depth += 1,
            '}' if !in_double && !in_single => {
                depth -= 1;
                if depth == 0 {
                    return Some(tail[..=i].to_string());
                }
            }
            _ => {}
        }
    }
    Some(tail.to_string())
}

fn strip_code_fence(raw: &str) -> &str {
    let Some(open) = raw.find("```") else {
        return raw;
    };
    let after = &raw[open + 3..];
    // Skip a language tag line such as "json".
    let body_start = after.find('\n').map(|i| i + 1).unwrap_or(0);
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => &body[..close],
        None => body,
    }
}

/// Applies the textual repair rules (steps 1-5) to a candidate region.
fn normalize_text(candidate: &str) -> String {
    let quoted = normalize_quotes(candidate);
    let keyed = quote_bare_keys(&quoted);
    let no_trailing = remove_trailing_commas(&keyed);
    let balanced = balance_closers(&no_trailing);
    lowercase_bool_tokens(&balanced)
}

fn normalize_quotes(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_double = false;
    let mut in_single = false;
    let mut escaped = false;
    for c in text.chars() {
        if escaped {
            out.push(c);
            escaped = false;
            continue;
        }
        match c {
            '\\' if in_double || in_single => {
                out.push(c);
                escaped = true;
            }
            '"' if in_single => out.push_str("\\\""),
            '"' => {
                in_double = !in_double;
                out.push('"');
            }
            '\'' if !in_double => {
                in_single = !in_single;
                out.push('"');
            }
            _ => out.push(c),
        }
    }
    out
}

fn quote_bare_keys(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    // A bare key can follow an opening brace or a comma inside an object.
    let mut expect_key = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            i += 1;
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                expect_key = false;
                out.push(c);
                i += 1;
            }
            '{' | ',' => {
                expect_key = true;
                out.push(c);
                i += 1;
            }
            c if c.is_whitespace() => {
                out.push(c);
                i += 1;
            }
            c if expect_key && (c.is_alphabetic() || c == '_') => {
                let start = i;
                while i < chars.len()
                    && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '-')
                {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let mut lookahead = i;
                while lookahead < chars.len() && chars[lookahead].is_whitespace() {
                    lookahead += 1;
                }
                if lookahead < chars.len() && chars[lookahead] == ':' {
                    out.push('"');
                    out.push_str(&word);
                    out.push('"');
                } else {
                    out.push_str(&word);
                }
                expect_key = false;
            }
            _ => {
                expect_key = false;
                out.push(c);
                i += 1;
            }
        }
    }
    out
}

fn remove_trailing_commas(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    for (i, &c) in chars.iter().enumerate() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => {
                in_string = true;
                out.push(c);
            }
            ',' => {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_whitespace() {
                    j += 1;
                }
                if j < chars.len() && (chars[j] == '}' || chars[j] == ']') {
                    continue; // drop it
                }
                out.push(c);
            }
            _ => out.push(c),
        }
    }
    out
}

fn balance_closers(text: &str) -> String {
    let mut stack = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for c in text.chars() {
        if in_string {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => stack.push('}'),
            '[' => stack.push(']'),
            '}' | ']' => {
                if stack.last() == Some(&c) {
                    stack.pop();
                }
            }
            _ => {}
        }
    }
    let mut out = text.trim_end().to_string();
    if in_string {
        out.push('"');
    }
    while let Some(closer) = stack.pop() {
        out.push(closer);
    }
    out
}

fn lowercase_bool_tokens(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            i += 1;
            continue;
        }
        if c == '"' {
            in_string = true;
            out.push(c);
            i += 1;
            continue;
        }
        if c.is_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_alphanumeric() {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            match word.to_ascii_lowercase().as_str() {
                "true" => out.push_str("true"),
                "false" => out.push_str("false"),
                _ => out.push_str(&word),
            }
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

fn coerce_boolean_strings(doc: &mut Value, schema: &ResponseSchema) {
    let Some(map) = doc.as_object_mut() else {
        return;
    };
    for name in schema.boolean_fields() {
        if let Some(value) = map.get_mut(name) {
            if let Some(s) = value.as_str() {
                match s.trim().to_ascii_lowercase().as_str() {
                    "true" | "yes" | "ja" => *value = Value::Bool(true),
                    "false" | "no" | "nein" => *value = Value::Bool(false),
                    _ => {}
                }
            }
        }
    }
}

/// Runs the ordered repair sequence on a candidate region and parses it.
/// Boolean-string coercion applies only to `schema`'s boolean fields so
/// justification text is never touched.
pub fn repair_json(candidate: &str, schema: &ResponseSchema) -> Result<Value, InvalidReason> {
    let normalized = normalize_text(candidate);
    let mut doc: Value =
        serde_json::from_str(&normalized).map_err(|_| InvalidReason::Unrepairable)?;
    coerce_boolean_strings(&mut doc, schema);
    Ok(doc)
}

/// Validated schema fields: the boolean map plus optional justification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidatedFields {
    pub booleans: BTreeMap<String, bool>,
    pub justification: Option<String>,
}

/// Accepts a document iff every schema boolean field is present with a
/// boolean value. Extra fields are ignored; a declared justification field
/// is captured when present but its absence does not invalidate.
pub fn validate_schema(doc: &Value, schema: &ResponseSchema) -> Result<ValidatedFields, InvalidReason> {
    let map = doc.as_object().ok_or(InvalidReason::NotAnObject)?;
    let mut booleans = BTreeMap::new();
    for name in schema.boolean_fields() {
        match map.get(name) {
            None => return Err(InvalidReason::MissingField(name.to_string())),
            Some(Value::Bool(b)) => {
                booleans.insert(name.to_string(), *b);
            }
            Some(_) => return Err(InvalidReason::WrongType(name.to_string())),
        }
    }
    let justification = schema
        .justification_field()
        .and_then(|name| map.get(name))
        .and_then(Value::as_str)
        .map(str::to_string);
    Ok(ValidatedFields {
        booleans,
        justification,
    })
}

/// Folds validated booleans into the binary coding value.
pub fn derive_value(fields: &BTreeMap<String, bool>, aggregation: Aggregation) -> u8 {
    match aggregation {
        Aggregation::AnyTrue => u8::from(fields.values().any(|&b| b)),
        Aggregation::Single => fields.values().next().map(|&b| u8::from(b)).unwrap_or(0),
    }
}

/// Full pipeline for one raw response: extract, try strict parsing, fall
/// back to repair, validate, and derive the binary value.
pub fn parse_outcome(slot: SlotKey, raw: &str, schema: &ResponseSchema) -> CodingOutcome {
    let invalid = |slot: SlotKey, reason: InvalidReason| CodingOutcome {
        slot,
        fields: BTreeMap::new(),
        justification: None,
        derived_value: None,
        validity: Validity::Invalid,
        invalid_reason: Some(reason.to_string()),
    };

    let Some(candidate) = extract_json(raw) else {
        return invalid(slot, InvalidReason::NoJson);
    };

    // Strict route first: untouched JSON that meets the schema is `valid`.
    if let Ok(doc) = serde_json::from_str::<Value>(&candidate) {
        if let Ok(fields) = validate_schema(&doc, schema) {
            let derived = derive_value(&fields.booleans, schema.aggregation);
            return CodingOutcome {
                slot,
                fields: fields.booleans,
                justification: fields.justification,
                derived_value: Some(derived),
                validity: Validity::Valid,
                invalid_reason: None,
            };
        }
    }

    let doc = match repair_json(&candidate, schema) {
        Ok(doc) => doc,
        Err(reason) => return invalid(slot, reason),
    };
    match validate_schema(&doc, schema) {
        Ok(fields) => {
            let derived = derive_value(&fields.booleans, schema.aggregation);
            CodingOutcome {
                slot,
                fields: fields.booleans,
                justification: fields.justification,
                derived_value: Some(derived),
                validity: Validity::Repaired,
                invalid_reason: None,
            }
        }
        Err(reason) => invalid(slot, reason),
    }
}
