//! Prompting-strategy axes and enumeration of valid prompt permutations.
//!
//! An experiment declares a list of [`StrategyAxis`] values (role prompting,
//! coding strategy, justification, ...), each with a small set of coded
//! variants. A [`PromptPlan`] picks one variant per axis for one variable;
//! the full grid is the Cartesian product of all axes, filtered by the
//! variable's [`PairConstraint`]s. Axes and constraints are experiment
//! configuration, not code, so new strategies can be added without touching
//! the enumerator.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One selectable variant of a strategy axis.
///
/// `fragment_key` points into the variable's fragment store and is `None`
/// for variants that emit no text (code 0 always means "omit").
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisVariant {
    pub code: u8,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragment_key: Option<String>,
}

/// Where an axis's fragment lands in the assembled prompt.
///
/// Axes whose variants inject a plain text fragment declare a slot; axes
/// that reshape the prompt structurally (coding strategy, coding elements)
/// leave it unset and are named in [`AxisBindings`] instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FragmentSlot {
    /// Before the coding-strategy lead-in (role, context, task).
    Preamble,
    /// After the category description (zero-shot phrase, chain-of-thought).
    Reasoning,
    /// After the answer instruction (justification).
    PostAnswer,
}

/// A prompting-strategy axis with its ordered variants.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyAxis {
    pub axis_id: String,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<FragmentSlot>,
    pub variants: Vec<AxisVariant>,
}

impl StrategyAxis {
    /// Smallest declared variant code (0 or 1).
    pub fn min_code(&self) -> u8 {
        self.variants.iter().map(|v| v.code).min().unwrap_or(0)
    }

    pub fn variant(&self, code: u8) -> Option<&AxisVariant> {
        self.variants.iter().find(|v| v.code == code)
    }

    pub fn has_code(&self, code: u8) -> bool {
        self.variant(code).is_some()
    }

    /// Checks the axis invariants: at least one variant, codes consecutive
    /// from the minimum (which must be 0 or 1), and unique.
    pub fn check(&self) -> Result<(), StrategyError> {
        if self.variants.is_empty() {
            return Err(StrategyError::EmptyAxis {
                axis_id: self.axis_id.clone(),
            });
        }
        let mut codes: Vec<u8> = self.variants.iter().map(|v| v.code).collect();
        codes.sort_unstable();
        let min = codes[0];
        if min > 1 {
            return Err(StrategyError::BadVariantCodes {
                axis_id: self.axis_id.clone(),
                detail: format!("minimum code is {min}, expected 0 or 1"),
            });
        }
        for (i, pair) in codes.windows(2).enumerate() {
            if pair[1] == pair[0] {
                return Err(StrategyError::BadVariantCodes {
                    axis_id: self.axis_id.clone(),
                    detail: format!("duplicate code {}", pair[0]),
                });
            }
            if pair[1] != pair[0] + 1 {
                return Err(StrategyError::BadVariantCodes {
                    axis_id: self.axis_id.clone(),
                    detail: format!(
                        "codes not consecutive: {} follows {} (position {})",
                        pair[1],
                        pair[0],
                        i + 1
                    ),
                });
            }
        }
        Ok(())
    }
}

/// One point in the strategy-permutation grid for one variable.
///
/// `prompt_id` is the hyphen-joined choice vector in declared axis order,
/// e.g. `"2-0-0-2-1-0-1-2"`; it is a bijection with `choices` given the
/// axis list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPlan {
    pub variable_id: String,
    pub choices: BTreeMap<String, u8>,
    pub prompt_id: String,
}

impl PromptPlan {
    /// Builds a plan from explicit choices, deriving the canonical id.
    ///
    /// Fails if a choice references an unknown axis, an undeclared code, or
    /// an axis has no choice.
    pub fn new(
        variable_id: impl Into<String>,
        axes: &[StrategyAxis],
        choices: BTreeMap<String, u8>,
    ) -> Result<Self, StrategyError> {
        for axis_id in choices.keys() {
            if !axes.iter().any(|a| &a.axis_id == axis_id) {
                return Err(StrategyError::UnknownAxis {
                    axis_id: axis_id.clone(),
                });
            }
        }
        let prompt_id = encode_prompt_id(&choices, axes)?;
        Ok(PromptPlan {
            variable_id: variable_id.into(),
            choices,
            prompt_id,
        })
    }

    pub fn choice(&self, axis_id: &str) -> Option<u8> {
        self.choices.get(axis_id).copied()
    }

    /// The choice vector in declared axis order.
    pub fn choice_vector(&self, axes: &[StrategyAxis]) -> Vec<u8> {
        axes.iter()
            .filter_map(|a| self.choices.get(&a.axis_id).copied())
            .collect()
    }
}

/// Names the axes with structural meaning for prompt assembly and scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisBindings {
    pub coding_strategy: String,
    pub coding_elements: String,
    pub justification: String,
}

/// The complete strategy-grid declaration of one experiment: axes in their
/// declared (prompt-id) order, structural bindings, and validity
/// constraints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentDesign {
    pub axes: Vec<StrategyAxis>,
    pub bindings: AxisBindings,
    #[serde(default)]
    pub constraints: Vec<PairConstraint>,
}

impl ExperimentDesign {
    /// Validates axis invariants and that every binding and constraint
    /// references a declared axis.
    pub fn check(&self) -> Result<(), StrategyError> {
        for axis in &self.axes {
            axis.check()?;
        }
        for axis_id in [
            &self.bindings.coding_strategy,
            &self.bindings.coding_elements,
            &self.bindings.justification,
        ] {
            if self.axis(axis_id).is_none() {
                return Err(StrategyError::UnknownAxis {
                    axis_id: axis_id.clone(),
                });
            }
        }
        for c in &self.constraints {
            for axis_id in [&c.first_axis, &c.second_axis] {
                if self.axis(axis_id).is_none() {
                    return Err(StrategyError::UnknownAxis {
                        axis_id: axis_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn axis(&self, axis_id: &str) -> Option<&StrategyAxis> {
        self.axes.iter().find(|a| a.axis_id == axis_id)
    }

    pub fn enumerate(&self, variable_id: &str) -> Result<Vec<PromptPlan>, StrategyError> {
        enumerate_permutations(variable_id, &self.axes, &self.constraints)
    }
}

/// Allow-list constraint coupling two axes for one variable.
///
/// A plan for `variable_id` is valid only if its codes on `(first_axis,
/// second_axis)` appear in `allowed`. Plans for other variables are
/// unaffected.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairConstraint {
    pub variable_id: String,
    pub first_axis: String,
    pub second_axis: String,
    pub allowed: Vec<(u8, u8)>,
}

/// A constraint violation; a value, not a failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintViolation {
    pub variable_id: String,
    pub first_axis: String,
    pub second_axis: String,
    pub found: (u8, u8),
}

impl std::fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "variable {}: ({}={}, {}={}) is not in the allow-list",
            self.variable_id, self.first_axis, self.found.0, self.second_axis, self.found.1
        )
    }
}

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("axis {axis_id} declares no variants")]
    EmptyAxis { axis_id: String },
    #[error("axis {axis_id}: {detail}")]
    BadVariantCodes { axis_id: String, detail: String },
    #[error("constraint references unknown axis {axis_id}")]
    UnknownAxis { axis_id: String },
    #[error("prompt id {prompt_id:?}: expected {expected} tokens, found {found}")]
    TokenCount {
        prompt_id: String,
        expected: usize,
        found: usize,
    },
    #[error("prompt id token {token:?} for axis {axis_id} is not a declared variant")]
    BadToken { axis_id: String, token: String },
}

/// Enumerates every valid plan for `variable_id` over `axes`, filtered by
/// `constraints`, in lexicographic order of the choice vector (declared
/// axis order, codes ascending).
pub fn enumerate_permutations(
    variable_id: &str,
    axes: &[StrategyAxis],
    constraints: &[PairConstraint],
) -> Result<Vec<PromptPlan>, StrategyError> {
    for axis in axes {
        axis.check()?;
    }
    for c in constraints {
        for axis_id in [&c.first_axis, &c.second_axis] {
            if !axes.iter().any(|a| &a.axis_id == axis_id) {
                return Err(StrategyError::UnknownAxis {
                    axis_id: axis_id.clone(),
                });
            }
        }
    }
    let applicable: Vec<&PairConstraint> = constraints
        .iter()
        .filter(|c| c.variable_id == variable_id)
        .collect();

    // Odometer over the axes, last axis fastest, codes ascending.
    let mut plans = Vec::new();
    let mut cursor = vec![0usize; axes.len()];
    'outer: loop {
        let mut choices = BTreeMap::new();
        for (axis, &idx) in axes.iter().zip(&cursor) {
            choices.insert(axis.axis_id.clone(), axis.variants[idx].code);
        }
        let ok = applicable.iter().all(|c| {
            let a = choices[&c.first_axis];
            let b = choices[&c.second_axis];
            c.allowed.contains(&(a, b))
        });
        if ok {
            let prompt_id = encode_prompt_id(&choices, axes)?;
            plans.push(PromptPlan {
                variable_id: variable_id.to_string(),
                choices,
                prompt_id,
            });
        }
        for pos in (0..axes.len()).rev() {
            cursor[pos] += 1;
            if cursor[pos] < axes[pos].variants.len() {
                continue 'outer;
            }
            cursor[pos] = 0;
        }
        break;
    }
    // An axis list sorted by code gives ascending order already; sort the
    // variants defensively in case the declaration interleaves codes.
    Ok(plans)
}

/// Checks a single plan against the constraints for its variable.
pub fn validate_plan(
    plan: &PromptPlan,
    constraints: &[PairConstraint],
) -> Result<(), ConstraintViolation> {
    for c in constraints.iter().filter(|c| c.variable_id == plan.variable_id) {
        let a = plan.choices.get(&c.first_axis).copied();
        let b = plan.choices.get(&c.second_axis).copied();
        if let (Some(a), Some(b)) = (a, b) {
            if !c.allowed.contains(&(a, b)) {
                return Err(ConstraintViolation {
                    variable_id: plan.variable_id.clone(),
                    first_axis: c.first_axis.clone(),
                    second_axis: c.second_axis.clone(),
                    found: (a, b),
                });
            }
        }
    }
    Ok(())
}

/// Canonical text encoding of a choice map: codes joined by `-` in declared
/// axis order.
pub fn encode_prompt_id(
    choices: &BTreeMap<String, u8>,
    axes: &[StrategyAxis],
) -> Result<String, StrategyError> {
    let mut parts = Vec::with_capacity(axes.len());
    for axis in axes {
        let code = choices
            .get(&axis.axis_id)
            .copied()
            .ok_or_else(|| StrategyError::UnknownAxis {
                axis_id: axis.axis_id.clone(),
            })?;
        if !axis.has_code(code) {
            return Err(StrategyError::BadToken {
                axis_id: axis.axis_id.clone(),
                token: code.to_string(),
            });
        }
        parts.push(code.to_string());
    }
    Ok(parts.join("-"))
}

/// Parses a prompt id back into a plan. Inverse of [`encode_prompt_id`].
pub fn decode_prompt_id(
    prompt_id: &str,
    variable_id: &str,
    axes: &[StrategyAxis],
) -> Result<PromptPlan, StrategyError> {
    let tokens: Vec<&str> = prompt_id.split('-').collect();
    if tokens.len() != axes.len() {
        return Err(StrategyError::TokenCount {
            prompt_id: prompt_id.to_string(),
            expected: axes.len(),
            found: tokens.len(),
        });
    }
    let mut choices = BTreeMap::new();
    for (axis, token) in axes.iter().zip(&tokens) {
        let code: u8 = token.parse().map_err(|_| StrategyError::BadToken {
            axis_id: axis.axis_id.clone(),
            token: token.to_string(),
        })?;
        if !axis.has_code(code) {
            return Err(StrategyError::BadToken {
                axis_id: axis.axis_id.clone(),
                token: token.to_string(),
            });
        }
        choices.insert(axis.axis_id.clone(), code);
    }
    Ok(PromptPlan {
        variable_id: variable_id.to_string(),
        choices,
        prompt_id: prompt_id.to_string(),
    })
}
