//! Shared helpers for unit tests: the two-variable study configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::prompt::{Codebook, VariableSpec};
use crate::strategy::{
    AxisBindings, AxisVariant, ExperimentDesign, FragmentSlot, PairConstraint, PromptPlan,
    StrategyAxis,
};

fn axis(
    axis_id: &str,
    name: &str,
    slot: Option<FragmentSlot>,
    variants: &[(u8, &str, Option<&str>)],
) -> StrategyAxis {
    StrategyAxis {
        axis_id: axis_id.into(),
        name: name.into(),
        slot,
        variants: variants
            .iter()
            .map(|&(code, label, key)| AxisVariant {
                code,
                label: label.into(),
                fragment_key: key.map(str::to_string),
            })
            .collect(),
    }
}

/// The eight strategy axes of the two-variable study.
pub fn paper_axes() -> Vec<StrategyAxis> {
    use FragmentSlot::*;
    vec![
        axis(
            "rp",
            "Role prompting",
            Some(Preamble),
            &[
                (0, "none", None),
                (1, "scientist", Some("role.1")),
                (2, "chatbot", Some("role.2")),
            ],
        ),
        axis(
            "ci",
            "Context information",
            Some(Preamble),
            &[(0, "none", None), (1, "general description", Some("context.1"))],
        ),
        axis(
            "ts",
            "Task specification",
            Some(Preamble),
            &[(0, "none", None), (1, "general description", Some("task.1"))],
        ),
        axis(
            "cs",
            "Coding strategy",
            None,
            &[
                (1, "overall", Some("cs.1.lead_in")),
                (2, "detailed", Some("cs.2.lead_in")),
                (3, "detailed with limitations", Some("cs.3.lead_in")),
            ],
        ),
        axis(
            "ce",
            "Coding elements",
            None,
            &[(0, "none", None), (1, "build-up elements", None)],
        ),
        axis(
            "zsct",
            "Zero-Shot Chain-of-Thought",
            Some(Reasoning),
            &[
                (0, "none", None),
                (1, "proceed", Some("zsct.1")),
                (2, "think", Some("zsct.2")),
            ],
        ),
        axis(
            "ct",
            "Chain-of-Thought",
            Some(Reasoning),
            &[(0, "none", None), (1, "explanation", Some("cot.1"))],
        ),
        axis(
            "j",
            "Justification",
            Some(PostAnswer),
            &[
                (0, "none", None),
                (1, "normal", Some("justification.1")),
                (2, "detailed", Some("justification.2")),
            ],
        ),
    ]
}

/// Detailed indicator coding needs the build-up elements: the movement
/// grid only admits (overall, none), (detailed, build-up), and (detailed
/// with limitations, build-up).
pub fn movement_constraint() -> PairConstraint {
    PairConstraint {
        variable_id: "v_movement".into(),
        first_axis: "cs".into(),
        second_axis: "ce".into(),
        allowed: vec![(1, 0), (2, 1), (3, 1)],
    }
}

pub fn paper_design() -> ExperimentDesign {
    ExperimentDesign {
        axes: paper_axes(),
        bindings: AxisBindings {
            coding_strategy: "cs".into(),
            coding_elements: "ce".into(),
            justification: "j".into(),
        },
        constraints: vec![movement_constraint()],
    }
}

pub fn fixtures_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn paper_codebook() -> Codebook {
    Codebook::load(&fixtures_dir().join("paper/codebook.toml")).expect("fixture codebook")
}

pub fn climate_variable() -> VariableSpec {
    paper_codebook().variables["v_climate"].clone()
}

pub fn movement_variable() -> VariableSpec {
    paper_codebook().variables["v_movement"].clone()
}

/// Builds a plan from codes given in declared axis order.
pub fn plan_from(design: &ExperimentDesign, variable_id: &str, codes: &[u8]) -> PromptPlan {
    assert_eq!(codes.len(), design.axes.len());
    let mut choices = BTreeMap::new();
    for (axis, &code) in design.axes.iter().zip(codes) {
        choices.insert(axis.axis_id.clone(), code);
    }
    PromptPlan::new(variable_id, &design.axes, choices).expect("valid plan")
}
