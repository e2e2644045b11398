use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::model::InputField;
use super::value::{DType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationKind {
    MissingRequired,
    TypeMismatch,
    OutOfBounds,
    LockedOverride,
    UnknownName,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub kind: ViolationKind,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub violations: Vec<Violation>,
    /// Accepted bindings with defaults filled in for absent optional fields.
    pub bindings: BTreeMap<String, Value>,
}

/// Field-wise validation of end-user bindings against an input schema.
pub fn validate_inputs(schema: &[InputField], bindings: &BTreeMap<String, Value>) -> ValidationReport {
    validate_inputs_with(schema, bindings, &BTreeSet::new())
}

/// As [`validate_inputs`], with some fields supplied by the engine (scenario
/// paths). Those are never required from the caller and may not be bound by
/// it.
pub fn validate_inputs_with(
    schema: &[InputField],
    bindings: &BTreeMap<String, Value>,
    engine_bound: &BTreeSet<String>,
) -> ValidationReport {
    let mut violations = Vec::new();
    let mut accepted = BTreeMap::new();
    let violation = |f: &InputField, kind, message: String, value: Option<&Value>| Violation {
        field: f.name.clone(),
        kind,
        message,
        value: value.cloned(),
        min: f.min,
        max: f.max,
    };

    for f in schema {
        let given = bindings.get(&f.name);
        if engine_bound.contains(&f.name) {
            if let Some(v) = given {
                violations.push(violation(
                    f,
                    ViolationKind::LockedOverride,
                    format!("`{}` is supplied by the scenario generator", f.name),
                    Some(v),
                ));
            }
            continue;
        }
        let Some(v) = given else {
            if f.locked || !f.required {
                if let Some(d) = &f.default {
                    accepted.insert(f.name.clone(), d.clone());
                }
            } else {
                violations.push(violation(
                    f,
                    ViolationKind::MissingRequired,
                    format!("`{}` is required", f.name),
                    None,
                ));
            }
            continue;
        };
        if f.locked {
            if f.default.as_ref() != Some(v) {
                violations.push(violation(
                    f,
                    ViolationKind::LockedOverride,
                    format!("`{}` is locked at {}", f.name, f.default.as_ref().expect("locked default")),
                    Some(v),
                ));
            } else {
                accepted.insert(f.name.clone(), v.clone());
            }
            continue;
        }
        if v.dtype() != Some(f.dtype) {
            violations.push(violation(
                f,
                ViolationKind::TypeMismatch,
                format!("`{}` expects {}, got {v}", f.name, f.dtype),
                Some(v),
            ));
            continue;
        }
        if let (DType::Number, Value::Number(n)) = (f.dtype, v) {
            let below = f.min.is_some_and(|m| *n < m);
            let above = f.max.is_some_and(|m| *n > m);
            if below || above {
                let lo = f.min.map_or("-inf".to_string(), |m| m.to_string());
                let hi = f.max.map_or("+inf".to_string(), |m| m.to_string());
                violations.push(violation(
                    f,
                    ViolationKind::OutOfBounds,
                    format!("`{}` = {n} is outside [{lo}, {hi}]", f.name),
                    Some(v),
                ));
                continue;
            }
        }
        accepted.insert(f.name.clone(), v.clone());
    }

    for (name, v) in bindings {
        if !schema.iter().any(|f| &f.name == name) {
            violations.push(Violation {
                field: name.clone(),
                kind: ViolationKind::UnknownName,
                message: format!("`{name}` is not an input of this model"),
                value: Some(v.clone()),
                min: None,
                max: None,
            });
        }
    }

    ValidationReport {
        ok: violations.is_empty(),
        violations,
        bindings: accepted,
    }
}
