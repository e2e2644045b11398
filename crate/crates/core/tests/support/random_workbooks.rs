//! Random single-sheet workbooks of at most 200 cells and input updates.

use std::collections::BTreeMap;
use std::sync::Arc;

use esp_core::workbook::{
    evaluate_all, CompiledModel, InputField, Meter, Session, Value, WorkbookModel,
};
use proptest::prelude::*;

const COLS: [&str; 5] = ["A", "B", "C", "D", "E"];
const ROWS: u32 = 40;
pub const INPUTS: usize = 5;

pub fn cell_name() -> impl Strategy<Value = String> {
    (0..COLS.len(), 1..=ROWS).prop_map(|(c, r)| format!("{}{r}", COLS[c]))
}

pub fn range_text() -> impl Strategy<Value = String> {
    (cell_name(), cell_name()).prop_map(|(a, b)| format!("{a}:{b}"))
}

pub fn formula_body() -> impl Strategy<Value = String> {
    let leaf = prop_oneof![
        3 => cell_name(),
        2 => (0u32..50).prop_map(|n| n.to_string()),
        1 => Just("0.5".to_string()),
        1 => Just("TRUE".to_string()),
        1 => Just("\"t\"".to_string()),
    ];
    leaf.prop_recursive(4, 24, 3, |inner| {
        prop_oneof![
            (inner.clone(), prop::sample::select(vec!["+", "-", "*", "/", "^", "&", "<", "=", ">="]), inner.clone())
                .prop_map(|(a, op, b)| format!("({a}{op}{b})")),
            inner.clone().prop_map(|a| format!("-{a}")),
            (prop::sample::select(vec!["SUM", "AVERAGE", "MIN", "MAX", "COUNT"]), range_text(), inner.clone())
                .prop_map(|(f, r, a)| format!("{f}({r},{a})")),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(c, a, b)| format!("IF({c},{a},{b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("AND({a},{b})")),
            inner.clone().prop_map(|a| format!("ABS({a})")),
            inner.clone().prop_map(|a| format!("SQRT({a})")),
            (inner.clone(), range_text()).prop_map(|(a, r)| format!("NPV({a},{r})")),
        ]
    })
}

/// A single-sheet workbook: A1..A5 are numeric inputs `x1..x5`, the rest of
/// the grid is a random mix of blanks, literals and formulas.
pub fn workbook() -> impl Strategy<Value = WorkbookModel> {
    let content = prop_oneof![
        2 => Just(None),
        1 => (-100i32..100).prop_map(|n| Some(format!("{n}"))),
        4 => formula_body().prop_map(|f| Some(format!("={f}"))),
    ];
    prop::collection::vec(content, COLS.len() * ROWS as usize).prop_map(|cells| {
        let mut m = WorkbookModel::new("random");
        for i in 0..INPUTS {
            m.set_value("S", &format!("A{}", i + 1), i as f64);
            m.input_schema.push(InputField::number(&format!("x{}", i + 1), &format!("S!A{}", i + 1)));
        }
        for (i, c) in cells.into_iter().enumerate() {
            let (col, row) = (COLS[i % COLS.len()], i / COLS.len() + 1);
            if col == "A" && row <= INPUTS {
                continue;
            }
            let a1 = format!("{col}{row}");
            match c {
                Some(src) if src.starts_with('=') => {
                    m.set_formula("S", &a1, &src);
                }
                Some(n) => {
                    m.set_value("S", &a1, n.parse::<f64>().unwrap());
                }
                None => {}
            }
        }
        m
    })
}

pub fn input_values() -> impl Strategy<Value = Vec<Option<f64>>> {
    prop::collection::vec(prop::option::of(-20.0f64..20.0), INPUTS)
}

pub fn full_eval_with(model: &WorkbookModel, inputs: &[Option<f64>]) -> BTreeMap<String, Value> {
    let mut m = model.clone();
    for (i, v) in inputs.iter().enumerate() {
        if let Some(v) = v {
            m.set_value("S", &format!("A{}", i + 1), *v);
        }
    }
    evaluate_all(&m).unwrap().into_iter().map(|(r, v)| (r.to_string(), v)).collect()
}

pub fn bindings(inputs: &[Option<f64>]) -> BTreeMap<String, Value> {
    inputs
        .iter()
        .enumerate()
        .filter_map(|(i, v)| Some((format!("x{}", i + 1), Value::Number((*v)?))))
        .collect()
}

/// Cell values keyed by A1 text.
pub fn values(session: &Session) -> BTreeMap<String, Value> {
    session.cell_values().into_iter().map(|(r, v)| (r.to_string(), v)).collect()
}

/// Equality that tells `0.0` from `-0.0`.
pub fn bitwise_eq(a: &BTreeMap<String, Value>, b: &BTreeMap<String, Value>) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|((ka, va), (kb, vb))| {
            ka == kb
                && match (va, vb) {
                    (Value::Number(x), Value::Number(y)) => x.to_bits() == y.to_bits(),
                    _ => va == vb,
                }
        })
}

/// Applies `updates` one after another to a single session and checks
/// each state against evaluating the model from scratch.
pub fn replay(model: &WorkbookModel, updates: &[Vec<Option<f64>>]) -> Result<(), String> {
    let compiled = Arc::new(CompiledModel::compile(model.clone()));
    let mut session = Session::new(compiled, Meter::unlimited());
    session.evaluate_all().map_err(|e| e.to_string())?;
    let mut merged = vec![None; INPUTS];
    for (step, update) in updates.iter().enumerate() {
        session.set_inputs(&bindings(update)).map_err(|e| e.to_string())?;
        for (m, u) in merged.iter_mut().zip(update) {
            *m = u.or(*m);
        }
        if !bitwise_eq(&values(&session), &full_eval_with(model, &merged)) {
            return Err(format!("state differs after update {}", step + 1));
        }
    }
    Ok(())
}
