//! Compares every workbook under `tests/corpus` with values produced by
//! the reference evaluator in `tests/oracle`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use esp_core::workbook::{evaluate_all, parse_workbook, Value};

pub const REL_TOL: f64 = 1e-12;

pub struct CorpusReport {
    pub workbooks: usize,
    pub cells: usize,
    pub failures: Vec<String>,
}

fn close(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= REL_TOL * a.abs().max(b.abs())
}

pub fn check(dir: &Path) -> CorpusReport {
    let mut names: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    names.sort();
    let mut report = CorpusReport {
        workbooks: names.len(),
        cells: 0,
        failures: Vec::new(),
    };
    for path in names {
        let file = path.file_name().unwrap().to_string_lossy().to_string();
        let model = parse_workbook(&fs::read(&path).unwrap()).unwrap_or_else(|e| panic!("{file}: {e}"));
        let expected: BTreeMap<String, Value> =
            serde_json::from_slice(&fs::read(dir.join("expected").join(&file)).unwrap()).unwrap();
        let actual: BTreeMap<String, Value> = evaluate_all(&model)
            .unwrap()
            .into_iter()
            .map(|(r, v)| (r.to_string(), v))
            .collect();
        for (cell, want) in &expected {
            report.cells += 1;
            let ok = match (actual.get(cell), want) {
                (Some(Value::Number(a)), Value::Number(b)) => close(*a, *b),
                (Some(a), b) => a == b,
                (None, _) => false,
            };
            if !ok {
                report.failures.push(format!("{file} {cell}: got {:?}, want {want:?}", actual.get(cell)));
            }
        }
        for cell in actual.keys() {
            if !expected.contains_key(cell) {
                report.failures.push(format!("{file} {cell}: unexpected cell"));
            }
        }
    }
    report
}
