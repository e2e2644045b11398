#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use esp_core::engine::{Engine, EngineConfig};
use esp_core::montecarlo::{MacroVariable, MetricBindings, Process, ScenarioSpec};
use esp_core::store::{Actor, ModelVersion, Role, StandardTest, Store};
use esp_core::workbook::{DType, InputField, OutputField, Value, WorkbookModel};

pub fn su() -> Actor {
    Actor::new("sam", Role::Superuser)
}

pub fn eu() -> Actor {
    Actor::new("erin", Role::Enduser)
}

pub fn eu2() -> Actor {
    Actor::new("eli", Role::Enduser)
}

pub fn admin() -> Actor {
    Actor::new("ada", Role::Admin)
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub store: Arc<Store>,
}

impl Fixture {
    pub fn new() -> Fixture {
        let dir = tempfile::tempdir().unwrap();
        let store = Arc::new(Store::open(dir.path().join("store")).unwrap());
        Fixture { dir, store }
    }

    pub fn engine(&self, config: EngineConfig) -> Engine {
        Engine::new(Arc::clone(&self.store), config).unwrap()
    }
}

pub fn bytes(m: &WorkbookModel) -> Vec<u8> {
    m.canonical_bytes()
}

pub fn num(x: f64) -> Value {
    Value::Number(x)
}

pub fn bind(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// `y = 2x`, with `x` in [-1000, 1000] and a locked `fee` of 0 added to `z`.
pub fn doubler() -> WorkbookModel {
    let mut m = WorkbookModel::new("doubler");
    m.set_value("Inputs", "A1", 0.0)
        .set_value("Inputs", "A2", 0.0)
        .set_formula("Outputs", "A1", "=Inputs!A1*2")
        .set_formula("Outputs", "A2", "=Inputs!A1*2+Inputs!A2");
    let mut x = InputField::number("x", "Inputs!A1");
    x.required = true;
    x.min = Some(-1000.0);
    x.max = Some(1000.0);
    let mut fee = InputField::number("fee", "Inputs!A2");
    fee.locked = true;
    fee.default = Some(num(0.0));
    m.input_schema.extend([x, fee]);
    m.output_schema.extend([
        OutputField::new("y", "Outputs!A1", DType::Number),
        OutputField::new("z", "Outputs!A2", DType::Number),
    ]);
    m
}

/// Loss 1 when the terminal shock is below -1.645, else 0.
pub fn threshold() -> WorkbookModel {
    let mut m = WorkbookModel::new("threshold");
    m.set_value("Inputs", "A1", 0.0)
        .set_value("Inputs", "A2", 1.0)
        .set_formula("Outputs", "A1", "=IF(Inputs!A1<-1.645,Inputs!A2,0)");
    let mut notional = InputField::number("notional", "Inputs!A2");
    notional.min = Some(0.0);
    notional.default = Some(num(1.0));
    m.input_schema
        .extend([InputField::number("z_terminal", "Inputs!A1"), notional]);
    m.output_schema
        .push(OutputField::new("loss", "Outputs!A1", DType::Number));
    m
}

/// `A1 = x`, `A(k) = A(k-1) + 1`: `n` formulas evaluated per recalculation.
pub fn chain(n: u32) -> WorkbookModel {
    let mut m = WorkbookModel::new("chain");
    m.set_value("S", "A1", 0.0);
    for r in 2..=n + 1 {
        m.set_formula("S", &format!("A{r}"), &format!("=A{}+1", r - 1));
    }
    m.input_schema.push(InputField::number("x", "S!A1"));
    m.output_schema
        .push(OutputField::new("end", &format!("S!A{}", n + 1), DType::Number));
    m
}

pub fn one_factor(prefix: &str) -> ScenarioSpec {
    ScenarioSpec {
        variables: vec![MacroVariable {
            name: "z".into(),
            process: Process::Additive,
            initial_value: 0.0,
            drift: 0.0,
            volatility: 1.0,
            input_binding_prefix: prefix.into(),
        }],
        horizon: 1,
        correlation: vec![vec![1.0]],
    }
}

pub fn loss_metrics() -> MetricBindings {
    MetricBindings::new("loss", 1.0)
}

pub fn plain_test(id: &str, inputs: &[(&str, Value)], expected: &[(&str, Value)]) -> StandardTest {
    StandardTest {
        test_id: id.into(),
        input_bindings: bind(inputs),
        expected_outputs: bind(expected),
        numeric_tolerance: 1e-9,
        seed: None,
        iterations: None,
        scenario_spec_ref: None,
        metric_bindings: None,
    }
}

/// Uploads, tests and promotes a model; returns the LIVE version.
pub fn make_live(
    engine: &Engine,
    name: &str,
    model: &WorkbookModel,
    tests: Vec<StandardTest>,
) -> ModelVersion {
    let store = engine.store();
    let v = store.upload_version(name, &bytes(model), &su()).unwrap();
    store
        .attach_standard_tests(name, v.version, tests, &su())
        .unwrap();
    let report = engine.run_standard_tests(name, v.version, &su()).unwrap();
    assert!(report.passed, "{report:?}");
    store.promote(name, v.version, &su()).unwrap()
}
