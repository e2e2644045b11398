//! Sample workbooks, scenarios and request files shipped under `samples/`.

use esp_core::montecarlo::{MacroVariable, MetricBindings, Process, ScenarioSpec};
use esp_core::store::StandardTest;
use esp_core::workbook::{column_name, DType, InputField, OutputField, Value, WorkbookModel};
use serde_json::json;

fn number_input(name: &str, cell: &str, min: Option<f64>, max: Option<f64>, default: Option<f64>) -> InputField {
    let mut f = InputField::number(name, cell);
    f.min = min;
    f.max = max;
    f.default = default.map(Value::Number);
    f
}

/// Loss 1 when the terminal standard-normal shock is below -1.645: PD is
/// Φ(-1.645) under a one-factor unit-volatility walk.
pub fn threshold() -> WorkbookModel {
    let mut m = WorkbookModel::new("threshold");
    m.set_value("Inputs", "A1", 0.0)
        .set_value("Inputs", "A2", 1.0)
        .set_formula("Outputs", "A1", "=IF(Inputs!A1<-1.645,Inputs!A2,0)")
        .set_formula("Outputs", "A2", "=Inputs!A1<-1.645");
    m.input_schema.extend([
        InputField::number("z_terminal", "Inputs!A1"),
        number_input("notional", "Inputs!A2", Some(0.0), None, Some(1.0)),
    ]);
    m.output_schema.extend([
        OutputField::new("loss", "Outputs!A1", DType::Number),
        OutputField::new("default", "Outputs!A2", DType::Boolean),
    ]);
    m
}

pub fn threshold_scenario() -> ScenarioSpec {
    ScenarioSpec {
        variables: vec![MacroVariable {
            name: "z".into(),
            process: Process::Additive,
            initial_value: 0.0,
            drift: 0.0,
            volatility: 1.0,
            input_binding_prefix: "z".into(),
        }],
        horizon: 1,
        correlation: vec![vec![1.0]],
    }
}

pub fn threshold_metrics() -> MetricBindings {
    MetricBindings {
        default_output: Some("default".into()),
        ..MetricBindings::new("loss", 1.0)
    }
}

pub const CREDIT_YEARS: u32 = 20;

/// A secured loan over a twenty-year life. GDP growth and a house-price
/// index drive default and recovery; the haircut is set centrally.
pub fn credit() -> WorkbookModel {
    let t = CREDIT_YEARS;
    let last = column_name(t);
    let mut m = WorkbookModel::new("secured_loan");
    m.set_value("Inputs", "A1", 1_000_000.0)
        .set_value("Inputs", "A2", 0.8)
        .set_value("Inputs", "A3", 0.25)
        .set_value("Inputs", "A4", 0.05)
        .set_value("Inputs", "A5", -0.06);
    m.input_schema.extend([
        {
            let mut f = number_input("notional", "Inputs!A1", Some(0.0), Some(1e9), None);
            f.required = true;
            f
        },
        number_input("ltv", "Inputs!A2", Some(0.05), Some(1.5), Some(0.8)),
        {
            let mut f = number_input("haircut", "Inputs!A3", Some(0.0), Some(1.0), Some(0.25));
            f.locked = true;
            f
        },
        number_input("rate", "Inputs!A4", Some(0.0), Some(0.5), Some(0.05)),
        number_input("gdp_trigger", "Inputs!A5", Some(-1.0), Some(0.0), Some(-0.06)),
    ]);
    for k in 0..t {
        let col = column_name(k + 1);
        let period = k + 1;
        m.set_value("Macro", &format!("{col}1"), 0.0)
            .set_value("Macro", &format!("{col}2"), 1.0);
        m.input_schema.push(InputField::number(&format!("gdp_{period}"), &format!("Macro!{col}1")));
        m.input_schema.push(number_input(&format!("hpi_{period}"), &format!("Macro!{col}2"), Some(0.0), None, None));
        // interest cash flow, paid while GDP stays above the trigger
        m.set_formula(
            "Deal",
            &format!("{col}1"),
            &format!("=IF(Macro!{col}1<Inputs!A5,0,Inputs!A1*Inputs!A4)"),
        );
    }
    m.set_formula("Deal", "A3", &format!("=MIN(Macro!A1:{last}1)<Inputs!A5"))
        .set_formula("Deal", "A4", &format!("=MIN(Macro!A2:{last}2)"))
        .set_formula("Deal", "A5", "=Inputs!A1/Inputs!A2*Deal!A4*(1-Inputs!A3)")
        .set_formula("Deal", "A6", "=IF(Deal!A3,MAX(0,Inputs!A1-Deal!A5),0)")
        .set_formula("Deal", "A7", &format!("=NPV(Inputs!A4,Deal!A1:{last}1)"));
    m.output_schema.extend([
        OutputField::new("default", "Deal!A3", DType::Boolean),
        OutputField::new("recovery", "Deal!A5", DType::Number),
        OutputField::new("loss", "Deal!A6", DType::Number),
        OutputField::new("interest_pv", "Deal!A7", DType::Number),
    ]);
    m
}

pub fn credit_scenario() -> ScenarioSpec {
    ScenarioSpec {
        variables: vec![
            MacroVariable {
                name: "gdp".into(),
                process: Process::Additive,
                initial_value: 0.0,
                drift: 0.005,
                volatility: 0.02,
                input_binding_prefix: "gdp".into(),
            },
            MacroVariable {
                name: "hpi".into(),
                process: Process::Multiplicative,
                initial_value: 1.0,
                drift: 0.02,
                volatility: 0.08,
                input_binding_prefix: "hpi".into(),
            },
        ],
        horizon: CREDIT_YEARS,
        correlation: vec![vec![1.0, 0.6], vec![0.6, 1.0]],
    }
}

pub fn credit_metrics() -> MetricBindings {
    MetricBindings {
        default_output: Some("default".into()),
        quantile_levels: vec![0.95, 0.99, 0.999],
        ..MetricBindings::new("loss", 1_000_000.0)
    }
}

pub fn credit_inputs() -> serde_json::Value {
    json!({"notional": 1_000_000.0, "ltv": 0.8})
}

/// A benign path (no default) and a crash path (default with loss).
pub fn credit_tests() -> Vec<StandardTest> {
    let t = CREDIT_YEARS;
    let path = |gdp: f64, hpi: f64| {
        let mut b = serde_json::Map::new();
        b.insert("notional".into(), json!(1_000_000.0));
        b.insert("ltv".into(), json!(0.8));
        for k in 1..=t {
            b.insert(format!("gdp_{k}"), json!(gdp));
            b.insert(format!("hpi_{k}"), json!(hpi));
        }
        serde_json::Value::Object(b)
    };
    let test = |id: &str, inputs: serde_json::Value, expected: serde_json::Value| {
        serde_json::from_value::<StandardTest>(json!({
            "test_id": id,
            "input_bindings": inputs,
            "expected_outputs": expected,
            "numeric_tolerance": 1e-6,
        }))
        .expect("valid test")
    };
    vec![
        test(
            "benign",
            path(0.01, 1.0),
            json!({"default": false, "loss": 0.0, "recovery": 937_500.0}),
        ),
        test(
            "crash",
            path(-0.1, 0.5),
            json!({"default": true, "loss": 531_250.0, "interest_pv": 0.0}),
        ),
    ]
}

pub const BENCH_INPUTS: u32 = 5;
pub const BENCH_CHAIN: u32 = 200;

/// Five independent chains of 200 formulas: rebinding one input dirties
/// a fifth of the 1,000 formula cells.
pub fn bench() -> WorkbookModel {
    let mut m = WorkbookModel::new("bench");
    for k in 0..BENCH_INPUTS {
        let col = column_name(k + 1);
        m.set_value("Inputs", &format!("{col}1"), 1.0);
        m.input_schema
            .push(InputField::number(&format!("x{}", k + 1), &format!("Inputs!{col}1")));
        m.set_formula("Calc", &format!("{col}1"), &format!("=Inputs!{col}1*1.01+1"));
        for r in 2..=BENCH_CHAIN {
            let prev = format!("{col}{}", r - 1);
            m.set_formula(
                "Calc",
                &format!("{col}{r}"),
                &format!("={prev}*0.999+SQRT(ABS({prev}))/(1+{prev}^2)"),
            );
        }
        m.output_schema.push(OutputField::new(
            &format!("y{}", k + 1),
            &format!("Calc!{col}{BENCH_CHAIN}"),
            DType::Number,
        ));
    }
    m
}

pub const CAPACITY_VARIABLES: u32 = 200;
pub const CAPACITY_PERIODS: u32 = 80;

/// 200 macro variables over 80 periods, every one bound per iteration.
pub fn capacity() -> WorkbookModel {
    let (m_vars, t) = (CAPACITY_VARIABLES, CAPACITY_PERIODS);
    let mut m = WorkbookModel::new("capacity");
    let last_var = column_name(m_vars);
    for j in 0..m_vars {
        let col = column_name(j + 1);
        for p in 1..=t {
            let cell = format!("{col}{p}");
            m.set_value("Macro", &cell, 0.0);
            m.input_schema
                .push(InputField::number(&format!("v{}_{p}", j + 1), &format!("Macro!{cell}")));
        }
    }
    for p in 1..=t {
        m.set_formula("Deal", &format!("A{p}"), &format!("=AVERAGE(Macro!A{p}:{last_var}{p})"));
    }
    m.set_value("Inputs", "A1", 1.0);
    m.input_schema
        .push(number_input("notional", "Inputs!A1", Some(0.0), None, Some(1.0)));
    m.set_formula("Deal", "B1", &format!("=MIN(Deal!A1:A{t})<-0.6"))
        .set_formula("Deal", "B2", &format!("=IF(Deal!B1,Inputs!A1*MIN(1,ABS(Deal!A{t})),0)"));
    m.output_schema.extend([
        OutputField::new("default", "Deal!B1", DType::Boolean),
        OutputField::new("loss", "Deal!B2", DType::Number),
    ]);
    m
}

/// Equicorrelated (0.3) additive walks.
pub fn capacity_scenario() -> ScenarioSpec {
    let m = CAPACITY_VARIABLES as usize;
    ScenarioSpec {
        variables: (1..=m)
            .map(|j| MacroVariable {
                name: format!("v{j}"),
                process: Process::Additive,
                initial_value: 0.0,
                drift: 0.0,
                volatility: 0.1,
                input_binding_prefix: format!("v{j}"),
            })
            .collect(),
        horizon: CAPACITY_PERIODS,
        correlation: (0..m)
            .map(|i| (0..m).map(|j| if i == j { 1.0 } else { 0.3 }).collect())
            .collect(),
    }
}

pub fn capacity_metrics() -> MetricBindings {
    MetricBindings {
        default_output: Some("default".into()),
        ..MetricBindings::new("loss", 1.0)
    }
}

fn pretty<T: serde::Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("serializable");
    out.push(b'\n');
    out
}

/// `(file name, contents)` for everything under `samples/`.
pub fn files() -> Vec<(&'static str, Vec<u8>)> {
    vec![
        ("threshold.json", threshold().canonical_bytes()),
        ("threshold_scenario.json", pretty(&threshold_scenario())),
        ("threshold_metrics.json", pretty(&threshold_metrics())),
        ("credit.json", credit().canonical_bytes()),
        ("credit_scenario.json", pretty(&credit_scenario())),
        ("credit_metrics.json", pretty(&credit_metrics())),
        ("credit_inputs.json", pretty(&credit_inputs())),
        ("credit_tests.json", pretty(&credit_tests())),
        ("bench.json", bench().canonical_bytes()),
        ("capacity.json", capacity().canonical_bytes()),
        ("capacity_scenario.json", capacity_scenario().canonical_bytes()),
        ("capacity_metrics.json", pretty(&capacity_metrics())),
    ]
}
