use std::sync::Arc;

use esp_core::montecarlo::{
    cholesky, compute_risk_metrics, generate_scenario, loss_quantile, run_simulation,
    MacroVariable, MetricBindings, MonteCarloError, Process, ScenarioBinding, ScenarioSpec,
    Simulation, SimulationOutcome,
};
use esp_core::rng::{rng_new, Rng};
use esp_core::workbook::{CompiledModel, DType, InputField, Meter, OutputField, Session, WorkbookModel};
use proptest::prelude::*;

fn variable(name: &str, process: Process, x0: f64, mu: f64, sigma: f64) -> MacroVariable {
    MacroVariable {
        name: name.into(),
        process,
        initial_value: x0,
        drift: mu,
        volatility: sigma,
        input_binding_prefix: name.into(),
    }
}

fn single_normal_spec() -> ScenarioSpec {
    ScenarioSpec {
        variables: vec![variable("z", Process::Additive, 0.0, 0.0, 1.0)],
        horizon: 1,
        correlation: vec![vec![1.0]],
    }
}

/// Defaults iff the terminal standard-normal shock is below -1.645.
fn threshold_workbook() -> WorkbookModel {
    let mut m = WorkbookModel::new("threshold");
    m.set_value("Deal", "A1", 0.0)
        .set_formula("Deal", "B1", "=IF(A1<-1.645,1,0)");
    m.input_schema.push(InputField::number("z_terminal", "Deal!A1"));
    m.output_schema.push(OutputField::new("loss", "Deal!B1", DType::Number));
    m
}

fn simulate(
    model: &WorkbookModel,
    spec: &ScenarioSpec,
    metrics: &MetricBindings,
    seed: u64,
    n: u64,
    parallelism: usize,
) -> Result<SimulationOutcome, MonteCarloError> {
    let compiled = Arc::new(CompiledModel::compile(model.clone()));
    let factor = spec.validate()?;
    let binding = ScenarioBinding::resolve(spec, &compiled)?;
    let mut base = Session::new(compiled, Meter::unlimited());
    base.evaluate_all()?;
    run_simulation(
        &base,
        &Simulation {
            spec,
            factor: &factor,
            binding: &binding,
            metrics,
            master_seed: seed,
            iterations: n,
            parallelism,
        },
        None,
    )
}

fn random_spd(rng: &mut Rng, m: usize) -> Vec<Vec<f64>> {
    let a: Vec<Vec<f64>> = (0..m).map(|_| (0..m).map(|_| rng.normal()).collect()).collect();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|j| {
                    let dot: f64 = (0..m).map(|k| a[i][k] * a[j][k]).sum();
                    dot / m as f64 + if i == j { 0.1 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

#[test]
fn cholesky_residual_on_random_spd() {
    let mut rng = rng_new(11, 0);
    let mut worst = 0.0f64;
    for (i, m) in [2usize, 10, 50, 200].iter().cycle().take(100).enumerate() {
        let sigma = random_spd(&mut rng, *m);
        let f = cholesky(&sigma).unwrap_or_else(|e| panic!("matrix {i}: {e}"));
        for r in 0..*m {
            assert!(f.get(r, r) > 0.0);
            for c in r + 1..*m {
                assert_eq!(f.get(r, c), 0.0);
            }
        }
        worst = worst.max(f.residual(&sigma));
    }
    assert!(worst < 1e-10, "max residual {worst}");
}

#[test]
fn zero_volatility_follows_drift() {
    let spec = ScenarioSpec {
        variables: vec![
            variable("rate", Process::Additive, 0.02, 0.001, 0.0),
            variable("hpi", Process::Multiplicative, 100.0, 0.01, 0.0),
        ],
        horizon: 12,
        correlation: vec![vec![1.0, 0.3], vec![0.3, 1.0]],
    };
    let f = spec.validate().unwrap();
    for i in 0..5 {
        let p = generate_scenario(9, i, &spec, &f);
        let additive = (0..12).fold(0.02, |x, _| x + 0.001);
        assert_eq!(p.terminal(0), additive);
        assert!((p.terminal(0) - (0.02 + 12.0 * 0.001)).abs() < 1e-15);
        assert!((p.terminal(1) - 100.0 * (0.12f64).exp()).abs() < 1e-9);
    }
}

#[test]
fn unit_process_terminal_is_first_normal() {
    let spec = single_normal_spec();
    let f = spec.validate().unwrap();
    for (seed, i) in [(0, 0), (3, 17), (123456789, 4)] {
        let p = generate_scenario(seed, i, &spec, &f);
        assert_eq!(p.terminal(0), rng_new(seed, i).normal());
    }
}

#[test]
fn shock_correlation() {
    let spec = ScenarioSpec {
        variables: vec![
            variable("a", Process::Additive, 0.0, 0.0, 1.0),
            variable("b", Process::Additive, 0.0, 0.0, 1.0),
        ],
        horizon: 1,
        correlation: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
    };
    let f = spec.validate().unwrap();
    let n = 100_000;
    let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        let p = generate_scenario(2024, i, &spec, &f);
        let (a, b) = (p.terminal(0), p.terminal(1));
        sa += a;
        sb += b;
        saa += a * a;
        sbb += b * b;
        sab += a * b;
    }
    let nf = n as f64;
    let cov = sab / nf - (sa / nf) * (sb / nf);
    let va = saa / nf - (sa / nf).powi(2);
    let vb = sbb / nf - (sb / nf).powi(2);
    let rho = cov / (va * vb).sqrt();
    assert!((rho - 0.5).abs() < 0.01, "rho {rho}");
}

#[test]
fn spec_validation() {
    let mut s = single_normal_spec();
    s.correlation = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
    s.variables.push(variable("y", Process::Additive, 0.0, 0.0, 1.0));
    assert!(matches!(s.validate(), Err(MonteCarloError::InvalidSpec(_))));
    s.correlation = vec![vec![1.0, 0.999999], vec![0.999999, 1.0]];
    assert!(s.validate().is_ok());
    s.variables[1].process = Process::Multiplicative;
    assert!(s.validate().is_err());
    let json = r#"{"variables":[{"name":"z","process":"ADDITIVE","initial_value":0,"drift":0,
        "volatility":1,"input_binding_prefix":"z"}],"horizon":1,"correlation":[[1]]}"#;
    assert_eq!(ScenarioSpec::from_json(json.as_bytes()).unwrap(), single_normal_spec());
}

#[test]
fn binding_requires_matching_inputs() {
    let mut spec = single_normal_spec();
    spec.variables[0].input_binding_prefix = "hpi".into();
    let err = simulate(&threshold_workbook(), &spec, &MetricBindings::new("loss", 1.0), 1, 10, 1)
        .unwrap_err();
    assert_eq!(err.code(), "SCHEMA");

    // periodic inputs take precedence and must be complete
    let mut m = WorkbookModel::new("periodic");
    m.set_value("S", "A1", 0.0).set_value("S", "A2", 0.0).set_formula("S", "B1", "=ABS(A1-A2)");
    m.input_schema.push(InputField::number("z_1", "S!A1"));
    m.input_schema.push(InputField::number("z_2", "S!A2"));
    m.output_schema.push(OutputField::new("loss", "S!B1", DType::Number));
    let mut spec = single_normal_spec();
    spec.horizon = 2;
    let out = simulate(&m, &spec, &MetricBindings::new("loss", 1.0), 5, 50, 2).unwrap();
    assert_eq!(out.table.len(), 50);
    spec.horizon = 3;
    assert_eq!(
        simulate(&m, &spec, &MetricBindings::new("loss", 1.0), 5, 50, 2).unwrap_err().code(),
        "SCHEMA"
    );
}

#[test]
fn parallelism_does_not_change_results() {
    let wb = threshold_workbook();
    let spec = single_normal_spec();
    let mb = MetricBindings::new("loss", 1.0);
    let one = simulate(&wb, &spec, &mb, 77, 5_000, 1).unwrap();
    let four = simulate(&wb, &spec, &mb, 77, 5_000, 4).unwrap();
    assert_eq!(one, four);
    assert_eq!(
        serde_json::to_vec(&one.metrics).unwrap(),
        serde_json::to_vec(&four.metrics).unwrap()
    );
}

#[test]
fn earlier_iterations_unaffected_by_n() {
    let wb = threshold_workbook();
    let spec = single_normal_spec();
    let mb = MetricBindings::new("loss", 1.0);
    let short = simulate(&wb, &spec, &mb, 5, 300, 3).unwrap();
    let long = simulate(&wb, &spec, &mb, 5, 1000, 3).unwrap();
    assert_eq!(short.table[..], long.table[..300]);
}

#[test]
fn analytic_pd() {
    let out = simulate(
        &threshold_workbook(),
        &single_normal_spec(),
        &MetricBindings::new("loss", 1.0),
        1,
        100_000,
        4,
    )
    .unwrap();
    let p = 0.049_984_905_539_121_4;
    let band = 3.0 * (p * (1.0 - p) / 100_000.0f64).sqrt();
    assert!((out.metrics.pd - p).abs() < band, "pd {}", out.metrics.pd);
    assert_eq!(out.metrics.lgd, Some(1.0));
}

#[test]
fn zero_loss_model() {
    let mut m = threshold_workbook();
    m.set_formula("Deal", "B1", "=0*A1");
    let out = simulate(&m, &single_normal_spec(), &MetricBindings::new("loss", 1.0), 3, 500, 2).unwrap();
    assert_eq!(out.metrics.pd, 0.0);
    assert!(!out.metrics.lgd_defined);
    assert_eq!(out.metrics.expected_loss, 0.0);
}

#[test]
fn zero_volatility_gives_degenerate_pd() {
    let mut spec = single_normal_spec();
    spec.variables[0].volatility = 0.0;
    spec.variables[0].initial_value = -2.0;
    let out = simulate(&threshold_workbook(), &spec, &MetricBindings::new("loss", 1.0), 8, 200, 2).unwrap();
    assert_eq!(out.metrics.pd, 1.0);
    spec.variables[0].initial_value = 0.0;
    let out = simulate(&threshold_workbook(), &spec, &MetricBindings::new("loss", 1.0), 8, 200, 2).unwrap();
    assert_eq!(out.metrics.pd, 0.0);
}

#[test]
fn error_output_fails_at_lowest_iteration() {
    let mut m = threshold_workbook();
    m.set_formula("Deal", "B1", "=IF(A1>2.5,1/0,0)");
    let spec = single_normal_spec();
    let mb = MetricBindings::new("loss", 1.0);
    let a = simulate(&m, &spec, &mb, 4, 20_000, 1).unwrap_err();
    let b = simulate(&m, &spec, &mb, 4, 20_000, 4).unwrap_err();
    assert_eq!(a, b);
    let MonteCarloError::Eval { iteration, output, .. } = &a else { panic!("{a:?}") };
    assert_eq!(output, "loss");
    let first = (0..20_000u64).find(|i| rng_new(4, *i).normal() > 2.5).unwrap();
    assert_eq!(*iteration, first);
    assert_eq!(a.code(), "EVAL");
}

#[test]
fn explicit_default_output() {
    let mut m = threshold_workbook();
    m.set_formula("Deal", "C1", "=A1<0");
    m.output_schema.push(OutputField::new("dflt", "Deal!C1", DType::Boolean));
    let mut mb = MetricBindings::new("loss", 2.0);
    mb.default_output = Some("dflt".into());
    let out = simulate(&m, &single_normal_spec(), &mb, 6, 4000, 2).unwrap();
    assert!((out.metrics.pd - 0.5).abs() < 0.05);
    // loss is 1 on roughly 10% of defaults: lgd = 0.5 * P(z<-1.645 | z<0)
    assert!((out.metrics.lgd.unwrap() - 0.05).abs() < 0.02);

    mb.default_output = Some("loss".into());
    assert_eq!(simulate(&m, &single_normal_spec(), &mb, 6, 10, 1).unwrap_err().code(), "SCHEMA");
}

#[test]
fn budget_interrupts_simulation() {
    let compiled = Arc::new(CompiledModel::compile(threshold_workbook()));
    let spec = single_normal_spec();
    let factor = spec.validate().unwrap();
    let binding = ScenarioBinding::resolve(&spec, &compiled).unwrap();
    let mut base = Session::new(compiled, Meter::new(100, None));
    base.evaluate_all().unwrap();
    let mb = MetricBindings::new("loss", 1.0);
    let sim = Simulation {
        spec: &spec,
        factor: &factor,
        binding: &binding,
        metrics: &mb,
        master_seed: 1,
        iterations: 10_000,
        parallelism: 2,
    };
    assert_eq!(run_simulation(&base, &sim, None).unwrap_err().code(), "BUDGET");
}

#[test]
fn quantile_matches_sort_oracle() {
    let mut xs: Vec<f64> = (1..=100).map(f64::from).collect();
    let mut r = rng_new(1, 1);
    for i in (1..xs.len()).rev() {
        let j = (r.next_u64() % (i as u64 + 1)) as usize;
        xs.swap(i, j);
    }
    assert_eq!(loss_quantile(&xs, 0.95).unwrap(), 95.0);
    assert_eq!(loss_quantile(&xs, 0.99).unwrap(), 99.0);
    assert_eq!(loss_quantile(&xs, 0.001).unwrap(), 1.0);
}

proptest! {
    #[test]
    fn metric_invariants(rows in prop::collection::vec((0.0f64..1000.0, any::<bool>()), 1..300),
                         levels in prop::collection::vec(0.001f64..0.999, 1..6)) {
        let losses: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let defaults: Vec<bool> = rows.iter().map(|r| r.1).collect();
        let mut mb = MetricBindings::new("loss", 250.0);
        let mut levels = levels;
        levels.sort_by(f64::total_cmp);
        mb.quantile_levels = levels;
        let m = compute_risk_metrics(&losses, &defaults, &mb).unwrap();
        prop_assert!((0.0..=1.0).contains(&m.pd));
        prop_assert_eq!(m.lgd_defined, m.defaults > 0);
        for w in m.loss_quantiles.windows(2) {
            prop_assert!(w[0].loss <= w[1].loss);
        }
        for q in &m.loss_quantiles {
            // brute force: smallest value with at least ceil(pN) losses at or below it
            let need = (q.level * losses.len() as f64).ceil() as usize;
            let at_or_below = losses.iter().filter(|x| **x <= q.loss).count();
            let strictly_below = losses.iter().filter(|x| **x < q.loss).count();
            prop_assert!(at_or_below >= need && strictly_below < need.max(1));
        }
    }
}
