//! Recalculation and simulation throughput measurements.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use esp_core::engine::{Engine, JobRequest, VersionSelector};
use esp_core::montecarlo::{MetricBindings, ScenarioSpec};
use esp_core::store::Actor;
use esp_core::workbook::{CompiledModel, DType, Meter, Session, Value, WorkbookModel};
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct RecalcReport {
    pub formula_cells: usize,
    pub rebindable_inputs: usize,
    pub rounds: usize,
    pub incremental_secs: f64,
    pub full_secs: f64,
    /// Full over incremental wall time.
    pub speedup: f64,
    pub incremental_evaluations: u64,
    pub full_evaluations: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub iterations: u64,
    pub seconds: f64,
    pub iterations_per_second: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub model: String,
    pub recalc: RecalcReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationReport>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("the model has no numeric inputs to rebind")]
    NoInputs,
    #[error("incremental and full recalculation disagree after round {0}")]
    Mismatch(usize),
    #[error(transparent)]
    Recalc(#[from] esp_core::workbook::RecalcError),
    #[error(transparent)]
    Interrupted(#[from] esp_core::workbook::Interrupt),
    #[error(transparent)]
    Engine(#[from] esp_core::engine::EngineError),
    #[error(transparent)]
    Store(#[from] esp_core::store::StoreError),
}

/// Rebinds one numeric input per round and times incremental
/// recalculation against evaluating every formula. Both sessions must
/// agree on all outputs after every round.
pub fn recalc(model: WorkbookModel, rounds: usize) -> Result<RecalcReport, BenchError> {
    let inputs: Vec<String> = model
        .input_schema
        .iter()
        .filter(|f| f.dtype == DType::Number && !f.locked)
        .map(|f| f.name.clone())
        .collect();
    if inputs.is_empty() {
        return Err(BenchError::NoInputs);
    }
    let compiled = Arc::new(CompiledModel::compile(model));
    let formula_cells = compiled.model().formula_count();
    let mut inc = Session::new(Arc::clone(&compiled), Meter::unlimited());
    let mut full = Session::new(Arc::clone(&compiled), Meter::unlimited());
    inc.evaluate_all()?;
    full.evaluate_all()?;

    let (mut t_inc, mut t_full) = (Duration::ZERO, Duration::ZERO);
    let (e_inc0, e_full0) = (inc.formula_evaluations(), full.formula_evaluations());
    for round in 0..rounds {
        let name = &inputs[round % inputs.len()];
        let v = 1.0 + ((round + 1) as f64 * 0.618_033_988_75).fract();
        let b: BTreeMap<String, Value> = [(name.clone(), Value::Number(v))].into();

        let t = Instant::now();
        inc.set_inputs(&b)?;
        t_inc += t.elapsed();

        let t = Instant::now();
        full.bind_and_evaluate(&b)?;
        t_full += t.elapsed();

        if inc.outputs() != full.outputs() {
            return Err(BenchError::Mismatch(round));
        }
    }
    let (s_inc, s_full) = (t_inc.as_secs_f64(), t_full.as_secs_f64());
    Ok(RecalcReport {
        formula_cells,
        rebindable_inputs: inputs.len(),
        rounds,
        incremental_secs: s_inc,
        full_secs: s_full,
        speedup: if s_inc > 0.0 { s_full / s_inc } else { f64::INFINITY },
        incremental_evaluations: inc.formula_evaluations() - e_inc0,
        full_evaluations: full.formula_evaluations() - e_full0,
    })
}

/// Runs one Monte Carlo job through `engine` and reports its throughput.
pub fn simulation(
    engine: &Engine,
    model: &WorkbookModel,
    scenario: &ScenarioSpec,
    metrics: MetricBindings,
    bindings: BTreeMap<String, Value>,
    iterations: u64,
    seed: u64,
) -> Result<SimulationReport, BenchError> {
    let actor = Actor::new("bench", esp_core::store::Role::Superuser);
    let store = engine.store();
    let name = crate::model_name(model);
    let version = match store.upload_version(&name, &model.canonical_bytes(), &actor) {
        Ok(v) => v.version,
        Err(e) if e.code() == "DUPLICATE" => store.versions(&name)?.last().map_or(1, |v| v.version),
        Err(e) => return Err(e.into()),
    };
    let hash = store.put_scenario(scenario, &actor)?;
    let mut req = JobRequest::monte_carlo(&name, bindings, seed, iterations, &hash, metrics);
    req.version_selector = VersionSelector::Explicit(version);
    req.iteration_table = false;
    let t = Instant::now();
    engine.run(&req, &actor)?;
    let seconds = t.elapsed().as_secs_f64();
    Ok(SimulationReport {
        iterations,
        seconds,
        iterations_per_second: iterations as f64 / seconds,
    })
}
