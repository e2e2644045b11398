use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::cholesky::CholeskyFactor;
use super::metrics::{compute_risk_metrics, MetricBindings, RiskMetrics};
use super::scenario::{fill_scenario, PathScratch, ScenarioPath, ScenarioSpec};
use super::MonteCarloError;
use crate::workbook::{
    CompiledModel, DType, InputHandle, OutputField, RecalcError, Session, Value,
};

const CHUNK: u64 = 64;

#[derive(Debug, Clone)]
enum VarBinding {
    PerPeriod(Vec<InputHandle>),
    Terminal(InputHandle),
}

/// Resolved mapping from scenario variables to workbook input cells.
#[derive(Debug, Clone)]
pub struct ScenarioBinding {
    vars: Vec<VarBinding>,
    names: BTreeSet<String>,
}

impl ScenarioBinding {
    /// Matches each variable's prefix against the input schema: either all of
    /// `<prefix>_1..<prefix>_T`, or `<prefix>_terminal`.
    pub fn resolve(spec: &ScenarioSpec, model: &CompiledModel) -> Result<ScenarioBinding, MonteCarloError> {
        let schema = &model.model().input_schema;
        let mut names = BTreeSet::new();
        let mut vars = Vec::with_capacity(spec.variables.len());
        let handle = |name: &str| -> Result<InputHandle, MonteCarloError> {
            let field = schema.iter().find(|f| f.name == name).expect("checked");
            if field.dtype != DType::Number {
                return Err(MonteCarloError::Binding(format!("scenario input `{name}` must be a Number")));
            }
            model.input_handle(name).map_err(|e| match e {
                RecalcError::LockedInput(_) => {
                    MonteCarloError::Binding(format!("scenario input `{name}` is locked"))
                }
                other => MonteCarloError::Binding(other.to_string()),
            })
        };
        let has = |name: &str| schema.iter().any(|f| f.name == name);
        for v in &spec.variables {
            let p = &v.input_binding_prefix;
            let periodic: Vec<String> = (1..=spec.horizon).map(|t| format!("{p}_{t}")).collect();
            let present = periodic.iter().filter(|n| has(n)).count();
            let terminal = format!("{p}_terminal");
            let binding = if present == periodic.len() {
                let hs = periodic.iter().map(|n| handle(n)).collect::<Result<_, _>>()?;
                names.extend(periodic);
                VarBinding::PerPeriod(hs)
            } else if present == 0 && has(&terminal) {
                let h = handle(&terminal)?;
                names.insert(terminal);
                VarBinding::Terminal(h)
            } else if present > 0 {
                return Err(MonteCarloError::Binding(format!(
                    "variable `{}` binds {present} of {} periodic inputs `{p}_t`",
                    v.name, spec.horizon
                )));
            } else {
                return Err(MonteCarloError::Binding(format!(
                    "no inputs `{p}_1..{p}_{}` or `{terminal}` for variable `{}`",
                    spec.horizon, v.name
                )));
            };
            vars.push(binding);
        }
        Ok(ScenarioBinding { vars, names })
    }

    /// Input names written by the scenario; end users may not bind them.
    pub fn bound_inputs(&self) -> &BTreeSet<String> {
        &self.names
    }

    fn writes<'a>(&'a self, path: &'a ScenarioPath) -> impl Iterator<Item = (InputHandle, Value)> + 'a {
        self.vars.iter().enumerate().flat_map(move |(k, b)| {
            let items: Vec<(InputHandle, Value)> = match b {
                VarBinding::PerPeriod(hs) => hs
                    .iter()
                    .zip(path.series(k))
                    .map(|(h, x)| (*h, Value::number(*x)))
                    .collect(),
                VarBinding::Terminal(h) => vec![(*h, Value::number(path.terminal(k)))],
            };
            items
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u64,
    pub loss: f64,
    pub default: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    pub metrics: RiskMetrics,
    pub table: Vec<IterationRecord>,
}

/// Everything a simulation run needs besides the evaluation session.
pub struct Simulation<'a> {
    pub spec: &'a ScenarioSpec,
    pub factor: &'a CholeskyFactor,
    pub binding: &'a ScenarioBinding,
    pub metrics: &'a MetricBindings,
    pub master_seed: u64,
    pub iterations: u64,
    pub parallelism: usize,
}

enum Failure {
    Eval(MonteCarloError),
    Stop(MonteCarloError),
}

/// Runs iterations `0..N` over clones of `base`, which must already hold the
/// evaluated base bindings. Results are assembled by iteration index, so the
/// outcome does not depend on `parallelism`. On an evaluation error the
/// lowest failing iteration is reported.
pub fn run_simulation(
    base: &Session,
    sim: &Simulation<'_>,
    progress: Option<&AtomicU64>,
) -> Result<SimulationOutcome, MonteCarloError> {
    let outputs = &base.compiled().model().output_schema;
    sim.metrics.validate(outputs)?;
    let find = |name: &str| outputs.iter().find(|o| o.name == name).cloned().expect("validated");
    let loss_field = find(&sim.metrics.loss_output);
    let default_field = sim.metrics.default_output.as_deref().map(find);

    let n = sim.iterations;
    if n == 0 {
        return Err(MonteCarloError::Empty);
    }
    let next = AtomicU64::new(0);
    let first_fail = AtomicU64::new(u64::MAX);
    let stop = AtomicBool::new(false);
    let failures: Mutex<BTreeMap<u64, MonteCarloError>> = Mutex::new(BTreeMap::new());
    let fatal: Mutex<Option<MonteCarloError>> = Mutex::new(None);
    let workers = sim.parallelism.max(1).min(n.div_ceil(CHUNK) as usize);

    let parts: Vec<Vec<IterationRecord>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let mut session = base.clone();
                let (next, first_fail, stop) = (&next, &first_fail, &stop);
                let (failures, fatal) = (&failures, &fatal);
                let (loss_field, default_field) = (&loss_field, &default_field);
                scope.spawn(move || {
                    let mut out = Vec::new();
                    let mut scratch = PathScratch::default();
                    let mut path = ScenarioPath::empty();
                    'chunks: loop {
                        let start = next.fetch_add(CHUNK, Ordering::Relaxed);
                        if start >= n || stop.load(Ordering::Relaxed) {
                            break;
                        }
                        for i in start..(start + CHUNK).min(n) {
                            if i >= first_fail.load(Ordering::Relaxed) {
                                continue 'chunks;
                            }
                            let r = one_iteration(
                                &mut session, sim, &mut scratch, &mut path, i, loss_field,
                                default_field.as_ref(),
                            );
                            match r {
                                Ok(rec) => {
                                    out.push(rec);
                                    if let Some(p) = progress {
                                        p.fetch_add(1, Ordering::Relaxed);
                                    }
                                }
                                Err(Failure::Eval(e)) => {
                                    first_fail.fetch_min(i, Ordering::Relaxed);
                                    failures.lock().unwrap().insert(i, e);
                                    continue 'chunks;
                                }
                                Err(Failure::Stop(e)) => {
                                    stop.store(true, Ordering::Relaxed);
                                    fatal.lock().unwrap().get_or_insert(e);
                                    break 'chunks;
                                }
                            }
                        }
                    }
                    out
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation worker panicked")).collect()
    });

    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e);
    }
    if let Some((_, e)) = failures.into_inner().unwrap().into_iter().next() {
        return Err(e);
    }
    let mut table = vec![None; n as usize];
    for rec in parts.into_iter().flatten() {
        table[rec.iteration as usize] = Some(rec);
    }
    let table: Vec<IterationRecord> =
        table.into_iter().map(|r| r.expect("every iteration ran")).collect();
    let losses: Vec<f64> = table.iter().map(|r| r.loss).collect();
    let defaults: Vec<bool> = table.iter().map(|r| r.default).collect();
    let metrics = compute_risk_metrics(&losses, &defaults, sim.metrics)?;
    Ok(SimulationOutcome { metrics, table })
}

fn one_iteration(
    session: &mut Session,
    sim: &Simulation<'_>,
    scratch: &mut PathScratch,
    path: &mut ScenarioPath,
    i: u64,
    loss_field: &OutputField,
    default_field: Option<&OutputField>,
) -> Result<IterationRecord, Failure> {
    session.meter().check().map_err(|e| Failure::Stop(e.into()))?;
    fill_scenario(sim.master_seed, sim.spec, sim.factor, scratch, path, i);
    session
        .set_input_values(sim.binding.writes(path))
        .map_err(|e| Failure::Stop(e.into()))?;
    let eval_err = |output: &str, message: String| {
        Failure::Eval(MonteCarloError::Eval {
            iteration: i,
            output: output.to_string(),
            message,
        })
    };
    let loss = match read_output(session, loss_field) {
        Value::Number(x) if x >= 0.0 => x,
        Value::Number(x) => return Err(eval_err(&loss_field.name, format!("negative loss {x}"))),
        other => return Err(eval_err(&loss_field.name, format!("evaluated to {other}"))),
    };
    let default = match default_field {
        None => loss > 0.0,
        Some(f) => match read_output(session, f) {
            Value::Bool(b) => b,
            other => return Err(eval_err(&f.name, format!("evaluated to {other}"))),
        },
    };
    Ok(IterationRecord { iteration: i, loss, default })
}

fn read_output(session: &Session, field: &OutputField) -> Value {
    session
        .extract_outputs(std::slice::from_ref(field))
        .into_values()
        .next()
        .expect("one field")
}
