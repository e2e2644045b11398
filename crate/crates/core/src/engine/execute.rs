use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{EngineError, JobMode, JobRequest, ResultBody, VersionSelector, WatchdogPolicy};
use crate::canonical;
use crate::montecarlo::{
    run_simulation, CholeskyFactor, MetricBindings, MonteCarloError, RiskMetrics, ScenarioBinding,
    ScenarioSpec, Simulation,
};
use crate::store::{
    Actor, Mismatch, ModelVersion, Role, StandardTest, Store, StoreError, TestOutcome, TestReport,
};
use crate::workbook::{validate_inputs_with, CompiledModel, Meter, Session, Value};

/// Compiled models by blob hash.
#[derive(Default)]
pub(crate) struct ModelCache(Mutex<HashMap<String, Arc<CompiledModel>>>);

impl ModelCache {
    pub fn get(&self, store: &Store, blob_hash: &str) -> Result<Arc<CompiledModel>, StoreError> {
        if let Some(m) = self.0.lock().unwrap().get(blob_hash) {
            return Ok(Arc::clone(m));
        }
        let compiled = Arc::new(CompiledModel::compile(store.load_blob(blob_hash)?));
        self.0
            .lock()
            .unwrap()
            .insert(blob_hash.to_string(), Arc::clone(&compiled));
        Ok(compiled)
    }
}

pub(crate) struct McPlan {
    pub spec: ScenarioSpec,
    pub scenario_hash: String,
    pub factor: CholeskyFactor,
    pub binding: ScenarioBinding,
    pub metrics: MetricBindings,
    pub seed: u64,
    pub iterations: u64,
}

impl McPlan {
    fn new(
        store: &Store,
        compiled: &CompiledModel,
        scenario_ref: &str,
        metrics: &MetricBindings,
        seed: u64,
        iterations: u64,
    ) -> Result<McPlan, EngineError> {
        let spec = store.scenario(scenario_ref)?;
        let factor = spec.validate()?;
        let binding = ScenarioBinding::resolve(&spec, compiled)?;
        metrics.validate(&compiled.model().output_schema)?;
        Ok(McPlan {
            scenario_hash: spec.content_hash(),
            spec,
            factor,
            binding,
            metrics: metrics.clone(),
            seed,
            iterations,
        })
    }
}

/// A validated job, ready for a worker.
pub(crate) struct Prepared {
    pub version: ModelVersion,
    pub compiled: Arc<CompiledModel>,
    pub bindings: BTreeMap<String, Value>,
    pub plan: Option<McPlan>,
    pub iteration_table: bool,
}

impl Prepared {
    pub fn total(&self) -> u64 {
        self.plan.as_ref().map_or(1, |p| p.iterations)
    }

    /// Everything that determines the result besides the model blob.
    pub fn inputs_doc(&self) -> serde_json::Value {
        let mut doc = serde_json::json!({"bindings": self.bindings});
        if let Some(p) = &self.plan {
            doc["seed"] = p.seed.into();
            doc["iterations"] = p.iterations.into();
            doc["scenario_hash"] = p.scenario_hash.clone().into();
            doc["metric_bindings"] = serde_json::to_value(&p.metrics).expect("serializable");
        }
        doc
    }
}

pub(crate) fn prepare(
    store: &Store,
    cache: &ModelCache,
    request: &JobRequest,
    actor: &Actor,
) -> Result<Prepared, EngineError> {
    if actor.role == Role::Admin {
        return Err(EngineError::Forbidden(format!(
            "admin `{}` may not submit jobs",
            actor.user_id
        )));
    }
    request.check_shape()?;
    let version = match request.version_selector {
        VersionSelector::Live(_) => store
            .live_version(&request.model_name)?
            .ok_or_else(|| EngineError::NoLiveVersion(request.model_name.clone()))?,
        VersionSelector::Explicit(v) => {
            if actor.role != Role::Superuser {
                return Err(EngineError::Forbidden(
                    "only a superuser may run an explicit version".into(),
                ));
            }
            store.version(&request.model_name, v)?
        }
    };
    let compiled = cache.get(store, &version.blob_hash)?;
    let plan = match request.mode {
        JobMode::Single => None,
        JobMode::MonteCarlo => Some(McPlan::new(
            store,
            &compiled,
            request.scenario_spec_ref.as_deref().expect("shape checked"),
            request.metric_bindings.as_ref().expect("shape checked"),
            request.seed.expect("shape checked"),
            request.iterations.expect("shape checked"),
        )?),
    };
    let no_bound = BTreeSet::new();
    let bound = plan.as_ref().map_or(&no_bound, |p| p.binding.bound_inputs());
    let report = validate_inputs_with(&compiled.model().input_schema, &request.input_bindings, bound);
    if !report.ok {
        return Err(EngineError::Validation(report));
    }
    Ok(Prepared {
        version,
        compiled,
        bindings: report.bindings,
        plan,
        iteration_table: request.iteration_table,
    })
}

pub(crate) fn execute(
    job: &Prepared,
    meter: Meter,
    progress: &AtomicU64,
    threads: usize,
) -> Result<ResultBody, MonteCarloError> {
    let mut session = Session::new(Arc::clone(&job.compiled), meter);
    session.bind_and_evaluate(&job.bindings)?;
    let mut body = ResultBody {
        blob_hash: job.version.blob_hash.clone(),
        mode: JobMode::Single,
        bindings: job.bindings.clone(),
        seed: None,
        scenario_hash: None,
        outputs: None,
        metrics: None,
        iterations: None,
    };
    match &job.plan {
        None => {
            body.outputs = Some(session.outputs());
            progress.store(1, Ordering::Relaxed);
        }
        Some(p) => {
            let out = run_simulation(&session, &simulation(p, threads), Some(progress))?;
            body.mode = JobMode::MonteCarlo;
            body.seed = Some(p.seed);
            body.scenario_hash = Some(p.scenario_hash.clone());
            body.metrics = Some(out.metrics);
            body.iterations = job.iteration_table.then_some(out.table);
        }
    }
    Ok(body)
}

fn simulation(p: &McPlan, threads: usize) -> Simulation<'_> {
    Simulation {
        spec: &p.spec,
        factor: &p.factor,
        binding: &p.binding,
        metrics: &p.metrics,
        master_seed: p.seed,
        iterations: p.iterations,
        parallelism: threads,
    }
}

/// Numbers match within an absolute tolerance; everything else exactly.
pub fn compare_value(expected: &Value, actual: &Value, tolerance: f64) -> bool {
    match (expected, actual) {
        (Value::Number(e), Value::Number(a)) => e == a || (a - e).abs() <= tolerance,
        _ => expected == actual,
    }
}

pub(crate) fn metric_values(m: &RiskMetrics) -> BTreeMap<String, Value> {
    let mut out = BTreeMap::from([
        ("iterations".to_string(), Value::Number(m.iterations as f64)),
        ("defaults".to_string(), Value::Number(m.defaults as f64)),
        ("pd".to_string(), Value::Number(m.pd)),
        ("pd_stderr".to_string(), Value::Number(m.pd_stderr)),
        ("expected_loss".to_string(), Value::Number(m.expected_loss)),
        ("min_loss".to_string(), Value::Number(m.min_loss)),
        ("max_loss".to_string(), Value::Number(m.max_loss)),
    ]);
    if let Some(l) = m.lgd {
        out.insert("lgd".to_string(), Value::Number(l));
    }
    for q in &m.loss_quantiles {
        out.insert(format!("loss_quantile_{}", q.level), Value::Number(q.loss));
    }
    out
}

/// Runs `f` with `meter` cancelled once `timeout` elapses.
fn with_deadline<T>(meter: &Meter, timeout: Duration, f: impl FnOnce() -> T) -> T {
    let (done, wait) = crossbeam_channel::bounded::<()>(0);
    std::thread::scope(|s| {
        s.spawn(|| {
            if wait.recv_timeout(timeout).is_err() {
                meter.cancel();
            }
        });
        let out = f();
        drop(done);
        out
    })
}

pub(crate) fn run_standard_tests(
    store: &Store,
    cache: &ModelCache,
    policy: &WatchdogPolicy,
    threads: usize,
    model_name: &str,
    version: u32,
    actor: &Actor,
) -> Result<TestReport, EngineError> {
    actor.require(&[Role::Superuser], "run standard tests")?;
    let v = store.version(model_name, version)?;
    let tests = store.tests(model_name, version)?;
    if tests.is_empty() {
        return Err(StoreError::NoTests(format!("{model_name}/{version}")).into());
    }
    let tests_hash = canonical::digest(&tests);
    let compiled = cache.get(store, &v.blob_hash)?;
    let outcomes: Vec<TestOutcome> = tests
        .iter()
        .map(|t| {
            let meter = Meter::new(policy.step_budget, None);
            with_deadline(&meter, policy.timeout(), || {
                run_one(store, &v, &compiled, t, meter.clone(), threads)
            })
        })
        .collect();
    let mut report = TestReport {
        model_name: model_name.to_string(),
        version,
        blob_hash: v.blob_hash,
        passed: outcomes.iter().all(|o| o.passed),
        outcomes,
        status: v.status,
    };
    report.status = store.record_test_run(&report, &tests_hash, actor)?;
    Ok(report)
}

fn run_one(
    store: &Store,
    version: &ModelVersion,
    compiled: &Arc<CompiledModel>,
    test: &StandardTest,
    meter: Meter,
    threads: usize,
) -> TestOutcome {
    let failed = |error: String| TestOutcome {
        test_id: test.test_id.clone(),
        passed: false,
        mismatches: Vec::new(),
        error: Some(error),
    };
    let plan = match (test.seed, &test.scenario_spec_ref, &test.metric_bindings, test.iterations) {
        (Some(seed), Some(spec), Some(mb), Some(n)) => {
            match McPlan::new(store, compiled, spec, mb, seed, n) {
                Ok(p) => Some(p),
                Err(e) => return failed(format!("{}: {e}", e.code())),
            }
        }
        _ => None,
    };
    let no_bound = BTreeSet::new();
    let bound = plan.as_ref().map_or(&no_bound, |p| p.binding.bound_inputs());
    let report = validate_inputs_with(&compiled.model().input_schema, &test.input_bindings, bound);
    if !report.ok {
        let fields: Vec<_> = report.violations.iter().map(|v| v.message.as_str()).collect();
        return failed(format!("VALIDATION: {}", fields.join("; ")));
    }
    let job = Prepared {
        version: version.clone(),
        compiled: Arc::clone(compiled),
        bindings: report.bindings,
        plan,
        iteration_table: false,
    };
    let body = match execute(&job, meter, &AtomicU64::new(0), threads) {
        Ok(b) => b,
        Err(e) => return failed(format!("{}: {e}", e.code())),
    };
    let actual = match (body.outputs, body.metrics) {
        (Some(o), _) => o,
        (None, Some(m)) => metric_values(&m),
        (None, None) => BTreeMap::new(),
    };
    let mismatches: Vec<Mismatch> = test
        .expected_outputs
        .iter()
        .filter_map(|(name, expected)| {
            let a = actual.get(name);
            let ok = a.is_some_and(|a| compare_value(expected, a, test.numeric_tolerance));
            (!ok).then(|| Mismatch {
                name: name.clone(),
                expected: expected.clone(),
                actual: a.cloned(),
            })
        })
        .collect();
    TestOutcome {
        test_id: test.test_id.clone(),
        passed: mismatches.is_empty(),
        mismatches,
        error: None,
    }
}
