//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists; failures raise `esp.EspError(code, message, details)`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use esp_core::engine::{Engine, EngineConfig, EngineError, JobRequest, WatchdogPolicy};
use esp_core::montecarlo::{MonteCarloError, ScenarioSpec};
use esp_core::store::{verify_audit_file, Actor, Role, StandardTest, Store, StoreError};
use esp_core::workbook::{
    evaluate_all, parse_workbook, validate_inputs, CompiledModel, Meter, RecalcError, Value,
    WorkbookError, WorkbookModel,
};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(esp, EspError, PyException, "Raised with (code, message, details).");

fn raise(code: &str, message: String, details: serde_json::Value) -> PyErr {
    let details = Python::attach(|py| to_py(py, &details).unwrap_or_else(|_| py.None()));
    EspError::new_err((code.to_string(), message, details))
}

trait IntoPyErr {
    fn py_err(self) -> PyErr;
}

impl IntoPyErr for EngineError {
    fn py_err(self) -> PyErr {
        raise(self.code(), self.to_string(), self.details())
    }
}

impl IntoPyErr for StoreError {
    fn py_err(self) -> PyErr {
        raise(self.code(), self.to_string(), serde_json::Value::Null)
    }
}

impl IntoPyErr for WorkbookError {
    fn py_err(self) -> PyErr {
        raise(self.code(), self.to_string(), serde_json::Value::Null)
    }
}

impl IntoPyErr for MonteCarloError {
    fn py_err(self) -> PyErr {
        raise(self.code(), self.to_string(), serde_json::Value::Null)
    }
}

impl IntoPyErr for RecalcError {
    fn py_err(self) -> PyErr {
        raise("INPUT", self.to_string(), serde_json::Value::Null)
    }
}

fn wrap<T, E: IntoPyErr>(r: Result<T, E>) -> PyResult<T> {
    r.map_err(IntoPyErr::py_err)
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| raise("INTERNAL", e.to_string(), serde_json::Value::Null))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| raise("BAD_REQUEST", e.to_string(), serde_json::Value::Null))
}

fn bindings(obj: Option<&Bound<'_, PyAny>>) -> PyResult<BTreeMap<String, Value>> {
    obj.map_or_else(|| Ok(BTreeMap::new()), from_py)
}

fn role(name: &str) -> PyResult<Role> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| raise("BAD_REQUEST", format!("unknown role `{name}`"), serde_json::Value::Null))
}

/// A parsed workbook with its input and output schemas.
#[pyclass(frozen, module = "esp")]
struct Workbook {
    model: WorkbookModel,
    compiled: Arc<CompiledModel>,
}

impl Workbook {
    fn new(model: WorkbookModel) -> Workbook {
        let compiled = Arc::new(CompiledModel::compile(model.clone()));
        Workbook { model, compiled }
    }
}

#[pymethods]
impl Workbook {
    /// Parses workbook JSON from `bytes` or `str`.
    #[staticmethod]
    fn from_json(data: &Bound<'_, PyAny>) -> PyResult<Workbook> {
        let bytes: Vec<u8> = match data.extract::<String>() {
            Ok(s) => s.into_bytes(),
            Err(_) => data.extract()?,
        };
        Ok(Workbook::new(wrap(parse_workbook(&bytes))?))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Workbook> {
        let bytes = std::fs::read(&path).map_err(|e| raise("IO", format!("{}: {e}", path.display()), serde_json::Value::Null))?;
        Ok(Workbook::new(wrap(parse_workbook(&bytes))?))
    }

    #[getter]
    fn name(&self) -> &str {
        &self.model.name
    }

    #[getter]
    fn content_hash(&self) -> String {
        self.model.content_hash()
    }

    #[getter]
    fn formula_count(&self) -> usize {
        self.model.formula_count()
    }

    fn to_json<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.model.canonical_bytes())
    }

    fn inputs(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.model.input_schema)
    }

    fn outputs(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.model.output_schema)
    }

    /// Checks bindings against the input schema without evaluating.
    #[pyo3(signature = (bindings=None))]
    fn validate(&self, py: Python<'_>, bindings: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let b = self::bindings(bindings)?;
        to_py(py, &validate_inputs(&self.model.input_schema, &b))
    }

    /// Named outputs after applying `bindings` to the stored inputs.
    #[pyo3(signature = (bindings=None))]
    fn evaluate(&self, py: Python<'_>, bindings: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let b = self::bindings(bindings)?;
        let mut s = esp_core::workbook::Session::new(Arc::clone(&self.compiled), Meter::unlimited());
        wrap(py.detach(|| s.bind_and_evaluate(&b)))?;
        to_py(py, &s.outputs())
    }

    /// Every non-blank cell value keyed by `Sheet!A1`.
    fn cells(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        let values = py.detach(|| evaluate_all(&self.model)).map_err(|e| raise("INTERRUPTED", e.to_string(), serde_json::Value::Null))?;
        let keyed: BTreeMap<String, Value> = values.into_iter().map(|(r, v)| (r.to_string(), v)).collect();
        to_py(py, &keyed)
    }

    fn __repr__(&self) -> String {
        format!("Workbook({:?}, {} formulas)", self.model.name, self.model.formula_count())
    }
}

/// Incremental recalculation: only cells downstream of changed inputs are
/// recomputed.
#[pyclass(unsendable, module = "esp")]
struct Session {
    inner: esp_core::workbook::Session,
}

#[pymethods]
impl Session {
    #[new]
    fn new(workbook: &Workbook) -> PyResult<Session> {
        let mut inner = esp_core::workbook::Session::new(Arc::clone(&workbook.compiled), Meter::unlimited());
        inner.evaluate_all().map_err(|e| raise("INTERRUPTED", e.to_string(), serde_json::Value::Null))?;
        Ok(Session { inner })
    }

    fn set_inputs(&mut self, bindings: &Bound<'_, PyAny>) -> PyResult<()> {
        let b: BTreeMap<String, Value> = from_py(bindings)?;
        wrap(self.inner.set_inputs(&b))
    }

    fn outputs(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.outputs())
    }

    /// Formula evaluations performed so far, including the first full pass.
    #[getter]
    fn formula_evaluations(&self) -> u64 {
        self.inner.formula_evaluations()
    }
}

/// A model store plus job engine rooted at a directory.
#[pyclass(frozen, module = "esp")]
struct Platform {
    engine: Arc<Engine>,
}

#[pymethods]
impl Platform {
    #[new]
    #[pyo3(signature = (store, workers=2, simulation_threads=None, timeout_secs=None))]
    fn new(store: PathBuf, workers: usize, simulation_threads: Option<usize>, timeout_secs: Option<f64>) -> PyResult<Platform> {
        let mut config = EngineConfig { workers, ..EngineConfig::default() };
        if let Some(t) = simulation_threads {
            config.simulation_threads = t;
        }
        if let Some(t) = timeout_secs {
            config.policy = WatchdogPolicy { wall_clock_timeout_secs: t, ..WatchdogPolicy::default() };
        }
        let store = Arc::new(wrap(Store::open(store))?);
        Ok(Platform { engine: Arc::new(wrap(Engine::new(store, config))?) })
    }

    #[pyo3(signature = (name, workbook, user="local", role="SUPERUSER"))]
    fn upload(&self, py: Python<'_>, name: &str, workbook: &Workbook, user: &str, role: &str) -> PyResult<Py<PyAny>> {
        let actor = Actor::new(user, self::role(role)?);
        let v = wrap(self.engine.store().upload_version(name, &workbook.model.canonical_bytes(), &actor))?;
        to_py(py, &v)
    }

    fn versions(&self, py: Python<'_>, name: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &wrap(self.engine.store().versions(name))?)
    }

    #[pyo3(signature = (name, version, tests, user="local", role="SUPERUSER"))]
    fn attach_tests(&self, name: &str, version: u32, tests: &Bound<'_, PyAny>, user: &str, role: &str) -> PyResult<usize> {
        let tests: Vec<StandardTest> = from_py(tests)?;
        wrap(self.engine.store().attach_standard_tests(name, version, tests, &Actor::new(user, self::role(role)?)))
    }

    #[pyo3(signature = (name, version, user="local", role="SUPERUSER"))]
    fn run_tests(&self, py: Python<'_>, name: &str, version: u32, user: &str, role: &str) -> PyResult<Py<PyAny>> {
        let actor = Actor::new(user, self::role(role)?);
        let report = wrap(py.detach(|| self.engine.run_standard_tests(name, version, &actor)))?;
        to_py(py, &report)
    }

    #[pyo3(signature = (name, version, user="local", role="SUPERUSER"))]
    fn promote(&self, py: Python<'_>, name: &str, version: u32, user: &str, role: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &wrap(self.engine.store().promote(name, version, &Actor::new(user, self::role(role)?)))?)
    }

    #[pyo3(signature = (name, version, user="local", role="SUPERUSER"))]
    fn retire(&self, py: Python<'_>, name: &str, version: u32, user: &str, role: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &wrap(self.engine.store().retire(name, version, &Actor::new(user, self::role(role)?)))?)
    }

    /// Registers a scenario and returns its content hash.
    #[pyo3(signature = (spec, user="local", role="SUPERUSER"))]
    fn put_scenario(&self, spec: &Bound<'_, PyAny>, user: &str, role: &str) -> PyResult<String> {
        let spec: ScenarioSpec = from_py(spec)?;
        wrap(self.engine.store().put_scenario(&spec, &Actor::new(user, self::role(role)?)))
    }

    #[pyo3(signature = (request, user="local", role="SUPERUSER"))]
    fn submit(&self, request: &Bound<'_, PyAny>, user: &str, role: &str) -> PyResult<String> {
        let req: JobRequest = from_py(request)?;
        wrap(self.engine.submit(&req, &Actor::new(user, self::role(role)?)))
    }

    #[pyo3(signature = (job_id, user="local", role="SUPERUSER"))]
    fn status(&self, py: Python<'_>, job_id: &str, user: &str, role: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &wrap(self.engine.status(job_id, &Actor::new(user, self::role(role)?)))?)
    }

    /// Blocks until the job is terminal or `timeout` seconds pass.
    #[pyo3(signature = (job_id, timeout=60.0))]
    fn wait(&self, py: Python<'_>, job_id: &str, timeout: f64) -> PyResult<Py<PyAny>> {
        let s = wrap(py.detach(|| self.engine.wait(job_id, Duration::from_secs_f64(timeout))))?;
        to_py(py, &s)
    }

    #[pyo3(signature = (job_id, user="local", role="SUPERUSER"))]
    fn result(&self, py: Python<'_>, job_id: &str, user: &str, role: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &*wrap(self.engine.result(job_id, &Actor::new(user, self::role(role)?)))?)
    }

    /// Submits, waits and returns the result document.
    #[pyo3(signature = (request, user="local", role="SUPERUSER"))]
    fn run(&self, py: Python<'_>, request: &Bound<'_, PyAny>, user: &str, role: &str) -> PyResult<Py<PyAny>> {
        let req: JobRequest = from_py(request)?;
        let actor = Actor::new(user, self::role(role)?);
        let r = wrap(py.detach(|| self.engine.run(&req, &actor)))?;
        to_py(py, &*r)
    }

    /// Like `run`, but returns the canonical bytes of the reproducible body.
    #[pyo3(signature = (request, user="local", role="SUPERUSER"))]
    fn run_canonical<'py>(&self, py: Python<'py>, request: &Bound<'py, PyAny>, user: &str, role: &str) -> PyResult<Bound<'py, PyBytes>> {
        let req: JobRequest = from_py(request)?;
        let actor = Actor::new(user, self::role(role)?);
        let r = wrap(py.detach(|| self.engine.run(&req, &actor)))?;
        Ok(PyBytes::new(py, &r.canonical_bytes()))
    }

    #[pyo3(signature = (offset=0, limit=100, user="local", role="SUPERUSER"))]
    fn audit(&self, py: Python<'_>, offset: usize, limit: usize, user: &str, role: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &wrap(self.engine.store().audit_records(&Actor::new(user, self::role(role)?), offset, limit))?)
    }

    fn verify_audit(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &wrap(self.engine.store().verify_audit_chain())?)
    }
}

/// Lower-triangular factor of a symmetric positive definite matrix.
#[pyfunction]
fn cholesky(matrix: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(wrap(esp_core::montecarlo::cholesky(&matrix))?.rows())
}

/// Recomputes the hash chain of an audit log file.
#[pyfunction]
fn verify_audit(py: Python<'_>, path: PathBuf) -> PyResult<Py<PyAny>> {
    to_py(py, &wrap(verify_audit_file(&path))?)
}

#[pymodule]
fn esp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EspError", m.py().get_type::<EspError>())?;
    m.add_class::<Workbook>()?;
    m.add_class::<Session>()?;
    m.add_class::<Platform>()?;
    m.add_function(wrap_pyfunction!(cholesky, m)?)?;
    m.add_function(wrap_pyfunction!(verify_audit, m)?)?;
    Ok(())
}
