//! Job engine: validated jobs against stored models, executed by a worker
//! pool under a wall-clock and step-budget watchdog.

mod execute;
mod pool;

pub use execute::compare_value;
pub use pool::Engine;

use std::collections::BTreeMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::montecarlo::{IterationRecord, MetricBindings, MonteCarloError, RiskMetrics};
use crate::store::StoreError;
use crate::workbook::{ValidationReport, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LiveMarker {
    #[serde(rename = "LIVE")]
    Live,
}

/// Which version a job runs against. Serialized as `"LIVE"` or a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum VersionSelector {
    Live(LiveMarker),
    Explicit(u32),
}

impl Default for VersionSelector {
    fn default() -> Self {
        VersionSelector::Live(LiveMarker::Live)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobMode {
    #[default]
    Single,
    MonteCarlo,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub model_name: String,
    #[serde(default)]
    pub version_selector: VersionSelector,
    #[serde(default)]
    pub input_bindings: BTreeMap<String, Value>,
    #[serde(default)]
    pub mode: JobMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_spec_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_bindings: Option<MetricBindings>,
    /// Keep the per-iteration table in the result.
    #[serde(default = "yes")]
    pub iteration_table: bool,
    /// Filled in from the authenticated caller.
    #[serde(default)]
    pub submitted_by: String,
}

impl JobRequest {
    pub fn single(model_name: &str, bindings: BTreeMap<String, Value>) -> JobRequest {
        JobRequest {
            model_name: model_name.to_string(),
            version_selector: VersionSelector::default(),
            input_bindings: bindings,
            mode: JobMode::Single,
            seed: None,
            iterations: None,
            scenario_spec_ref: None,
            metric_bindings: None,
            iteration_table: true,
            submitted_by: String::new(),
        }
    }

    pub fn monte_carlo(
        model_name: &str,
        bindings: BTreeMap<String, Value>,
        seed: u64,
        iterations: u64,
        scenario: &str,
        metrics: MetricBindings,
    ) -> JobRequest {
        JobRequest {
            mode: JobMode::MonteCarlo,
            seed: Some(seed),
            iterations: Some(iterations),
            scenario_spec_ref: Some(scenario.to_string()),
            metric_bindings: Some(metrics),
            ..JobRequest::single(model_name, bindings)
        }
    }

    fn check_shape(&self) -> Result<(), EngineError> {
        let mc = [
            self.seed.is_some(),
            self.iterations.is_some(),
            self.scenario_spec_ref.is_some(),
            self.metric_bindings.is_some(),
        ];
        match self.mode {
            JobMode::Single if mc.iter().any(|x| *x) => Err(EngineError::BadRequest(
                "SINGLE jobs take no seed, iterations, scenario_spec_ref or metric_bindings".into(),
            )),
            JobMode::MonteCarlo if !mc.iter().all(|x| *x) => Err(EngineError::BadRequest(
                "MONTE_CARLO jobs need seed, iterations, scenario_spec_ref and metric_bindings".into(),
            )),
            JobMode::MonteCarlo if self.iterations == Some(0) => {
                Err(EngineError::BadRequest("iterations must be at least 1".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum JobState {
    Queued,
    Running,
    Succeeded,
    Failed,
    TimedOut,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Succeeded | JobState::Failed | JobState::TimedOut)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Progress {
    pub completed: u64,
    pub total: u64,
}

impl Progress {
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.completed as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobStatus {
    pub job_id: String,
    pub model_name: String,
    pub version: u32,
    pub state: JobState,
    pub progress: Progress,
    pub enqueued_at: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub started_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ended_at: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_code: Option<String>,
}

/// The reproducible part of a result: a pure function of the model blob,
/// bindings, seed, iteration count, scenario and metric bindings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultBody {
    pub blob_hash: String,
    pub mode: JobMode,
    pub bindings: BTreeMap<String, Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<BTreeMap<String, Value>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RiskMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<Vec<IterationRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    pub job_id: String,
    pub model_name: String,
    pub version: u32,
    pub timestamp: String,
    #[serde(flatten)]
    pub body: ResultBody,
}

impl JobResult {
    /// Canonical JSON of [`ResultBody`]; identical across runs, worker
    /// counts and front ends.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        crate::canonical::to_vec(&self.body)
    }
}

/// What a failed or timed-out job leaves behind instead of results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub job_id: String,
    pub model_name: String,
    pub version: u32,
    pub blob_hash: String,
    pub state: JobState,
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iteration: Option<u64>,
    pub timestamp: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WatchdogPolicy {
    #[serde(default = "WatchdogPolicy::default_timeout")]
    pub wall_clock_timeout_secs: f64,
    #[serde(default = "WatchdogPolicy::default_budget")]
    pub step_budget: u64,
    #[serde(default = "WatchdogPolicy::default_interval")]
    pub check_interval_ms: u64,
    /// Sleep per formula evaluation; simulates a hanging model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_delay_micros: Option<u64>,
}

impl WatchdogPolicy {
    fn default_timeout() -> f64 {
        60.0
    }
    fn default_budget() -> u64 {
        100_000_000
    }
    fn default_interval() -> u64 {
        250
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.wall_clock_timeout_secs)
    }

    pub fn check_interval(&self) -> Duration {
        Duration::from_millis(self.check_interval_ms)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if !(self.wall_clock_timeout_secs.is_finite() && self.wall_clock_timeout_secs > 0.0)
            || self.step_budget == 0
            || self.check_interval_ms == 0
        {
            return Err(EngineError::BadRequest("watchdog settings must be positive".into()));
        }
        Ok(())
    }
}

impl Default for WatchdogPolicy {
    fn default() -> Self {
        WatchdogPolicy {
            wall_clock_timeout_secs: Self::default_timeout(),
            step_budget: Self::default_budget(),
            check_interval_ms: Self::default_interval(),
            cell_delay_micros: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Jobs executing at once.
    pub workers: usize,
    /// Evaluator sessions per Monte Carlo job.
    pub simulation_threads: usize,
    pub policy: WatchdogPolicy,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            workers: 2,
            simulation_threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            policy: WatchdogPolicy::default(),
        }
    }
}

/// Rows that become one job each. Row `k` (0-based) of a Monte Carlo
/// batch runs with seed `base_seed + k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportBatch {
    pub model_name: String,
    pub rows: Vec<ImportRow>,
    #[serde(default)]
    pub mode: JobMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_spec_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_bindings: Option<MetricBindings>,
    #[serde(default = "yes")]
    pub iteration_table: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportRow {
    pub row_id: String,
    #[serde(default)]
    pub input_bindings: BTreeMap<String, Value>,
}

impl ImportBatch {
    pub fn expand(&self) -> Result<Vec<(String, JobRequest)>, EngineError> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::with_capacity(self.rows.len());
        for (k, row) in self.rows.iter().enumerate() {
            if !seen.insert(&row.row_id) {
                return Err(EngineError::BadRequest(format!("row id `{}` is repeated", row.row_id)));
            }
            let seed = match self.base_seed {
                Some(b) => Some(b.checked_add(k as u64).ok_or_else(|| {
                    EngineError::BadRequest("base_seed + row ordinal overflows".into())
                })?),
                None => None,
            };
            let req = JobRequest {
                model_name: self.model_name.clone(),
                version_selector: VersionSelector::default(),
                input_bindings: row.input_bindings.clone(),
                mode: self.mode,
                seed,
                iterations: self.iterations,
                scenario_spec_ref: self.scenario_spec_ref.clone(),
                metric_bindings: self.metric_bindings.clone(),
                iteration_table: self.iteration_table,
                submitted_by: String::new(),
            };
            req.check_shape()
                .map_err(|e| EngineError::BadRequest(format!("row `{}`: {e}", row.row_id)))?;
            out.push((row.row_id.clone(), req));
        }
        Ok(out)
    }
}

/// Outcome of a standard-test run, with the resulting version status.
pub type TestReport = crate::store::TestReport;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EngineError {
    #[error("{0}")]
    Forbidden(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("model `{0}` has no LIVE version")]
    NoLiveVersion(String),
    #[error("input validation failed")]
    Validation(ValidationReport),
    #[error("{0}")]
    BadRequest(String),
    #[error("job {0} has not finished")]
    NotReady(String),
    #[error("job {} failed: {}", .0.job_id, .0.message)]
    FailedJob(Box<FailureReport>),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Simulation(#[from] MonteCarloError),
    #[error("row `{row_id}`: {error}")]
    InRow {
        row_id: String,
        error: Box<EngineError>,
    },
    #[error("{0}")]
    Internal(String),
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::Forbidden(_) => "FORBIDDEN",
            EngineError::NotFound(_) => "NOT_FOUND",
            EngineError::NoLiveVersion(_) => "NO_LIVE_VERSION",
            EngineError::Validation(_) => "VALIDATION",
            EngineError::BadRequest(_) => "BAD_REQUEST",
            EngineError::NotReady(_) => "NOT_READY",
            EngineError::FailedJob(_) => "FAILED_JOB",
            EngineError::Store(e) => e.code(),
            EngineError::Simulation(e) => e.code(),
            EngineError::InRow { error, .. } => error.code(),
            EngineError::Internal(_) => "INTERNAL",
        }
    }

    /// Structured detail for error envelopes.
    pub fn details(&self) -> serde_json::Value {
        match self {
            EngineError::Validation(r) => serde_json::json!({"violations": r.violations}),
            EngineError::FailedJob(r) => serde_json::to_value(r).unwrap_or_default(),
            EngineError::Simulation(MonteCarloError::Eval { iteration, output, .. }) => {
                serde_json::json!({"iteration": iteration, "output": output})
            }
            EngineError::Simulation(MonteCarloError::NotPd { pivot }) => {
                serde_json::json!({"pivot": pivot})
            }
            EngineError::InRow { row_id, error } => {
                let mut d = error.details();
                if !d.is_object() {
                    d = serde_json::json!({});
                }
                d["row_id"] = row_id.clone().into();
                d
            }
            _ => serde_json::Value::Null,
        }
    }
}
