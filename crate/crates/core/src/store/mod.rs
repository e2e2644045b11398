//! Versioned model repository with a test-gated lifecycle, run archives and
//! a hash-chained audit log.
//!
//! Layout under the store root:
//!
//! ```text
//! blobs/<sha256>       canonical workbook documents
//! scenarios/<sha256>   canonical scenario specs
//! runs/<job_id>.json   archived run results or failure reports
//! meta                 versions, tests and archive index (JSON, replaced atomically)
//! audit.log            length-prefixed canonical audit records
//! ```

mod audit;

pub use audit::{verify_audit_file, AuditAction, AuditRecord, AuditVerification, GENESIS_HASH};

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::canonical;
use crate::montecarlo::{MetricBindings, ScenarioSpec};
use crate::workbook::{parse_workbook, valid_model_name, Value, WorkbookError, WorkbookModel};
use audit::AuditLog;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StoreError {
    #[error("{0}")]
    Forbidden(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("{0}")]
    Duplicate(String),
    #[error("version {0} can no longer be changed")]
    Immutable(String),
    #[error("version {0} has not passed its standard tests")]
    NotTested(String),
    #[error("version {0} has no standard tests")]
    NoTests(String),
    #[error("{0}")]
    Schema(String),
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Workbook(#[from] WorkbookError),
    #[error("audit log is corrupt: {0}")]
    Corrupt(String),
    #[error("storage failure: {0}")]
    Io(String),
}

impl StoreError {
    pub fn code(&self) -> &'static str {
        match self {
            StoreError::Forbidden(_) => "FORBIDDEN",
            StoreError::NotFound(_) => "NOT_FOUND",
            StoreError::Duplicate(_) => "DUPLICATE",
            StoreError::Immutable(_) => "IMMUTABLE",
            StoreError::NotTested(_) => "NOT_TESTED",
            StoreError::NoTests(_) => "NO_TESTS",
            StoreError::Schema(_) => "SCHEMA",
            StoreError::BadRequest(_) => "BAD_REQUEST",
            StoreError::Workbook(e) => e.code(),
            StoreError::Corrupt(_) => "CORRUPT",
            StoreError::Io(_) => "INTERNAL",
        }
    }
}

impl From<std::io::Error> for StoreError {
    fn from(e: std::io::Error) -> Self {
        StoreError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Role {
    Superuser,
    Enduser,
    Admin,
}

/// An authenticated caller.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actor {
    pub user_id: String,
    pub role: Role,
}

impl Actor {
    pub fn new(user_id: &str, role: Role) -> Actor {
        Actor {
            user_id: user_id.to_string(),
            role,
        }
    }

    pub fn require(&self, allowed: &[Role], what: &str) -> Result<(), StoreError> {
        if allowed.contains(&self.role) {
            Ok(())
        } else {
            Err(StoreError::Forbidden(format!(
                "{} `{}` may not {what}",
                role_name(self.role),
                self.user_id
            )))
        }
    }
}

fn role_name(r: Role) -> &'static str {
    match r {
        Role::Superuser => "superuser",
        Role::Enduser => "end-user",
        Role::Admin => "admin",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Draft,
    Tested,
    Live,
    Retired,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub model_name: String,
    pub version: u32,
    pub blob_hash: String,
    pub status: Status,
    pub author: String,
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_version: Option<u32>,
}

fn default_tolerance() -> f64 {
    1e-9
}

/// Input/output data set a version must reproduce before going live. With
/// `seed` set it is a simulation test whose expected keys are metric names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardTest {
    pub test_id: String,
    #[serde(default)]
    pub input_bindings: BTreeMap<String, Value>,
    pub expected_outputs: BTreeMap<String, Value>,
    #[serde(default = "default_tolerance")]
    pub numeric_tolerance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_spec_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_bindings: Option<MetricBindings>,
}

impl StandardTest {
    pub fn is_simulation(&self) -> bool {
        self.seed.is_some()
    }
}

/// Metric names a simulation test may assert on.
pub fn metric_names(bindings: &MetricBindings) -> Vec<String> {
    let mut names: Vec<String> = [
        "iterations",
        "defaults",
        "pd",
        "pd_stderr",
        "lgd",
        "expected_loss",
        "min_loss",
        "max_loss",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(bindings.quantile_levels.iter().map(|p| format!("loss_quantile_{p}")));
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub name: String,
    pub expected: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actual: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test_id: String,
    pub passed: bool,
    pub mismatches: Vec<Mismatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub model_name: String,
    pub version: u32,
    pub blob_hash: String,
    pub passed: bool,
    pub outcomes: Vec<TestOutcome>,
    pub status: Status,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArchive {
    pub job_id: String,
    pub model_name: String,
    pub version: u32,
    pub blob_hash: String,
    pub inputs_hash: String,
    pub results_hash: String,
    pub succeeded: bool,
    pub timestamp: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
struct Meta {
    models: BTreeMap<String, Vec<Versioned>>,
    archives: BTreeMap<String, RunArchive>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Versioned {
    version: ModelVersion,
    tests: Vec<StandardTest>,
}

struct Inner {
    meta: Meta,
    audit: AuditLog,
}

/// UTC time in RFC 3339 with microseconds.
pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true)
}

/// Handle to an on-disk store. Reads run concurrently; every write goes
/// through one lock so version and audit sequence numbers stay gap-free.
pub struct Store {
    root: PathBuf,
    inner: RwLock<Inner>,
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store").field("root", &self.root).finish()
    }
}

impl Store {
    /// Opens or creates a store. A corrupt audit log does not prevent
    /// opening, but every later write fails with CORRUPT.
    pub fn open(root: impl AsRef<Path>) -> Result<Store, StoreError> {
        let root = root.as_ref().to_path_buf();
        for d in ["blobs", "scenarios", "runs"] {
            fs::create_dir_all(root.join(d))?;
        }
        let meta = match fs::read(root.join("meta")) {
            Ok(b) => serde_json::from_slice(&b)
                .map_err(|e| StoreError::Corrupt(format!("unreadable meta: {e}")))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Meta::default(),
            Err(e) => return Err(e.into()),
        };
        let audit = AuditLog::open(root.join("audit.log"))?;
        Ok(Store {
            root,
            inner: RwLock::new(Inner { meta, audit }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn audit_path(&self) -> PathBuf {
        self.root.join("audit.log")
    }

    fn read(&self) -> RwLockReadGuard<'_, Inner> {
        self.inner.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Inner> {
        self.inner.write().unwrap_or_else(|p| p.into_inner())
    }

    fn save_meta(&self, meta: &Meta) -> Result<(), StoreError> {
        write_atomic(&self.root.join("meta"), &canonical::to_vec(meta))
    }

    // ---- models ---------------------------------------------------------

    pub fn upload_version(
        &self,
        model_name: &str,
        workbook_bytes: &[u8],
        actor: &Actor,
    ) -> Result<ModelVersion, StoreError> {
        actor.require(&[Role::Superuser], "upload models")?;
        if !valid_model_name(model_name) {
            return Err(StoreError::BadRequest(format!("invalid model name `{model_name}`")));
        }
        let model = parse_workbook(workbook_bytes)?;
        let blob = model.canonical_bytes();
        let blob_hash = canonical::sha256_hex(&blob);

        let mut inner = self.write();
        let versions = inner.meta.models.get(model_name);
        let latest = versions.and_then(|v| v.last());
        if latest.is_some_and(|l| l.version.blob_hash == blob_hash) {
            return Err(StoreError::Duplicate(format!(
                "identical to the latest version of `{model_name}`"
            )));
        }
        let version = ModelVersion {
            model_name: model_name.to_string(),
            version: latest.map_or(1, |l| l.version.version + 1),
            blob_hash: blob_hash.clone(),
            status: Status::Draft,
            author: actor.user_id.clone(),
            created_at: now(),
            parent_version: latest.map(|l| l.version.version),
        };
        let blob_path = self.root.join("blobs").join(&blob_hash);
        if !blob_path.exists() {
            write_atomic(&blob_path, &blob)?;
        }
        let mut meta = inner.meta.clone();
        meta.models.entry(model_name.to_string()).or_default().push(Versioned {
            version: version.clone(),
            tests: Vec::new(),
        });
        inner.audit.append(
            &actor.user_id,
            AuditAction::Upload,
            &format!("{model_name}/{}", version.version),
            json!({"model_name": model_name, "version": version.version, "blob_hash": blob_hash}),
        )?;
        self.save_meta(&meta)?;
        inner.meta = meta;
        Ok(version)
    }

    pub fn download_version(
        &self,
        model_name: &str,
        version: u32,
        actor: &Actor,
    ) -> Result<Vec<u8>, StoreError> {
        actor.require(&[Role::Superuser], "download workbooks")?;
        let mut inner = self.write();
        let v = find_version(&inner.meta, model_name, version)?.version.clone();
        let bytes = fs::read(self.root.join("blobs").join(&v.blob_hash))?;
        inner.audit.append(
            &actor.user_id,
            AuditAction::Download,
            &format!("{model_name}/{version}"),
            json!({"model_name": model_name, "version": version, "blob_hash": v.blob_hash}),
        )?;
        Ok(bytes)
    }

    pub fn list_models(&self) -> Vec<String> {
        self.read().meta.models.keys().cloned().collect()
    }

    pub fn versions(&self, model_name: &str) -> Result<Vec<ModelVersion>, StoreError> {
        let inner = self.read();
        let vs = inner
            .meta
            .models
            .get(model_name)
            .ok_or_else(|| StoreError::NotFound(format!("model `{model_name}`")))?;
        Ok(vs.iter().map(|v| v.version.clone()).collect())
    }

    pub fn version(&self, model_name: &str, version: u32) -> Result<ModelVersion, StoreError> {
        Ok(find_version(&self.read().meta, model_name, version)?.version.clone())
    }

    pub fn live_version(&self, model_name: &str) -> Result<Option<ModelVersion>, StoreError> {
        Ok(self
            .versions(model_name)?
            .into_iter()
            .find(|v| v.status == Status::Live))
    }

    pub fn tests(&self, model_name: &str, version: u32) -> Result<Vec<StandardTest>, StoreError> {
        Ok(find_version(&self.read().meta, model_name, version)?.tests.clone())
    }

    /// Parsed workbook for a stored blob. Internal to the engine: never
    /// hand the result to an end user.
    pub fn load_blob(&self, blob_hash: &str) -> Result<WorkbookModel, StoreError> {
        if blob_hash.len() != 64 || !blob_hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(StoreError::NotFound(format!("blob {blob_hash}")));
        }
        let bytes = fs::read(self.root.join("blobs").join(blob_hash))
            .map_err(|_| StoreError::NotFound(format!("blob {blob_hash}")))?;
        Ok(parse_workbook(&bytes)?)
    }

    pub fn attach_standard_tests(
        &self,
        model_name: &str,
        version: u32,
        tests: Vec<StandardTest>,
        actor: &Actor,
    ) -> Result<usize, StoreError> {
        actor.require(&[Role::Superuser], "attach tests")?;
        let mut inner = self.write();
        let entry = find_version(&inner.meta, model_name, version)?;
        if matches!(entry.version.status, Status::Live | Status::Retired) {
            return Err(StoreError::Immutable(format!("{model_name}/{version}")));
        }
        let model = self.load_blob(&entry.version.blob_hash)?;
        self.check_tests(&model, &tests)?;

        let mut meta = inner.meta.clone();
        let v = find_version_mut(&mut meta, model_name, version);
        v.tests = tests.clone();
        v.version.status = Status::Draft;
        let ids: Vec<&str> = tests.iter().map(|t| t.test_id.as_str()).collect();
        inner.audit.append(
            &actor.user_id,
            AuditAction::AttachTests,
            &format!("{model_name}/{version}"),
            json!({"model_name": model_name, "version": version,
                   "tests_hash": canonical::digest(&tests), "test_ids": ids}),
        )?;
        self.save_meta(&meta)?;
        inner.meta = meta;
        Ok(tests.len())
    }

    fn check_tests(&self, model: &WorkbookModel, tests: &[StandardTest]) -> Result<(), StoreError> {
        let mut ids = std::collections::BTreeSet::new();
        for t in tests {
            if !ids.insert(&t.test_id) {
                return Err(StoreError::Schema(format!("duplicate test id `{}`", t.test_id)));
            }
            if !(t.numeric_tolerance >= 0.0 && t.numeric_tolerance.is_finite()) {
                return Err(StoreError::Schema(format!("test `{}` has a bad tolerance", t.test_id)));
            }
            for name in t.input_bindings.keys() {
                if model.input_field(name).is_none() {
                    return Err(StoreError::Schema(format!(
                        "test `{}` binds unknown input `{name}`",
                        t.test_id
                    )));
                }
            }
            let allowed: Vec<String> = if t.is_simulation() {
                let (Some(_), Some(spec), Some(mb)) =
                    (t.iterations, &t.scenario_spec_ref, &t.metric_bindings)
                else {
                    return Err(StoreError::Schema(format!(
                        "simulation test `{}` needs iterations, scenario_spec_ref and metric_bindings",
                        t.test_id
                    )));
                };
                self.scenario(spec)?;
                mb.validate(&model.output_schema)
                    .map_err(|e| StoreError::Schema(format!("test `{}`: {e}", t.test_id)))?;
                metric_names(mb)
            } else {
                if t.iterations.is_some() || t.scenario_spec_ref.is_some() || t.metric_bindings.is_some() {
                    return Err(StoreError::Schema(format!(
                        "test `{}` has simulation parameters but no seed",
                        t.test_id
                    )));
                }
                model.output_schema.iter().map(|o| o.name.clone()).collect()
            };
            for name in t.expected_outputs.keys() {
                if !allowed.contains(name) {
                    return Err(StoreError::Schema(format!(
                        "test `{}` expects `{name}`, which the model does not produce",
                        t.test_id
                    )));
                }
            }
        }
        Ok(())
    }

    /// Records a completed test run. Only the engine calls this, after
    /// executing every attached test, so TESTED cannot be granted any
    /// other way.
    pub(crate) fn record_test_run(
        &self,
        report: &TestReport,
        tests_hash: &str,
        actor: &Actor,
    ) -> Result<Status, StoreError> {
        let mut inner = self.write();
        let entry = find_version(&inner.meta, &report.model_name, report.version)?;
        if canonical::digest(&entry.tests) != tests_hash
            || entry.version.blob_hash != report.blob_hash
        {
            return Err(StoreError::BadRequest(
                "tests changed while the run was in progress".into(),
            ));
        }
        let mut meta = inner.meta.clone();
        let v = find_version_mut(&mut meta, &report.model_name, report.version);
        v.version.status = match (v.version.status, report.passed) {
            (Status::Draft | Status::Tested, true) => Status::Tested,
            (Status::Draft | Status::Tested, false) => Status::Draft,
            (other, _) => other,
        };
        let status = v.version.status;
        let outcomes: Vec<_> = report
            .outcomes
            .iter()
            .map(|o| json!({"test_id": o.test_id, "passed": o.passed}))
            .collect();
        inner.audit.append(
            &actor.user_id,
            AuditAction::TestRun,
            &format!("{}/{}", report.model_name, report.version),
            json!({"model_name": report.model_name, "version": report.version,
                   "blob_hash": report.blob_hash, "tests_hash": tests_hash,
                   "all_passed": report.passed, "outcomes": outcomes}),
        )?;
        self.save_meta(&meta)?;
        inner.meta = meta;
        Ok(status)
    }

    pub fn promote(&self, model_name: &str, version: u32, actor: &Actor) -> Result<ModelVersion, StoreError> {
        actor.require(&[Role::Superuser], "promote models")?;
        let mut inner = self.write();
        let entry = find_version(&inner.meta, model_name, version)?;
        match entry.version.status {
            Status::Tested => {}
            Status::Draft => return Err(StoreError::NotTested(format!("{model_name}/{version}"))),
            Status::Live | Status::Retired => {
                return Err(StoreError::Immutable(format!("{model_name}/{version}")))
            }
        }
        let mut meta = inner.meta.clone();
        let mut retired = None;
        for v in meta.models.get_mut(model_name).expect("found above") {
            if v.version.status == Status::Live {
                v.version.status = Status::Retired;
                retired = Some(v.version.version);
            }
        }
        let v = find_version_mut(&mut meta, model_name, version);
        v.version.status = Status::Live;
        let promoted = v.version.clone();
        inner.audit.append(
            &actor.user_id,
            AuditAction::Promote,
            &format!("{model_name}/{version}"),
            json!({"model_name": model_name, "version": version,
                   "blob_hash": promoted.blob_hash, "retired": retired}),
        )?;
        self.save_meta(&meta)?;
        inner.meta = meta;
        Ok(promoted)
    }

    pub fn retire(&self, model_name: &str, version: u32, actor: &Actor) -> Result<ModelVersion, StoreError> {
        actor.require(&[Role::Superuser], "retire models")?;
        let mut inner = self.write();
        let entry = find_version(&inner.meta, model_name, version)?;
        if entry.version.status != Status::Live {
            return Err(StoreError::BadRequest(format!(
                "only a LIVE version can be retired; {model_name}/{version} is {:?}",
                entry.version.status
            )));
        }
        let mut meta = inner.meta.clone();
        let v = find_version_mut(&mut meta, model_name, version);
        v.version.status = Status::Retired;
        let out = v.version.clone();
        inner.audit.append(
            &actor.user_id,
            AuditAction::Retire,
            &format!("{model_name}/{version}"),
            json!({"model_name": model_name, "version": version}),
        )?;
        self.save_meta(&meta)?;
        inner.meta = meta;
        Ok(out)
    }

    // ---- scenarios ------------------------------------------------------

    /// Stores a validated scenario spec under its content hash. Storing
    /// an existing spec again is a no-op.
    pub fn put_scenario(&self, spec: &ScenarioSpec, actor: &Actor) -> Result<String, StoreError> {
        actor.require(&[Role::Superuser], "upload scenarios")?;
        spec.validate()
            .map_err(|e| StoreError::Schema(format!("scenario: {e}")))?;
        let bytes = spec.canonical_bytes();
        let hash = canonical::sha256_hex(&bytes);
        let path = self.root.join("scenarios").join(&hash);
        let mut inner = self.write();
        if path.exists() {
            return Ok(hash);
        }
        write_atomic(&path, &bytes)?;
        inner.audit.append(
            &actor.user_id,
            AuditAction::Upload,
            &format!("scenario:{hash}"),
            json!({"scenario_hash": hash, "variables": spec.variables.len(), "horizon": spec.horizon}),
        )?;
        Ok(hash)
    }

    pub fn scenario(&self, hash: &str) -> Result<ScenarioSpec, StoreError> {
        if hash.len() != 64 || !hash.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(StoreError::NotFound(format!("scenario {hash}")));
        }
        let bytes = fs::read(self.root.join("scenarios").join(hash))
            .map_err(|_| StoreError::NotFound(format!("scenario {hash}")))?;
        ScenarioSpec::from_json(&bytes).map_err(|e| StoreError::Corrupt(e.to_string()))
    }

    // ---- audit and archives --------------------------------------------

    pub fn append_audit(
        &self,
        actor: &str,
        action: AuditAction,
        subject: &str,
        payload: serde_json::Value,
    ) -> Result<AuditRecord, StoreError> {
        self.write().audit.append(actor, action, subject, payload)
    }

    pub fn verify_audit_chain(&self) -> Result<AuditVerification, StoreError> {
        let inner = self.read();
        Ok(inner.audit.read_all()?.verification())
    }

    pub fn audit_len(&self) -> u64 {
        self.read().audit.len()
    }

    /// Records `offset..offset+limit` (0-based) of the valid chain prefix.
    pub fn audit_records(&self, actor: &Actor, offset: usize, limit: usize) -> Result<Vec<AuditRecord>, StoreError> {
        actor.require(&[Role::Admin, Role::Superuser], "read the audit log")?;
        let scan = self.read().audit.read_all()?;
        Ok(scan.records.into_iter().skip(offset).take(limit).collect())
    }

    /// Persists the canonical result (or failure report) of a finished job
    /// and appends JOB_COMPLETE or JOB_FAIL.
    #[allow(clippy::too_many_arguments)]
    pub fn archive_run_artifact<I: Serialize, R: Serialize>(
        &self,
        job_id: &str,
        model: &ModelVersion,
        inputs: &I,
        results: &R,
        succeeded: bool,
        actor: &str,
    ) -> Result<RunArchive, StoreError> {
        if job_id.is_empty() || !job_id.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_') {
            return Err(StoreError::BadRequest(format!("invalid job id `{job_id}`")));
        }
        let results_bytes = canonical::to_vec(results);
        let mut inner = self.write();
        if inner.meta.archives.contains_key(job_id) {
            return Err(StoreError::Duplicate(format!("job {job_id} is already archived")));
        }
        if !self.root.join("blobs").join(&model.blob_hash).exists() {
            return Err(StoreError::NotFound(format!("blob {}", model.blob_hash)));
        }
        let archive = RunArchive {
            job_id: job_id.to_string(),
            model_name: model.model_name.clone(),
            version: model.version,
            blob_hash: model.blob_hash.clone(),
            inputs_hash: canonical::digest(inputs),
            results_hash: canonical::sha256_hex(&results_bytes),
            succeeded,
            timestamp: now(),
        };
        write_atomic(&self.root.join("runs").join(format!("{job_id}.json")), &results_bytes)?;
        let mut meta = inner.meta.clone();
        meta.archives.insert(job_id.to_string(), archive.clone());
        let action = if succeeded { AuditAction::JobComplete } else { AuditAction::JobFail };
        inner.audit.append(actor, action, job_id, serde_json::to_value(&archive).expect("serializable"))?;
        self.save_meta(&meta)?;
        inner.meta = meta;
        Ok(archive)
    }

    pub fn archive(&self, job_id: &str) -> Option<RunArchive> {
        self.read().meta.archives.get(job_id).cloned()
    }

    pub fn archives(&self) -> Vec<RunArchive> {
        self.read().meta.archives.values().cloned().collect()
    }

    /// Archived canonical result bytes of a job.
    pub fn archived_result(&self, job_id: &str) -> Result<Vec<u8>, StoreError> {
        if self.archive(job_id).is_none() {
            return Err(StoreError::NotFound(format!("archive for job {job_id}")));
        }
        Ok(fs::read(self.root.join("runs").join(format!("{job_id}.json")))?)
    }
}

fn find_version<'a>(meta: &'a Meta, name: &str, version: u32) -> Result<&'a Versioned, StoreError> {
    meta.models
        .get(name)
        .ok_or_else(|| StoreError::NotFound(format!("model `{name}`")))?
        .iter()
        .find(|v| v.version.version == version)
        .ok_or_else(|| StoreError::NotFound(format!("version {version} of `{name}`")))
}

fn find_version_mut<'a>(meta: &'a mut Meta, name: &str, version: u32) -> &'a mut Versioned {
    meta.models
        .get_mut(name)
        .and_then(|vs| vs.iter_mut().find(|v| v.version.version == version))
        .expect("version checked before mutation")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    {
        use std::io::Write;
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_data()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
