use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use serde_json::json;

use super::execute::{execute, prepare, run_standard_tests, ModelCache, Prepared};
use super::{
    EngineConfig, EngineError, FailureReport, ImportBatch, JobRequest, JobResult, JobState,
    JobStatus, Progress, TestReport,
};
use crate::montecarlo::MonteCarloError;
use crate::store::{now, Actor, AuditAction, Role, Store};
use crate::workbook::{InputField, Interrupt, Meter, OutputField};

struct Job {
    owner: String,
    prepared: Arc<Prepared>,
    status: JobStatus,
    progress: Arc<AtomicU64>,
    meter: Option<Meter>,
    deadline: Option<Instant>,
    result: Option<Arc<JobResult>>,
    failure: Option<FailureReport>,
    /// Set once the archive is written and the worker has let go.
    finished: bool,
}

impl Job {
    fn snapshot(&self) -> JobStatus {
        let mut s = self.status.clone();
        s.progress.completed = self.progress.load(Ordering::Relaxed).min(s.progress.total);
        s
    }

    fn failure(&self, job_id: &str, state: JobState, code: &str, message: String, iteration: Option<u64>) -> FailureReport {
        FailureReport {
            job_id: job_id.to_string(),
            model_name: self.prepared.version.model_name.clone(),
            version: self.prepared.version.version,
            blob_hash: self.prepared.version.blob_hash.clone(),
            state,
            code: code.to_string(),
            message,
            iteration,
            timestamp: now(),
        }
    }

    fn finish_failed(&mut self, report: FailureReport) {
        self.status.state = report.state;
        self.status.failure_code = Some(report.code.clone());
        self.status.failure_reason = Some(report.message.clone());
        self.status.ended_at = Some(report.timestamp.clone());
        self.failure = Some(report);
    }
}

struct Shared {
    store: Arc<Store>,
    config: EngineConfig,
    cache: ModelCache,
    jobs: Mutex<HashMap<String, Job>>,
    changed: Condvar,
    closing: AtomicBool,
}

impl Shared {
    fn jobs(&self) -> MutexGuard<'_, HashMap<String, Job>> {
        self.jobs.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn run(&self, job_id: &str) {
        let (prepared, meter, progress) = {
            let mut jobs = self.jobs();
            let Some(job) = jobs.get_mut(job_id) else { return };
            if job.status.state != JobState::Queued {
                return;
            }
            let p = &self.config.policy;
            let meter = Meter::new(p.step_budget, p.cell_delay_micros.map(Duration::from_micros));
            job.meter = Some(meter.clone());
            job.deadline = Some(Instant::now() + p.timeout());
            job.status.state = JobState::Running;
            job.status.started_at = Some(now());
            (Arc::clone(&job.prepared), meter, Arc::clone(&job.progress))
        };

        let outcome = catch_unwind(AssertUnwindSafe(|| {
            execute(&prepared, meter, &progress, self.config.simulation_threads)
        }));

        let mut jobs = self.jobs();
        let job = jobs.get_mut(job_id).expect("jobs are never removed");
        job.meter = None;
        job.deadline = None;
        let owner = job.owner.clone();
        let result = match outcome {
            _ if job.status.state == JobState::TimedOut => Err(job.failure.clone().expect("set with state")),
            Ok(Ok(body)) => Ok(JobResult {
                job_id: job_id.to_string(),
                model_name: prepared.version.model_name.clone(),
                version: prepared.version.version,
                timestamp: now(),
                body,
            }),
            Ok(Err(e)) => {
                let (state, code) = match &e {
                    MonteCarloError::Interrupted(Interrupt::BudgetExceeded(_)) => (JobState::TimedOut, "BUDGET"),
                    MonteCarloError::Interrupted(Interrupt::Cancelled) => (JobState::TimedOut, "TIMED_OUT"),
                    other => (JobState::Failed, other.code()),
                };
                let iteration = match &e {
                    MonteCarloError::Eval { iteration, .. } => Some(*iteration),
                    _ => None,
                };
                Err(job.failure(job_id, state, code, e.to_string(), iteration))
            }
            Err(_) => Err(job.failure(job_id, JobState::Failed, "INTERNAL", "worker panicked".into(), None)),
        };
        drop(jobs);

        // Archive before anything becomes visible.
        let inputs = prepared.inputs_doc();
        let archived = match &result {
            Ok(r) => self.store.archive_run_artifact(job_id, &prepared.version, &inputs, r, true, &owner),
            Err(f) => self.store.archive_run_artifact(job_id, &prepared.version, &inputs, f, false, &owner),
        };

        let mut jobs = self.jobs();
        let job = jobs.get_mut(job_id).expect("jobs are never removed");
        match (result, archived) {
            (Ok(r), Ok(_)) => {
                job.status.state = JobState::Succeeded;
                job.status.ended_at = Some(r.timestamp.clone());
                job.result = Some(Arc::new(r));
            }
            (Err(f), Ok(_)) => job.finish_failed(f),
            (_, Err(e)) => {
                let f = job.failure(job_id, JobState::Failed, "INTERNAL", format!("archiving failed: {e}"), None);
                job.finish_failed(f);
            }
        }
        job.finished = true;
        drop(jobs);
        self.changed.notify_all();
    }

    /// Cancels every running job past its deadline and marks it TIMED_OUT.
    fn sweep(&self) {
        let now_i = Instant::now();
        let mut jobs = self.jobs();
        let mut tripped = false;
        for (id, job) in jobs.iter_mut() {
            if job.status.state != JobState::Running || job.deadline.is_none_or(|d| d > now_i) {
                continue;
            }
            if let Some(m) = &job.meter {
                m.cancel();
            }
            let secs = self.config.policy.wall_clock_timeout_secs;
            let report = job.failure(
                id,
                JobState::TimedOut,
                "TIMED_OUT",
                format!("wall-clock timeout of {secs} s exceeded"),
                None,
            );
            job.finish_failed(report);
            tripped = true;
        }
        drop(jobs);
        if tripped {
            self.changed.notify_all();
        }
    }
}

/// Job queue with a fixed worker pool and a watchdog thread. Dropping the
/// engine cancels running jobs and abandons queued ones.
pub struct Engine {
    shared: Arc<Shared>,
    queue: Mutex<Option<Sender<String>>>,
    stop_watchdog: Option<Sender<()>>,
    threads: Vec<JoinHandle<()>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.shared.config).finish()
    }
}

impl Engine {
    pub fn new(store: Arc<Store>, config: EngineConfig) -> Result<Engine, EngineError> {
        config.policy.validate()?;
        if config.workers == 0 || config.simulation_threads == 0 {
            return Err(EngineError::BadRequest("worker counts must be positive".into()));
        }
        let shared = Arc::new(Shared {
            store,
            config,
            cache: ModelCache::default(),
            jobs: Mutex::new(HashMap::new()),
            changed: Condvar::new(),
            closing: AtomicBool::new(false),
        });
        let (tx, rx) = crossbeam_channel::unbounded::<String>();
        let mut threads = Vec::new();
        for i in 0..shared.config.workers {
            let (shared, rx) = (Arc::clone(&shared), rx.clone());
            threads.push(
                std::thread::Builder::new()
                    .name(format!("esp-worker-{i}"))
                    .spawn(move || worker(&shared, &rx))
                    .map_err(|e| EngineError::Internal(e.to_string()))?,
            );
        }
        let (stop_tx, stop_rx) = crossbeam_channel::bounded::<()>(0);
        let wd = Arc::clone(&shared);
        threads.push(
            std::thread::Builder::new()
                .name("esp-watchdog".into())
                .spawn(move || loop {
                    match stop_rx.recv_timeout(wd.config.policy.check_interval()) {
                        Err(RecvTimeoutError::Timeout) => wd.sweep(),
                        _ => break,
                    }
                })
                .map_err(|e| EngineError::Internal(e.to_string()))?,
        );
        Ok(Engine {
            shared,
            queue: Mutex::new(Some(tx)),
            stop_watchdog: Some(stop_tx),
            threads,
        })
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.shared.store
    }

    pub fn config(&self) -> &EngineConfig {
        &self.shared.config
    }

    /// Validates and queues a job. The JOB_SUBMIT audit record is written
    /// before the id is returned.
    pub fn submit(&self, request: &JobRequest, actor: &Actor) -> Result<String, EngineError> {
        let prepared = prepare(&self.shared.store, &self.shared.cache, request, actor)?;
        self.enqueue(prepared, actor)
    }

    /// Submits one job per row. Every row is validated before any is queued.
    pub fn submit_batch(&self, batch: &ImportBatch, actor: &Actor) -> Result<Vec<(String, String)>, EngineError> {
        let mut prepared = Vec::new();
        for (row_id, req) in batch.expand()? {
            let p = prepare(&self.shared.store, &self.shared.cache, &req, actor).map_err(|e| {
                EngineError::InRow {
                    row_id: row_id.clone(),
                    error: Box::new(e),
                }
            })?;
            prepared.push((row_id, p));
        }
        prepared
            .into_iter()
            .map(|(row_id, p)| Ok((row_id, self.enqueue(p, actor)?)))
            .collect()
    }

    fn enqueue(&self, prepared: Prepared, actor: &Actor) -> Result<String, EngineError> {
        let job_id = format!("{:032x}", rand::random::<u128>());
        let v = &prepared.version;
        let mut payload = json!({
            "job_id": job_id,
            "model_name": v.model_name,
            "version": v.version,
            "blob_hash": v.blob_hash,
            "inputs_hash": crate::canonical::digest(&prepared.inputs_doc()),
        });
        if let Some(p) = &prepared.plan {
            payload["seed"] = p.seed.into();
            payload["iterations"] = p.iterations.into();
        }
        let status = JobStatus {
            job_id: job_id.clone(),
            model_name: v.model_name.clone(),
            version: v.version,
            state: JobState::Queued,
            progress: Progress {
                completed: 0,
                total: prepared.total(),
            },
            enqueued_at: now(),
            started_at: None,
            ended_at: None,
            failure_reason: None,
            failure_code: None,
        };
        let queue = self.queue.lock().unwrap();
        let Some(tx) = queue.as_ref() else {
            return Err(EngineError::Internal("engine is shutting down".into()));
        };
        self.shared
            .store
            .append_audit(&actor.user_id, AuditAction::JobSubmit, &job_id, payload)?;
        self.shared.jobs().insert(
            job_id.clone(),
            Job {
                owner: actor.user_id.clone(),
                prepared: Arc::new(prepared),
                status,
                progress: Arc::new(AtomicU64::new(0)),
                meter: None,
                deadline: None,
                result: None,
                failure: None,
                finished: false,
            },
        );
        tx.send(job_id.clone())
            .map_err(|_| EngineError::Internal("worker pool is gone".into()))?;
        Ok(job_id)
    }

    fn visible<'a>(&self, jobs: &'a HashMap<String, Job>, job_id: &str, actor: &Actor) -> Result<&'a Job, EngineError> {
        let job = jobs
            .get(job_id)
            .ok_or_else(|| EngineError::NotFound(format!("job {job_id}")))?;
        if actor.role != Role::Superuser && job.owner != actor.user_id {
            return Err(EngineError::Forbidden(format!(
                "job {job_id} belongs to another user"
            )));
        }
        Ok(job)
    }

    pub fn status(&self, job_id: &str, actor: &Actor) -> Result<JobStatus, EngineError> {
        let jobs = self.shared.jobs();
        Ok(self.visible(&jobs, job_id, actor)?.snapshot())
    }

    /// The result of a SUCCEEDED job. Failed jobs yield their failure
    /// report as FAILED_JOB; unfinished jobs NOT_READY.
    pub fn result(&self, job_id: &str, actor: &Actor) -> Result<Arc<JobResult>, EngineError> {
        let jobs = self.shared.jobs();
        let job = self.visible(&jobs, job_id, actor)?;
        if let Some(r) = &job.result {
            return Ok(Arc::clone(r));
        }
        match &job.failure {
            Some(f) => Err(EngineError::FailedJob(Box::new(f.clone()))),
            None => Err(EngineError::NotReady(job_id.to_string())),
        }
    }

    /// Jobs visible to `actor`, oldest first.
    pub fn list(&self, actor: &Actor) -> Vec<JobStatus> {
        let jobs = self.shared.jobs();
        let mut out: Vec<JobStatus> = jobs
            .values()
            .filter(|j| actor.role == Role::Superuser || j.owner == actor.user_id)
            .map(Job::snapshot)
            .collect();
        out.sort_by(|a, b| a.enqueued_at.cmp(&b.enqueued_at).then(a.job_id.cmp(&b.job_id)));
        out
    }

    /// Blocks until the job is finished and archived, or `timeout` passes.
    pub fn wait(&self, job_id: &str, timeout: Duration) -> Result<JobStatus, EngineError> {
        let deadline = Instant::now().checked_add(timeout);
        let mut jobs = self.shared.jobs();
        loop {
            let job = jobs
                .get(job_id)
                .ok_or_else(|| EngineError::NotFound(format!("job {job_id}")))?;
            if job.finished {
                return Ok(job.snapshot());
            }
            let left = match deadline {
                Some(d) => d.saturating_duration_since(Instant::now()),
                None => Duration::from_secs(3600),
            };
            if left.is_zero() {
                return Err(EngineError::NotReady(job_id.to_string()));
            }
            jobs = self
                .shared
                .changed
                .wait_timeout(jobs, left)
                .unwrap_or_else(|p| p.into_inner())
                .0;
        }
    }

    /// Submits, waits and returns the result.
    pub fn run(&self, request: &JobRequest, actor: &Actor) -> Result<Arc<JobResult>, EngineError> {
        let id = self.submit(request, actor)?;
        // the watchdog bounds the wait
        self.wait(&id, Duration::MAX)?;
        self.result(&id, actor)
    }

    pub fn run_standard_tests(&self, model_name: &str, version: u32, actor: &Actor) -> Result<TestReport, EngineError> {
        run_standard_tests(
            &self.shared.store,
            &self.shared.cache,
            &self.shared.config.policy,
            self.shared.config.simulation_threads,
            model_name,
            version,
            actor,
        )
    }

    /// Input and output schemas of the LIVE version.
    pub fn live_schema(&self, model_name: &str) -> Result<(crate::store::ModelVersion, Vec<InputField>, Vec<OutputField>), EngineError> {
        let v = self
            .shared
            .store
            .live_version(model_name)?
            .ok_or_else(|| EngineError::NoLiveVersion(model_name.to_string()))?;
        let m = self.shared.cache.get(&self.shared.store, &v.blob_hash)?;
        let (i, o) = (m.model().input_schema.clone(), m.model().output_schema.clone());
        Ok((v, i, o))
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.shared.closing.store(true, Ordering::SeqCst);
        self.queue.lock().unwrap_or_else(|p| p.into_inner()).take();
        self.stop_watchdog.take();
        for job in self.shared.jobs().values() {
            if let Some(m) = &job.meter {
                m.cancel();
            }
        }
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

fn worker(shared: &Shared, rx: &Receiver<String>) {
    while let Ok(id) = rx.recv() {
        if shared.closing.load(Ordering::SeqCst) {
            break;
        }
        shared.run(&id);
    }
}
