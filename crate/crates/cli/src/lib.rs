//! The `esp` operator tool.
//!
//! Exit codes: 0 success, 1 operation error, 2 usage error.

pub mod bench;
pub mod samples;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use esp_core::engine::{Engine, EngineError, JobRequest, VersionSelector};
use esp_core::montecarlo::{MetricBindings, ScenarioSpec};
use esp_core::store::{verify_audit_file, Actor, Role, Store, StoreError};
use esp_core::workbook::{parse_workbook, valid_model_name, Value, WorkbookModel};
use esp_server::Config;
use serde::Serialize;
use serde_json::{json, Value as Json};

#[derive(Debug, Parser)]
#[command(name = "esp", version, about = "Serve, administer and desk-test governed spreadsheet models")]
pub struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    pub json: bool,
    /// Configuration file (defaults to $ESP_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Upload a workbook as a new DRAFT version.
    Upload {
        model: String,
        file: PathBuf,
        #[command(flatten)]
        remote: Remote,
    },
    /// Promote a TESTED version to LIVE.
    Promote {
        model: String,
        version: u32,
        #[command(flatten)]
        remote: Remote,
    },
    /// Attach or run standard tests.
    #[command(subcommand)]
    Tests(TestsCommand),
    /// Execute a workbook locally through the engine.
    Run(RunArgs),
    /// Audit log tools.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Measure recalculation and simulation throughput.
    Bench(BenchArgs),
    /// Write the sample workbooks and request files.
    Samples {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Remote {
    #[arg(long, env = "ESP_TOKEN", hide_env_values = true)]
    pub token: String,
    /// Base URL; defaults to the configured listen address.
    #[arg(long, env = "ESP_SERVER")]
    pub server: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum TestsCommand {
    /// Replace the standard tests of a version.
    Attach {
        model: String,
        version: u32,
        file: PathBuf,
        #[command(flatten)]
        remote: Remote,
    },
    /// Run the standard tests of a version; exits 1 if any fail.
    Run {
        model: String,
        version: u32,
        #[command(flatten)]
        remote: Remote,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Verify the hash chain of a store's audit log offline.
    Verify {
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Workbook file.
    pub model: PathBuf,
    /// JSON object of input bindings.
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    #[arg(long, requires_all = ["iterations", "scenario", "metrics"])]
    pub seed: Option<u64>,
    #[arg(long, requires_all = ["seed", "scenario", "metrics"])]
    pub iterations: Option<u64>,
    /// Scenario specification (JSON).
    #[arg(long, requires_all = ["seed", "iterations", "metrics"])]
    pub scenario: Option<PathBuf>,
    /// Metric bindings (JSON).
    #[arg(long, requires_all = ["seed", "iterations", "scenario"])]
    pub metrics: Option<PathBuf>,
    /// Leave the per-iteration table out of the result.
    #[arg(long)]
    pub no_iteration_table: bool,
    /// Store directory; a temporary one by default.
    #[arg(long)]
    pub store: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Monte Carlo iterations with --scenario, else recalculation rounds.
    #[arg(long, default_value_t = 1000)]
    pub iterations: u64,
    #[arg(long, requires = "metrics")]
    pub scenario: Option<PathBuf>,
    #[arg(long, requires = "scenario")]
    pub metrics: Option<PathBuf>,
    #[arg(long)]
    pub inputs: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Recalculation rounds when a scenario is given.
    #[arg(long, default_value_t = 500)]
    pub rounds: usize,
}

/// An operation failure: printed as an error envelope, exit code 1.
#[derive(Debug, Clone)]
pub struct Failure {
    pub code: String,
    pub message: String,
    pub details: Json,
}

impl Failure {
    fn new(code: &str, message: impl Into<String>) -> Failure {
        Failure {
            code: code.into(),
            message: message.into(),
            details: Json::Null,
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Failure {
        Failure::new("IO", format!("{}: {e}", path.display()))
    }
}

impl From<EngineError> for Failure {
    fn from(e: EngineError) -> Self {
        Failure {
            code: e.code().into(),
            message: e.to_string(),
            details: e.details(),
        }
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        Failure::new(e.code(), e.to_string())
    }
}

impl From<bench::BenchError> for Failure {
    fn from(e: bench::BenchError) -> Self {
        match e {
            bench::BenchError::Engine(e) => e.into(),
            bench::BenchError::Store(e) => e.into(),
            other => Failure::new("BENCH", other.to_string()),
        }
    }
}

impl From<esp_server::ConfigError> for Failure {
    fn from(e: esp_server::ConfigError) -> Self {
        Failure::new("CONFIG", e.to_string())
    }
}

/// What a command prints on success.
pub enum Output {
    /// Exact bytes, printed as-is in both modes.
    Raw(Vec<u8>),
    /// JSON under `--json`, else the text.
    Report { json: Json, text: String },
    /// A report that still exits 1.
    Failed { json: Json, text: String },
}

fn report<T: Serialize>(value: &T, text: impl Into<String>) -> Output {
    Output::Report {
        json: serde_json::to_value(value).expect("serializable"),
        text: text.into(),
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_slice(&read(path)?)
        .map_err(|e| Failure::new("BAD_REQUEST", format!("{}: {e}", path.display())))
}

/// The name a local run stores a workbook under.
pub fn model_name(model: &WorkbookModel) -> String {
    if valid_model_name(&model.name) {
        model.name.clone()
    } else {
        "local".into()
    }
}

// ---- local execution ---------------------------------------------------------

/// Executes a workbook through a real store and engine and returns the
/// canonical result body, as the service would compute it.
pub fn run_local(args: &RunArgs, config: &Config) -> Result<Vec<u8>, Failure> {
    let bytes = read(&args.model)?;
    let model = parse_workbook(&bytes).map_err(|e| Failure::new(e.code(), e.to_string()))?;
    let bindings: BTreeMap<String, Value> = match &args.inputs {
        Some(p) => read_json(p)?,
        None => BTreeMap::new(),
    };
    let temp;
    let dir = match &args.store {
        Some(d) => d.clone(),
        None => {
            temp = tempfile::tempdir().map_err(|e| Failure::new("IO", e.to_string()))?;
            temp.path().join("store")
        }
    };
    let engine = Engine::new(Arc::new(Store::open(&dir)?), config.engine_config()?)?;
    let store = engine.store();
    let actor = Actor::new("local", Role::Superuser);
    let name = model_name(&model);
    let version = match store.upload_version(&name, &bytes, &actor) {
        Ok(v) => v.version,
        Err(StoreError::Duplicate(_)) => store.versions(&name)?.last().map_or(1, |v| v.version),
        Err(e) => return Err(e.into()),
    };
    let mut req = match (&args.scenario, &args.metrics, args.seed, args.iterations) {
        (Some(s), Some(m), Some(seed), Some(n)) => {
            let spec: ScenarioSpec = read_json(s)?;
            let metrics: MetricBindings = read_json(m)?;
            let hash = store.put_scenario(&spec, &actor)?;
            JobRequest::monte_carlo(&name, bindings, seed, n, &hash, metrics)
        }
        _ => JobRequest::single(&name, bindings),
    };
    req.version_selector = VersionSelector::Explicit(version);
    req.iteration_table = !args.no_iteration_table;
    let result = engine.run(&req, &actor)?;
    let mut out = result.canonical_bytes();
    out.push(b'\n');
    Ok(out)
}

// ---- remote ------------------------------------------------------------------

struct Client {
    base: String,
    token: String,
    agent: ureq::Agent,
}

impl Client {
    fn new(remote: &Remote, config: &Config) -> Client {
        let base = remote
            .server
            .clone()
            .unwrap_or_else(|| format!("http://{}", config.listen));
        Client {
            base: base.trim_end_matches('/').to_string(),
            token: remote.token.clone(),
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .build()
                .into(),
        }
    }

    fn send(&self, method: &str, path: &str, body: Option<Vec<u8>>) -> Result<Json, Failure> {
        let url = format!("{}{path}", self.base);
        let auth = format!("Bearer {}", self.token);
        let sent = match method {
            "PUT" => self
                .agent
                .put(&url)
                .header("Authorization", &auth)
                .header("Content-Type", "application/json")
                .send(body.unwrap_or_default()),
            _ => self
                .agent
                .post(&url)
                .header("Authorization", &auth)
                .header("Content-Type", "application/json")
                .send(body.unwrap_or_default()),
        };
        let mut resp = sent.map_err(|e| Failure::new("UNREACHABLE", format!("{url}: {e}")))?;
        let status = resp.status();
        let bytes = resp
            .body_mut()
            .read_to_vec()
            .map_err(|e| Failure::new("UNREACHABLE", e.to_string()))?;
        let value: Json = serde_json::from_slice(&bytes)
            .map_err(|_| Failure::new("INTERNAL", format!("{url}: non-JSON response ({status})")))?;
        if status.is_success() {
            Ok(value)
        } else {
            Err(Failure {
                code: value["code"].as_str().unwrap_or("INTERNAL").into(),
                message: value["message"].as_str().unwrap_or_default().into(),
                details: value["details"].clone(),
            })
        }
    }
}

// ---- dispatch ----------------------------------------------------------------

fn execute(cli: &Cli) -> Result<Output, Failure> {
    let config = Config::load(cli.config.as_deref())?;
    match &cli.command {
        Command::Serve { listen, store } => {
            let mut config = config;
            if let Some(l) = listen {
                config.listen = l.clone();
            }
            if let Some(s) = store {
                config.store = s.clone();
            }
            let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::new("IO", e.to_string()))?;
            rt.block_on(esp_server::serve(config))
                .map_err(|e| Failure::new("SERVE", e.to_string()))?;
            Ok(Output::Raw(Vec::new()))
        }
        Command::Upload { model, file, remote } => {
            let v = Client::new(remote, &config).send("POST", &format!("/api/models?name={model}"), Some(read(file)?))?;
            let text = format!("uploaded {model} version {} ({})", v["version"], v["blob_hash"].as_str().unwrap_or(""));
            Ok(Output::Report { json: v, text })
        }
        Command::Promote { model, version, remote } => {
            let v = Client::new(remote, &config).send("POST", &format!("/api/models/{model}/{version}/promote"), None)?;
            Ok(Output::Report { json: v, text: format!("{model} version {version} is LIVE") })
        }
        Command::Tests(TestsCommand::Attach { model, version, file, remote }) => {
            let v = Client::new(remote, &config).send("PUT", &format!("/api/models/{model}/{version}/tests"), Some(read(file)?))?;
            let text = format!("attached {} tests to {model} version {version}", v["tests"]);
            Ok(Output::Report { json: v, text })
        }
        Command::Tests(TestsCommand::Run { model, version, remote }) => {
            let v = Client::new(remote, &config).send("POST", &format!("/api/models/{model}/{version}/test-run"), None)?;
            let mut text = String::new();
            for o in v["outcomes"].as_array().into_iter().flatten() {
                let mark = if o["passed"] == true { "pass" } else { "FAIL" };
                text.push_str(&format!("{mark} {}\n", o["test_id"].as_str().unwrap_or("?")));
            }
            text.push_str(&format!("status: {}", v["status"].as_str().unwrap_or("?")));
            if v["passed"] == true {
                Ok(Output::Report { json: v, text })
            } else {
                Ok(Output::Failed { json: v, text })
            }
        }
        Command::Run(args) => Ok(Output::Raw(run_local(args, &config)?)),
        Command::Audit(AuditCommand::Verify { store }) => {
            let dir = store.clone().unwrap_or(config.store);
            let path = dir.join("audit.log");
            if !path.exists() {
                return Err(Failure::new("NOT_FOUND", format!("{} does not exist", path.display())));
            }
            let v = verify_audit_file(&path)?;
            let json = serde_json::to_value(&v).expect("serializable");
            match v.first_bad {
                None => Ok(Output::Report { json, text: format!("ok: {} records", v.records) }),
                Some(bad) => Ok(Output::Failed {
                    json,
                    text: format!(
                        "chain broken at record {bad}: {} ({} valid records before it)",
                        v.reason.as_deref().unwrap_or("invalid"),
                        v.records
                    ),
                }),
            }
        }
        Command::Bench(args) => run_bench(args, &config),
        Command::Samples { out } => {
            std::fs::create_dir_all(out).map_err(|e| Failure::io(out, e))?;
            let mut names = Vec::new();
            for (name, bytes) in samples::files() {
                let p = out.join(name);
                std::fs::write(&p, bytes).map_err(|e| Failure::io(&p, e))?;
                names.push(name);
            }
            Ok(report(&json!({"written": names}), format!("wrote {} files to {}", names.len(), out.display())))
        }
    }
}

fn run_bench(args: &BenchArgs, config: &Config) -> Result<Output, Failure> {
    let model = parse_workbook(&read(&args.model)?).map_err(|e| Failure::new(e.code(), e.to_string()))?;
    let rounds = if args.scenario.is_some() { args.rounds } else { args.iterations as usize };
    let recalc = bench::recalc(model.clone(), rounds)?;
    let simulation = match (&args.scenario, &args.metrics) {
        (Some(s), Some(m)) => {
            let bindings: BTreeMap<String, Value> = match &args.inputs {
                Some(p) => read_json(p)?,
                None => BTreeMap::new(),
            };
            let dir = tempfile::tempdir().map_err(|e| Failure::new("IO", e.to_string()))?;
            let engine = Engine::new(Arc::new(Store::open(dir.path())?), config.engine_config()?)?;
            Some(bench::simulation(
                &engine,
                &model,
                &read_json(s)?,
                read_json(m)?,
                bindings,
                args.iterations,
                args.seed,
            )?)
        }
        _ => None,
    };
    let mut text = format!(
        "{} formula cells, {} rebindable inputs, {} rounds\nincremental: {:.3} ms/round ({} evaluations)\nfull:        {:.3} ms/round ({} evaluations)\nspeedup:     {:.1}x",
        recalc.formula_cells,
        recalc.rebindable_inputs,
        recalc.rounds,
        recalc.incremental_secs * 1e3 / recalc.rounds.max(1) as f64,
        recalc.incremental_evaluations,
        recalc.full_secs * 1e3 / recalc.rounds.max(1) as f64,
        recalc.full_evaluations,
        recalc.speedup,
    );
    if let Some(s) = &simulation {
        text.push_str(&format!(
            "\nsimulation:  {} iterations in {:.2} s ({:.0} iterations/s)",
            s.iterations, s.seconds, s.iterations_per_second
        ));
    }
    let r = bench::BenchReport {
        model: model.name.clone(),
        recalc,
        simulation,
    };
    Ok(report(&r, text))
}

/// Parses `args` (including the program name), runs the command and
/// returns the exit code.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return if code == 0 { 0 } else { 2 };
        }
    };
    let json_mode = cli.json;
    let print = |out: &mut dyn Write, json: &Json, text: &str| {
        if json_mode {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(json).expect("serializable"));
        } else {
            let _ = writeln!(out, "{text}");
        }
    };
    match execute(&cli) {
        Ok(Output::Raw(bytes)) => {
            let _ = stdout.write_all(&bytes);
            0
        }
        Ok(Output::Report { json, text }) => {
            print(stdout, &json, &text);
            0
        }
        Ok(Output::Failed { json, text }) => {
            print(stdout, &json, &text);
            1
        }
        Err(f) => {
            if json_mode {
                let env = json!({"code": f.code, "message": f.message, "details": f.details});
                print(stdout, &env, "");
            } else {
                let _ = writeln!(stderr, "error [{}]: {}", f.code, f.message);
                if !f.details.is_null() {
                    let _ = writeln!(stderr, "{}", serde_json::to_string_pretty(&f.details).unwrap_or_default());
                }
            }
            1
        }
    }
}
