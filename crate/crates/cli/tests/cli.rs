use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use esp_cli::samples;
use esp_core::engine::{Engine, EngineConfig};
use esp_core::store::{Role, Store};
use esp_server::{AppState, Background, User, Users};

fn esp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_esp"))
        .args(args)
        .env_remove("ESP_CONFIG")
        .env_remove("ESP_TOKEN")
        .env_remove("ESP_SERVER")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn samples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn sample(name: &str) -> String {
    samples_dir().join(name).display().to_string()
}

#[test]
fn shipped_samples_match_their_generators() {
    for (name, bytes) in samples::files() {
        let on_disk = std::fs::read(samples_dir().join(name)).unwrap_or_default();
        assert!(on_disk == bytes, "samples/{name} is stale; regenerate with `esp samples --out samples`");
    }
}

#[test]
fn run_is_byte_identical_across_invocations() {
    let args = [
        "run",
        &sample("credit.json"),
        "--inputs",
        &sample("credit_inputs.json"),
        "--seed",
        "2024",
        "--iterations",
        "300",
        "--scenario",
        &sample("credit_scenario.json"),
        "--metrics",
        &sample("credit_metrics.json"),
    ];
    let a = esp(&args);
    let b = esp(&args);
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let body: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(body["seed"], 2024);
    assert_eq!(body["iterations"].as_array().unwrap().len(), 300);

    let single = esp(&["run", &sample("credit.json"), "--inputs", &sample("credit_inputs.json")]);
    let body: serde_json::Value = serde_json::from_slice(&single.stdout).unwrap();
    assert_eq!(body["mode"], "SINGLE");
    assert_eq!(body["outputs"]["default"], false);
}

#[test]
fn exit_codes() {
    assert_eq!(esp(&[]).status.code(), Some(2));
    assert_eq!(esp(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(esp(&["run"]).status.code(), Some(2));
    assert_eq!(esp(&["run", "m.json", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(esp(&["bench", "--model", "m.json", "--iterations", "many"]).status.code(), Some(2));
    assert_eq!(esp(&["upload", "m", "f.json"]).status.code(), Some(2), "token is required");
    assert_eq!(esp(&["--help"]).status.code(), Some(0));

    let o = esp(&["run", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"sheets\": 3}").unwrap();
    let o = esp(&["--json", "run", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let env: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(env["code"], "FORMAT");

    let inputs = dir.path().join("inputs.json");
    std::fs::write(&inputs, r#"{"notional": -5, "haircut": 0.5}"#).unwrap();
    let o = esp(&["--json", "run", &sample("credit.json"), "--inputs", inputs.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let env: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(env["code"], "VALIDATION");
    let kinds: Vec<&str> = env["details"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v["kind"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["OUT_OF_BOUNDS", "LOCKED_OVERRIDE"]);

    let o = esp(&["upload", "m", &sample("threshold.json"), "--token", "t", "--server", "http://127.0.0.1:9"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("UNREACHABLE"));
}

/// Byte offsets of each framed record in an audit log.
fn frames(log: &[u8]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < log.len() {
        out.push(pos);
        pos += 4 + u32::from_be_bytes(log[pos..pos + 4].try_into().unwrap()) as usize;
    }
    out
}

#[test]
fn audit_verify_reports_first_bad_record() {
    let dir = tempfile::tempdir().unwrap();
    let store_dir = dir.path().join("store");
    {
        let store = Store::open(&store_dir).unwrap();
        let su = esp_core::store::Actor::new("sam", Role::Superuser);
        for k in 0..6 {
            let mut m = samples::threshold();
            m.set_value("Inputs", "Z1", k as f64);
            store.upload_version("m", &m.canonical_bytes(), &su).unwrap();
        }
    }
    let s = store_dir.to_str().unwrap();
    let o = esp(&["audit", "verify", "--store", s]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("ok: 6 records"));

    let path = store_dir.join("audit.log");
    let mut log = std::fs::read(&path).unwrap();
    let at = frames(&log)[3] + 40;
    log[at] ^= 0x01;
    std::fs::write(&path, &log).unwrap();
    let o = esp(&["audit", "verify", "--store", s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("chain broken at record 4"), "{}", stdout(&o));
    let o = esp(&["--json", "audit", "verify", "--store", s]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!((v["ok"].clone(), v["first_bad"].clone(), v["records"].clone()), (false.into(), 4.into(), 3.into()));

    let o = esp(&["audit", "verify", "--store", dir.path().join("nowhere").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn administers_a_server() {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(Store::open(dir.path().join("store")).unwrap());
    let engine = Arc::new(Engine::new(Arc::clone(&store), EngineConfig::default()).unwrap());
    let users = Users::new(vec![
        User {
            user_id: "sam".into(),
            display_name: "Sam".into(),
            role: Role::Superuser,
            api_token: "su-token".into(),
        },
        User {
            user_id: "erin".into(),
            display_name: "Erin".into(),
            role: Role::Enduser,
            api_token: "eu-token".into(),
        },
    ])
    .unwrap();
    let http = Background::start(AppState::new(engine, users), "127.0.0.1:0").unwrap();
    let url = http.url();
    let remote = |extra: &[&str], token: &str| {
        let mut args: Vec<&str> = extra.to_vec();
        args.extend(["--token", token, "--server", &url]);
        esp(&args)
    };

    let o = remote(&["upload", "loan", &sample("credit.json")], "eu-token");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("FORBIDDEN"));
    let o = remote(&["upload", "loan", &sample("credit.json")], "wrong");
    assert!(String::from_utf8_lossy(&o.stderr).contains("AUTH"));

    let o = remote(&["upload", "loan", &sample("credit.json")], "su-token");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("uploaded loan version 1"));
    let o = remote(&["promote", "loan", "1"], "su-token");
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("NOT_TESTED"));
    let o = remote(&["tests", "run", "loan", "1"], "su-token");
    assert!(String::from_utf8_lossy(&o.stderr).contains("NO_TESTS"));

    let o = remote(&["tests", "attach", "loan", "1", &sample("credit_tests.json")], "su-token");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = remote(&["--json", "tests", "run", "loan", "1"], "su-token");
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["status"], "TESTED");
    let o = remote(&["promote", "loan", "1"], "su-token");
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(store.live_version("loan").unwrap().unwrap().version, 1);

    // a failing battery on a second version exits 1 and leaves it DRAFT
    let mut v2 = samples::credit();
    v2.set_value("Inputs", "A3", 0.3);
    v2.input_schema[2].default = Some(esp_core::workbook::Value::Number(0.3));
    let v2_path = dir.path().join("v2.json");
    std::fs::write(&v2_path, v2.canonical_bytes()).unwrap();
    remote(&["upload", "loan", v2_path.to_str().unwrap()], "su-token");
    remote(&["tests", "attach", "loan", "2", &sample("credit_tests.json")], "su-token");
    let o = remote(&["tests", "run", "loan", "2"], "su-token");
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL benign"), "{}", stdout(&o));
    assert!(stdout(&o).contains("status: DRAFT"));
}

#[test]
fn bench_reports_speedup_and_throughput() {
    let o = esp(&["--json", "bench", "--model", &sample("bench.json"), "--iterations", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["recalc"]["formula_cells"], 1000);
    assert_eq!(r["recalc"]["rebindable_inputs"], 5);
    assert_eq!(r["recalc"]["full_evaluations"], 200 * 1000);
    assert_eq!(r["recalc"]["incremental_evaluations"], 200 * 200);
    assert!(r.get("simulation").is_none());

    let o = esp(&[
        "--json",
        "bench",
        "--model",
        &sample("threshold.json"),
        "--iterations",
        "2000",
        "--scenario",
        &sample("threshold_scenario.json"),
        "--metrics",
        &sample("threshold_metrics.json"),
        "--rounds",
        "10",
    ]);
    let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["simulation"]["iterations"], 2000);
    assert!(r["simulation"]["iterations_per_second"].as_f64().unwrap() > 0.0);
}
