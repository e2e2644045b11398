//! Exhaustive exploration of the version lifecycle. Every reachable
//! configuration of up to two versions is visited; from each, every
//! operation is applied to a real store and checked against a reference
//! transition function, and every LIVE version must be backed by an
//! all-pass test run of its current battery.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::path::Path;
use std::sync::Arc;

use crate::common::*;
use esp_core::canonical;
use esp_core::engine::{Engine, EngineConfig};
use esp_core::store::{AuditAction, Status, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Tests {
    Unset,
    Empty,
    Pass,
    Fail,
}

type State = Vec<(Status, Tests)>;

#[derive(Debug, Clone, Copy)]
enum Op {
    Upload,
    UploadDuplicate,
    Attach(u32, Tests),
    Run(u32),
    Promote(u32),
    PromoteAsEndUser(u32),
    Retire(u32),
}

const MAX_VERSIONS: u32 = 2;

fn ops(state: &State) -> Vec<Op> {
    let n = state.len() as u32;
    let mut out = Vec::new();
    if n < MAX_VERSIONS {
        out.push(Op::Upload);
    }
    if n > 0 {
        out.push(Op::UploadDuplicate);
    }
    for v in 1..=n {
        out.extend([
            Op::Attach(v, Tests::Empty),
            Op::Attach(v, Tests::Pass),
            Op::Attach(v, Tests::Fail),
            Op::Run(v),
            Op::Promote(v),
            Op::PromoteAsEndUser(v),
            Op::Retire(v),
        ]);
    }
    out
}

/// Reference semantics: next state and the error code, if any.
fn reference(state: &State, op: Op) -> (State, Option<&'static str>) {
    let mut s = state.clone();
    let idx = |v: u32| v as usize - 1;
    let err = match op {
        Op::Upload => {
            s.push((Status::Draft, Tests::Unset));
            None
        }
        Op::UploadDuplicate => Some("DUPLICATE"),
        Op::Attach(v, kind) => match s[idx(v)].0 {
            Status::Live | Status::Retired => Some("IMMUTABLE"),
            _ => {
                s[idx(v)] = (Status::Draft, kind);
                None
            }
        },
        Op::Run(v) => {
            let (st, t) = s[idx(v)];
            match t {
                Tests::Unset | Tests::Empty => Some("NO_TESTS"),
                Tests::Pass | Tests::Fail => {
                    if matches!(st, Status::Draft | Status::Tested) {
                        s[idx(v)].0 = if t == Tests::Pass { Status::Tested } else { Status::Draft };
                    }
                    None
                }
            }
        }
        Op::Promote(v) => match s[idx(v)].0 {
            Status::Tested => {
                for e in s.iter_mut() {
                    if e.0 == Status::Live {
                        e.0 = Status::Retired;
                    }
                }
                s[idx(v)].0 = Status::Live;
                None
            }
            Status::Draft => Some("NOT_TESTED"),
            Status::Live | Status::Retired => Some("IMMUTABLE"),
        },
        Op::PromoteAsEndUser(_) => Some("FORBIDDEN"),
        Op::Retire(v) => match s[idx(v)].0 {
            Status::Live => {
                s[idx(v)].0 = Status::Retired;
                None
            }
            _ => Some("BAD_REQUEST"),
        },
    };
    (s, err)
}

/// Version `k` differs from the others only in an unused literal.
fn model(k: u32) -> Vec<u8> {
    let mut m = doubler();
    m.set_value("Inputs", "C1", k as f64);
    bytes(&m)
}

fn battery(kind: Tests) -> Vec<esp_core::store::StandardTest> {
    match kind {
        Tests::Unset | Tests::Empty => vec![],
        Tests::Pass => vec![
            plain_test("a", &[("x", num(3.0))], &[("y", num(6.0))]),
            plain_test("b", &[("x", num(-1.5))], &[("z", num(-3.0))]),
        ],
        Tests::Fail => vec![
            plain_test("a", &[("x", num(3.0))], &[("y", num(6.0))]),
            plain_test("b", &[("x", num(1.0))], &[("y", num(3.0))]),
        ],
    }
}

fn apply(engine: &Engine, op: Op) -> Option<String> {
    let store = engine.store();
    let n = store.versions("m").map(|v| v.len() as u32).unwrap_or(0);
    let r = match op {
        Op::Upload => store.upload_version("m", &model(n + 1), &su()).map(|_| ()),
        Op::UploadDuplicate => store.upload_version("m", &model(n), &su()).map(|_| ()),
        Op::Attach(v, kind) => store.attach_standard_tests("m", v, battery(kind), &su()).map(|_| ()),
        Op::Run(v) => return engine.run_standard_tests("m", v, &su()).err().map(|e| e.code().to_string()),
        Op::Promote(v) => store.promote("m", v, &su()).map(|_| ()),
        Op::PromoteAsEndUser(v) => store.promote("m", v, &eu()).map(|_| ()),
        Op::Retire(v) => store.retire("m", v, &su()).map(|_| ()),
    };
    r.err().map(|e| e.code().to_string())
}

fn observe(store: &Store) -> State {
    let Ok(vs) = store.versions("m") else { return vec![] };
    vs.iter()
        .map(|v| {
            let tests = store.tests("m", v.version).unwrap();
            let kind = if tests.is_empty() {
                // attaching an empty battery is recorded in the audit log
                let attached = store
                    .audit_records(&su(), 0, usize::MAX)
                    .unwrap()
                    .iter()
                    .any(|r| r.action == AuditAction::AttachTests && r.payload["version"] == v.version);
                if attached { Tests::Empty } else { Tests::Unset }
            } else if tests == battery(Tests::Pass) {
                Tests::Pass
            } else {
                Tests::Fail
            };
            (v.status, kind)
        })
        .collect()
}

/// Every LIVE version has an all-pass TEST_RUN of its current battery
/// after its last ATTACH_TESTS and before its PROMOTE.
fn check_gate(store: &Store) {
    let log = store.audit_records(&su(), 0, usize::MAX).unwrap();
    let Ok(versions) = store.versions("m") else { return };
    let live: Vec<_> = versions.iter().filter(|v| v.status == Status::Live).collect();
    assert!(live.len() <= 1, "two LIVE versions");
    for v in live {
        let tests_hash = canonical::digest(&store.tests("m", v.version).unwrap());
        let mine = |r: &esp_core::store::AuditRecord, a: AuditAction| {
            r.action == a && r.payload["version"] == v.version
        };
        let last_attach = log.iter().rposition(|r| mine(r, AuditAction::AttachTests));
        let promote = log
            .iter()
            .rposition(|r| mine(r, AuditAction::Promote))
            .expect("LIVE without PROMOTE");
        let ok_run = log.iter().enumerate().any(|(i, r)| {
            mine(r, AuditAction::TestRun)
                && r.payload["all_passed"] == true
                && r.payload["blob_hash"] == v.blob_hash.as_str()
                && r.payload["tests_hash"] == tests_hash.as_str()
                && i < promote
                && last_attach.is_none_or(|a| a < i)
        });
        assert!(ok_run, "version {} is LIVE without a passing test run", v.version);
        assert!(!store.tests("m", v.version).unwrap().is_empty());
    }
    assert!(store.verify_audit_chain().unwrap().ok);
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for e in std::fs::read_dir(from).unwrap() {
        let e = e.unwrap();
        let target = to.join(e.file_name());
        if e.file_type().unwrap().is_dir() {
            copy_dir(&e.path(), &target);
        } else {
            std::fs::copy(e.path(), target).unwrap();
        }
    }
}

fn config() -> EngineConfig {
    EngineConfig {
        workers: 1,
        simulation_threads: 1,
        ..EngineConfig::default()
    }
}

pub struct Exploration {
    pub states: usize,
    pub transitions: usize,
    pub reached_live: bool,
    pub reference_states: usize,
}

/// Breadth-first search over real store snapshots. Panics on the first
/// disagreement with the reference or on a gate violation.
pub fn explore() -> Exploration {
    let root = tempfile::tempdir().unwrap();
    let mut snapshots: BTreeMap<usize, std::path::PathBuf> = BTreeMap::new();
    let genesis = root.path().join("s0");
    Store::open(&genesis).unwrap();
    snapshots.insert(0, genesis);

    let mut seen: HashSet<State> = HashSet::from([vec![]]);
    let mut index: Vec<State> = vec![vec![]];
    let mut queue = VecDeque::from([0usize]);
    let mut transitions = 0;
    let mut reached_live = false;

    while let Some(i) = queue.pop_front() {
        let state = index[i].clone();
        for op in ops(&state) {
            let dir = root.path().join(format!("work-{i}-{transitions}"));
            copy_dir(&snapshots[&i], &dir);
            let store = Arc::new(Store::open(&dir).unwrap());
            let engine = Engine::new(Arc::clone(&store), config()).unwrap();
            let got = apply(&engine, op);
            drop(engine);
            let (want_state, want_err) = reference(&state, op);
            assert_eq!(got.as_deref(), want_err, "{op:?} from {state:?}");
            let observed = observe(&store);
            assert_eq!(observed, want_state, "{op:?} from {state:?}");
            check_gate(&store);
            reached_live |= observed.iter().any(|v| v.0 == Status::Live);
            transitions += 1;
            if seen.insert(observed.clone()) {
                index.push(observed);
                snapshots.insert(index.len() - 1, dir);
                queue.push_back(index.len() - 1);
            } else {
                std::fs::remove_dir_all(&dir).unwrap();
            }
        }
    }
    Exploration {
        states: index.len(),
        transitions,
        reached_live,
        reference_states: reference_reachable(),
    }
}

/// Number of states reachable under the reference semantics alone.
fn reference_reachable() -> usize {
    let mut seen: HashSet<State> = HashSet::from([vec![]]);
    let mut queue = VecDeque::from([vec![]]);
    while let Some(state) = queue.pop_front() {
        for op in ops(&state) {
            let (next, _) = reference(&state, op);
            if seen.insert(next.clone()) {
                queue.push_back(next);
            }
        }
    }
    seen.len()
}
