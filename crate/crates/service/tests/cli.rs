use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::thread::sleep;
use std::time::{Duration, Instant};

use serde_json::{json, Value};
use sniff_core::catalogue::EmbeddingStore;
use sniff_core::game::{load_sessions, ParticipantSchedule};

const BIN: &str = env!("CARGO_BIN_EXE_sniff");

fn sniff(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = sniff(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr.clone()).unwrap();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "{stderr}");
    serde_json::from_str(lines[0]).unwrap()
}

#[test]
fn embed_catalogue_with_mock_writes_a_valid_store() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["embed-catalogue", "--provider", "mock", "--dims", "24", "--out", "store.json"], dir.path());
    let store = EmbeddingStore::load(dir.path().join("store.json")).unwrap();
    assert_eq!(store.iter().count(), 20);
    assert_eq!(store.dims(), 24);
    assert_eq!(store.model_id(), "mock-24");
    let raw: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("store.json")).unwrap()).unwrap();
    for key in ["sha256", "format_version", "model_id", "dims", "entries"] {
        assert!(raw.get(key).is_some(), "{key}");
    }
}

#[test]
fn failures_exit_nonzero_with_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("logs")).unwrap();
    let err = error_json(&sniff(&["metrics", "--logs", "logs", "--out", "r.json"], dir.path()));
    assert_eq!(err["command"], "metrics");
    assert!(err["error"].as_str().unwrap().contains("no session logs"));
    assert!(!dir.path().join("r.json").exists());

    let err = error_json(&sniff(&["embed-catalogue", "--provider", "remote", "--out", "s.json"], dir.path()));
    assert!(err["error"].as_str().unwrap().contains("--model"));

    let err = error_json(&sniff(&["frobnicate"], dir.path()));
    assert!(err["command"].is_null());

    let err = error_json(&sniff(&["schedule", "--participants", "0", "--out", "s.json"], dir.path()));
    assert_eq!(err["command"], "schedule");
}

#[test]
fn schedule_file_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["schedule", "--participants", "8", "--seed", "4", "--out", "sched.json"], dir.path());
    let text = std::fs::read_to_string(dir.path().join("sched.json")).unwrap();
    let schedules: Vec<ParticipantSchedule> = serde_json::from_str(&text).unwrap();
    assert_eq!(schedules.len(), 8);
    assert!(schedules.iter().all(|s| s.task1_targets.len() == 2 && s.task2_pairs.len() == 4));
}

#[test]
fn config_file_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("svc.conf"), "provider.mock_seed=5\n").unwrap();
    ok(&["--config", "svc.conf", "embed-catalogue", "--provider", "mock", "--dims", "8", "--out", "a.json"], dir.path());
    ok(&["embed-catalogue", "--provider", "mock", "--dims", "8", "--out", "b.json"], dir.path());
    let a = EmbeddingStore::load(dir.path().join("a.json")).unwrap();
    let b = EmbeddingStore::load(dir.path().join("b.json")).unwrap();
    assert_ne!(a.content_hash(), b.content_hash());

    std::fs::write(dir.path().join("bad.conf"), "task1_guess_limit\n").unwrap();
    let err = error_json(&sniff(&["--config", "bad.conf", "schedule", "--participants", "1", "--out", "x.json"], dir.path()));
    assert!(err["error"].as_str().unwrap().contains("line 1"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn http(addr: &str, method: &str, path: &str, body: Option<Value>) -> (u16, Value) {
    let mut stream = TcpStream::connect(addr).unwrap();
    let body = body.map(|b| b.to_string()).unwrap_or_default();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    stream.read_to_string(&mut raw).unwrap();
    let status: u16 = raw.split_whitespace().nth(1).unwrap().parse().unwrap();
    let (head, payload) = raw.split_once("\r\n\r\n").unwrap();
    let payload = if head.to_ascii_lowercase().contains("transfer-encoding: chunked") {
        dechunk(payload)
    } else {
        payload.to_string()
    };
    let value = if payload.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(&payload).unwrap_or_else(|e| panic!("{method} {path}: {e}: {raw}"))
    };
    (status, value)
}

fn dechunk(mut s: &str) -> String {
    let mut out = String::new();
    loop {
        let (size, rest) = s.split_once("\r\n").unwrap();
        let n = usize::from_str_radix(size.trim(), 16).unwrap();
        if n == 0 {
            return out;
        }
        out.push_str(&rest[..n]);
        s = &rest[n + 2..];
    }
}

#[test]
fn serve_with_scripted_client_then_metrics() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["embed-catalogue", "--provider", "mock", "--dims", "32", "--out", "store.json"], dir.path());
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let server = Server(
        Command::new(BIN)
            .args(["serve", "--store", "store.json", "--addr", &addr, "--log-dir", "logs"])
            .current_dir(dir.path())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let start = Instant::now();
    while TcpStream::connect(&addr).is_err() {
        assert!(start.elapsed() < Duration::from_secs(20), "server did not start");
        sleep(Duration::from_millis(50));
    }

    let (status, created) = http(&addr, "POST", "/api/sessions", Some(json!({"participant_label": "smoke"})));
    assert_eq!(status, 201);
    let id = created["session_id"].as_str().unwrap().to_string();
    let base = format!("/api/sessions/{id}");
    let mut rounds = 0;
    loop {
        let (status, round) = http(&addr, "POST", &format!("{base}/rounds"), None);
        if status == 409 {
            break;
        }
        assert_eq!(status, 201, "{round}");
        rounds += 1;
        let (status, _) = http(&addr, "POST", &format!("{base}/rounds/current/reveal"), None);
        assert_eq!(status, 200);
        let mut attempt = 0;
        loop {
            let (status, view) = http(&addr, "GET", &base, None);
            assert_eq!(status, 200);
            let round = &view["round"];
            if let Some(head) = round["owed_ratings"].as_array().and_then(|o| o.first()) {
                let (status, body) = http(
                    &addr,
                    "POST",
                    &format!("{base}/rounds/current/ratings"),
                    Some(json!({"kind": head["kind"], "value": 5})),
                );
                assert_eq!(status, 200, "{body}");
                continue;
            }
            if round["status"] == "solved" || round["status"] == "exhausted" {
                break;
            }
            attempt += 1;
            let (status, body) = http(
                &addr,
                "POST",
                &format!("{base}/rounds/current/description"),
                Some(json!({"text": format!("mild, sweet and a bit woody, try {attempt}")})),
            );
            assert_eq!(status, 200, "{body}");
        }
    }
    assert_eq!(rounds, 6);
    let (status, results) = http(&addr, "GET", &format!("{base}/results"), None);
    assert_eq!(status, 200);
    drop(server);

    let sessions = load_sessions(dir.path().join("logs")).unwrap();
    assert_eq!(sessions.len(), 1);
    assert_eq!(serde_json::to_value(&sessions[0]).unwrap(), results);

    ok(&["metrics", "--logs", "logs", "--out", "report.json"], dir.path());
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report["sessions"], 1);
}

#[test]
fn simulate_and_analyze_are_byte_identical_across_processes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/data/example_corpus.json");
    ok(&["embed-catalogue", "--provider", "mock", "--dims", "16", "--out", "store.json"], dir.path());
    for run in ["a", "b"] {
        ok(&["simulate", "--describer", "fixture", "--store", "store.json", "--out", &format!("{run}.json")], dir.path());
        ok(
            &["analyze", "--corpus", corpus, "--store", "store.json", "--iters", "300", "--out", run],
            dir.path(),
        );
    }
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    for file in ["tsne.csv", "tsne.svg", "tsne.json", "terms_human.csv"] {
        assert_eq!(read(&format!("a/{file}")), read(&format!("b/{file}")), "{file}");
    }
}
