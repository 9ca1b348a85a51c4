use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use gridfield_core::api::QueryResponse;

const BIN: &str = env!("CARGO_BIN_EXE_gridfield");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn gridfield")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "gridfield {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// synth, map and train into `dir`.
fn pipeline(dir: &Path) {
    let spec = dir.join("spec.json");
    std::fs::write(&spec, r#"{"objects": 3, "views": 3, "width": 48, "height": 48, "seed": 12}"#).unwrap();
    let ds = dir.join("ds");
    ok(&["synth", "--spec", p(&spec), "--out", p(&ds)]);
    ok(&["ingest", "--check", p(&ds)]);
    ok(&["map", "--dataset", p(&ds), "--out", p(&dir.join("mapping.json"))]);
    ok(&[
        "train",
        "--dataset",
        p(&ds),
        "--mapping",
        p(&dir.join("mapping.json")),
        "--iters",
        "120",
        "--seed",
        "3",
        "--out",
        p(&dir.join("field.bin")),
    ]);
}

fn read_response(path: &Path) -> QueryResponse {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn local_pipeline_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let ds = d.join("ds");
    for f in ["meta.json", "gaussians.bin", "queries.json", "queries/object-0.bin", "truth/0000.png"] {
        assert!(ds.join(f).exists(), "{f} missing");
    }
    assert!(d.join("field.json").exists());

    ok(&[
        "query", "--field", p(&d.join("field.bin")), "--mapping", p(&d.join("mapping.json")),
        "--view", "1", "--embedding", p(&ds.join("queries/object-1.bin")), "--out", p(&d.join("q.png")),
    ]);
    let r = read_response(&d.join("q.json"));
    assert_eq!((r.width, r.height, r.scores.len()), (48, 48, 3));
    assert!(r.mask_area > 0);

    let report = d.join("report.json");
    let out = ok(&[
        "eval", "--dataset", p(&ds), "--field", p(&d.join("field.bin")), "--mapping", p(&d.join("mapping.json")),
        "--queries", p(&ds.join("queries.json")), "--truth", p(&ds.join("truth")), "--serial", "--report", p(&report),
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("mIoU"));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(rep["k"], 3);
    assert!(rep["miou"].as_f64().unwrap() > 0.5);

    ok(&[
        "eval", "--dataset", p(&ds), "--field", p(&d.join("field.bin")), "--mapping", p(&d.join("mapping.json")),
        "--queries", p(&ds.join("queries.json")), "--truth", p(&ds.join("truth")), "--ablate", "kp", "--ablate", "cd",
        "--iters", "60", "--report", p(&d.join("ablated.json")),
    ]);
    let ablated: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ablated.json")).unwrap()).unwrap();
    assert_eq!(ablated["options"]["ablation"], serde_json::json!({"keypoints": false, "color": false}));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["ingest", "--check", p(&dir.path().join("nope"))]);
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    pipeline(dir.path());
    let d = dir.path();
    let bad_view = run(&[
        "query", "--field", p(&d.join("field.bin")), "--mapping", p(&d.join("mapping.json")),
        "--view", "9", "--embedding", p(&d.join("ds/queries/object-0.bin")), "--out", p(&d.join("x.png")),
    ]);
    assert!(!bad_view.status.success());
    assert!(String::from_utf8_lossy(&bad_view.stderr).contains("unknown view 9"));
    let bad_pairs = run(&["match", "--dataset", p(&d.join("ds")), "--pairs", "some"]);
    assert!(!bad_pairs.status.success());
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn free_port() -> u16 {
    std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn service_answers_match_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);
    let port = free_port().to_string();
    let url = format!("http://127.0.0.1:{port}");
    let _server = Server(
        Command::new(BIN)
            .args([
                "serve", "--field", p(&d.join("field.bin")), "--mapping", p(&d.join("mapping.json")),
                "--port", &port, "--queries", p(&d.join("ds/queries.json")),
            ])
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    let mut up = false;
    for _ in 0..100 {
        if run(&["remote", "--url", &url, "health"]).status.success() {
            up = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    assert!(up, "service did not come up");

    let scene: serde_json::Value = serde_json::from_slice(&ok(&["remote", "--url", &url, "scene"]).stdout).unwrap();
    assert_eq!(scene["k"], 3);
    assert_eq!(scene["views"].as_array().unwrap().len(), 3);
    assert_eq!(scene["queries"].as_array().unwrap().len(), 3);

    for (view, object) in [(0, 0), (1, 2), (2, 1)] {
        let emb = d.join(format!("ds/queries/object-{object}.bin"));
        let (local, remote, named) = (d.join(format!("l{view}.png")), d.join(format!("r{view}.png")), d.join(format!("n{view}.png")));
        let view = view.to_string();
        ok(&[
            "query", "--field", p(&d.join("field.bin")), "--mapping", p(&d.join("mapping.json")),
            "--view", &view, "--embedding", p(&emb), "--top-n", "2", "--out", p(&local),
        ]);
        ok(&["query", "--server", &url, "--view", &view, "--embedding", p(&emb), "--top-n", "2", "--out", p(&remote)]);
        ok(&[
            "remote", "--url", &url, "ask", "--view", &view, "--name", &format!("object-{object}"), "--top-n", "2",
            "--out", p(&named),
        ]);
        let l = read_response(&local.with_extension("json"));
        let r = read_response(&remote.with_extension("json"));
        let n = read_response(&named.with_extension("json"));
        assert_eq!(l.without_timings(), r.without_timings());
        assert_eq!(l.without_timings(), n.without_timings());
        let bytes = std::fs::read(&local).unwrap();
        assert_eq!(bytes, std::fs::read(&remote).unwrap());
        assert_eq!(bytes, std::fs::read(&named).unwrap());
    }

    ok(&["remote", "--url", &url, "render", "--view", "2", "--out", p(&d.join("v2.png"))]);
    assert_eq!(&std::fs::read(d.join("v2.png")).unwrap()[1..4], b"PNG");
    let missing = run(&["remote", "--url", &url, "ask", "--view", "0", "--name", "ghost", "--out", p(&d.join("g.png"))]);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("404"));
}
