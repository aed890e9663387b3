use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn supershape(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_supershape"))
        .args(args)
        .current_dir(dir)
        .env_remove("SUPERSHAPE_RUN_ROOT")
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}

#[test]
fn render_outputs_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();

    let out = supershape(d, &["render", "--builtin", "cube", "--export", "vox"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    let grid = supershape_core::voxelize::format::decode(&std::fs::read(d.join("cube.vox")).unwrap()).unwrap();
    assert_eq!(grid.dims(), [50, 50, 50]);

    let out = supershape(d, &["render", "--builtin", "vawt_star_seed", "--smooth", "3", "--platform", "-o", "a.stl"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    supershape(d, &["render", "--builtin", "vawt_star_seed", "--smooth", "3", "--platform", "-o", "b.stl"]);
    let (a, b) = (std::fs::read(d.join("a.stl")).unwrap(), std::fs::read(d.join("b.stl")).unwrap());
    assert_eq!(a, b, "deterministic");
    let t = u32::from_le_bytes(a[80..84].try_into().unwrap()) as usize;
    assert_eq!(a.len(), 84 + 50 * t);

    std::fs::write(d.join("genes.json"), "[4, 10, 10, 10, 4, 10, 10, 10]").unwrap();
    let out = supershape(d, &["render", "genes.json", "--ascii", "--dims", "20x20x30"]);
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert!(std::fs::read_to_string(d.join("genes.stl")).unwrap().starts_with("solid"));

    let before = files(d);
    std::fs::write(d.join("bad.json"), "[4, 10, 10").unwrap();
    std::fs::write(d.join("short.json"), "[4, 10, 10]").unwrap();
    std::fs::write(d.join("wide.json"), "[4, 10, 10, 10, 4, 10, 10, 99]").unwrap();
    for args in [
        &["render", "bad.json"][..],
        &["render", "short.json"],
        &["render", "wide.json"],
        &["render", "missing.json"],
        &["render", "--builtin", "nope"],
        &["render", "--builtin", "cube", "--dims", "0"],
        &["render", "--builtin", "cube", "--export", "obj"],
        &["render"],
    ] {
        let out = supershape(d, args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {out:?}");
        assert!(!out.stderr.is_empty());
    }
    // Out-of-workspace render and unwritable output are runtime failures.
    let out = supershape(d, &["render", "--builtin", "cube", "--scale", "1000"]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let out = supershape(d, &["render", "--builtin", "cube", "-o", "no/such/dir/x.stl"]);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let mut expected = before;
    expected.extend(["bad.json", "short.json", "wide.json"].map(String::from));
    expected.sort();
    assert_eq!(files(d), expected, "failed renders leave no output");
}

#[test]
fn evolve_target_runs_and_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("ga.json"), r#"{ "population_size": 30 }"#).unwrap();
    let args = ["evolve-target", "--target", "star", "--budget", "120", "--runs", "2", "--config", "ga.json", "--dims", "24"];
    let out = supershape(d, &[&args[..], &["--jobs", "2", "--out", "a"]].concat());
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    assert_eq!(files(&d.join("a")), ["aggregate.csv", "star-seed1", "star-seed2"]);
    assert_eq!(
        files(&d.join("a/star-seed1")),
        ["best.stl", "best_genome.json", "config.json", "convergence.csv", "events.jsonl"]
    );
    let csv = std::fs::read_to_string(d.join("a/star-seed1/convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("evaluations,best_fitness,mean_fitness"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 120);
    for (i, w) in rows.windows(2).enumerate() {
        assert_eq!(w[1][0], (i + 2) as f64);
        assert!(w[1][1] >= w[0][1]);
    }
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("a/star-seed2/config.json")).unwrap()).unwrap();
    assert_eq!((cfg["population_size"].as_u64(), cfg["rng_seed"].as_u64()), (Some(30), Some(2)));
    let agg = std::fs::read_to_string(d.join("a/aggregate.csv")).unwrap();
    assert!(agg.starts_with("evaluations,median_best_fitness\n"));
    assert_eq!(agg.lines().count(), 121);

    // Same seed, same results, in any number of threads.
    let out = Command::new(env!("CARGO_BIN_EXE_supershape"))
        .args(&args[..])
        .args(["--jobs", "1"])
        .current_dir(d)
        .env("SUPERSHAPE_RUN_ROOT", d.join("b"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{out:?}");
    for f in ["star-seed1/events.jsonl", "star-seed2/events.jsonl", "star-seed2/best.stl", "aggregate.csv"] {
        assert_eq!(std::fs::read(d.join("a").join(f)).unwrap(), std::fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }

    for (bad, why) in [
        (&["evolve-target", "--target", "sphere"][..], "unknown target"),
        (&["evolve-target", "--target", "cube", "--runs", "0"], "no runs"),
        (&["evolve-target", "--target", "cube", "--stop-at", "2"], "threshold"),
        (&["evolve-target", "--target", "cube", "--config", "missing.json"], "missing config"),
        (&["evolve-target", "--target", "star", "--out", "a"], "existing run"),
        (&["evolve-target", "--budget", "10"], "no target"),
    ] {
        assert_eq!(supershape(d, bad).status.code(), Some(2), "{why}");
    }
    std::fs::write(d.join("bad.json"), r#"{ "tournament_size": 0 }"#).unwrap();
    let out = supershape(d, &["evolve-target", "--target", "cube", "--config", "bad.json"]);
    assert_eq!(out.status.code(), Some(2));
    std::fs::write(d.join("bad.json"), r#"{ "speed": 1 }"#).unwrap();
    assert_eq!(supershape(d, &["evolve-target", "--target", "cube", "--config", "bad.json"]).status.code(), Some(2));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn http(port: u16, method: &str, path: &str, body: &str) -> (u16, String) {
    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    let mut raw = String::new();
    s.read_to_string(&mut raw).unwrap();
    let status = raw[9..12].parse().unwrap();
    let body = raw.split_once("\r\n\r\n").map(|(_, b)| b.to_owned()).unwrap_or_default();
    (status, body)
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn start(root: &Path, port: u16) -> Server {
    let child = Command::new(env!("CARGO_BIN_EXE_supershape"))
        .args(["serve", "--port", &port.to_string()])
        .env("SUPERSHAPE_RUN_ROOT", root)
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    while TcpStream::connect(("127.0.0.1", port)).is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    Server(child)
}

/// Chunked bodies are unwrapped to their JSON payload.
fn json(body: &str) -> serde_json::Value {
    let start = body.find(['{', '[']).unwrap();
    let end = body.rfind(['}', ']']).unwrap();
    serde_json::from_str(&body[start..=end]).unwrap()
}

#[test]
fn serve_survives_restart_and_refuses_bad_starts() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("runs");
    let port = free_port();
    let (run, before) = {
        let _server = start(&root, port);
        let (s, health) = http(port, "GET", "/api/v1/health", "");
        assert_eq!(s, 200);
        assert_eq!(json(&health)["service"], "supershape-session");
        let (s, created) = http(port, "POST", "/api/v1/runs", r#"{"mode":"basic_vawt"}"#);
        assert_eq!(s, 201, "{created}");
        let created = json(&created);
        assert_eq!(created["pending"], 20);
        let run = created["run_id"].as_str().unwrap().to_owned();
        let (s, _) = http(port, "POST", &format!("/api/v1/runs/{run}/individuals/4/fitness"), r#"{"value":537}"#);
        assert_eq!(s, 200);
        let (_, body) = http(port, "GET", &format!("/api/v1/runs/{run}"), "");
        (run, json(&body))
    };
    let _server = start(&root, port);
    let (_, after) = http(port, "GET", &format!("/api/v1/runs/{run}"), "");
    assert_eq!(json(&after), before);
    assert_eq!(before["pending"], 19);

    // Port already taken.
    let out = Command::new(env!("CARGO_BIN_EXE_supershape"))
        .args(["serve", "--port", &port.to_string(), "--run-dir"])
        .arg(dir.path().join("other"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");

    let log = root.join(&run).join("events.jsonl");
    let mut text = std::fs::read_to_string(&log).unwrap();
    text.push_str("not json\n");
    std::fs::write(&log, text).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_supershape"))
        .args(["serve", "--port", &free_port().to_string(), "--run-dir"])
        .arg(&root)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{out:?}");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&run) && stderr.contains("events.jsonl line"), "{stderr}");
}
