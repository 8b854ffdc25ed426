use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cfmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cfmm")).args(args).output().expect("spawn cfmm")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("cfg.json");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = r#"{"L": 8, "K": 4, "N": 16, "N_RF": 4, "cluster_size": 3, "max_iters": 6}"#;

#[test]
fn validate_config_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_config(dir.path(), SMALL);
    let out = cfmm(&["validate-config", &good]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));

    let unknown = write_config(dir.path(), r#"{"L": 8, "antennas": 4}"#);
    let out = cfmm(&["validate-config", &unknown]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("antennas"));

    let infeasible = write_config(dir.path(), r#"{"L": 2, "K": 8, "N_RF": 2, "cluster_size": 2}"#);
    assert_eq!(cfmm(&["validate-config", &infeasible]).status.code(), Some(2));

    let missing = dir.path().join("missing.json");
    assert_eq!(cfmm(&["validate-config", missing.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn run_power_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("power.csv");
    let status = cfmm(&[
        "run", "--experiment", "power", "--config", &cfg, "--drops", "2", "--seed", "17", "--out",
        out.to_str().unwrap(), "--format", "csv",
    ]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "scheme,sweep,drop,iter,sum_rate,flops,wall_ms");
    // 6 power levels x 3 schemes x 2 drops
    assert_eq!(lines.len(), 1 + 36);
    assert!(lines[1].starts_with("proposed,0.5,0,,"));
}

#[test]
fn run_convergence_writes_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("conv.json");
    let status = cfmm(&[
        "run", "--experiment", "convergence", "--config", &cfg, "--drops", "1", "--seed", "3", "--out",
        out.to_str().unwrap(), "--format", "json",
    ]);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["metadata"]["config"]["L"], 8);
    assert_eq!(doc["metadata"]["seed"], 3);
    let rows = doc["rows"].as_array().unwrap();
    // orders {1,3,5,7} and exact, each max_iters + 1 records
    assert_eq!(rows.len(), 5 * 7);
    assert_eq!(rows.last().unwrap()["sweep"], "inf");
}

#[test]
fn same_seed_same_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let s = cfmm(&[
            "run", "--experiment", "antenna", "--config", &cfg, "--drops", "2", "--seed", "8", "--out",
            out.to_str().unwrap(), "--schemes", "proposed,proposed-zf",
        ]);
        assert_eq!(s.status.code(), Some(0), "{}", String::from_utf8_lossy(&s.stderr));
        // wall_ms differs between runs
        fs::read_to_string(out)
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect::<Vec<_>>()
    };
    let a = run("a.csv");
    assert_eq!(a, run("b.csv"));
    assert_eq!(a.len(), 1 + 3 * 2 * 2);
}

#[test]
fn drop_dumps_assignment_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = cfmm(&["drop", "--config", &cfg, "--seed", "4", "--dump-assignment", "--dump-trace"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["rate_bps_hz"].as_array().unwrap().len(), 4);
    assert_eq!(doc["assignment"]["aps"].as_array().unwrap().len(), 8);
    assert!(doc["history"].as_array().unwrap().len() >= 2);
    assert_eq!(doc["topology"]["ap_xy"].as_array().unwrap().len(), 8);

    let plain = cfmm(&["drop", "--config", &cfg, "--seed", "4"]);
    let plain: serde_json::Value = serde_json::from_slice(&plain.stdout).unwrap();
    assert!(plain.get("assignment").is_none());
    assert_eq!(plain["sum_rate"], doc["sum_rate"]);
}

#[test]
fn exit_codes_for_bad_usage_and_runtime_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let bad = cfmm(&["run", "--experiment", "fig9", "--config", &cfg, "--out", "x.csv"]);
    assert_eq!(bad.status.code(), Some(2));

    let unwritable = dir.path().join("no/such/dir/out.csv");
    let out = cfmm(&[
        "run", "--experiment", "power", "--config", &cfg, "--drops", "1", "--out", unwritable.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("out.csv"));

    let zero = cfmm(&["run", "--experiment", "power", "--config", &cfg, "--drops", "0", "--out", "x.csv"]);
    assert_eq!(zero.status.code(), Some(2));
}
