use std::path::PathBuf;
use std::process::{Command, Output};

fn framing(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_framing")).args(args).output().expect("run framing")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("framing-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn net_info_ieee14() {
    let o = framing(&["net-info"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("buses=14 meters=54 observable=yes"), "{out}");
    assert!(out.contains("lines=20 state_dim=13 rank=13"), "{out}");
    assert!(out.contains("reference_bus=1"), "{out}");
}

#[test]
fn net_info_ieee118() {
    let o = framing(&["net-info", "--case", "ieee118"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("buses=118"));
}

#[test]
fn input_errors_exit_2() {
    assert_eq!(framing(&["net-info", "--case", "/no/such/case.cdf"]).status.code(), Some(2));
    assert_eq!(framing(&["critical-check", "--meters", "2,3-99"]).status.code(), Some(2));
    assert_eq!(framing(&["cuts", "--runs", "0", "--seed", "1"]).status.code(), Some(2));
    assert_eq!(framing(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn infeasible_attack_exits_3() {
    let o = framing(&["attack-design", "--adversary", "1-2", "--framed", "5"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("feasible dimension is zero"));
}

#[test]
fn critical_check_bus3_set() {
    let o = framing(&["critical-check", "--meters", "2,3,4,2-3,3-2,3-4,4-3"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("rank_without=12"), "{out}");
    assert!(out.contains("critical=yes"), "{out}");
}

#[test]
fn cuts_are_reproducible_and_default_seed_is_announced() {
    let a = framing(&["cuts", "--runs", "300", "--seed", "9"]);
    let b = framing(&["cuts", "--runs", "300", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(stdout(&a), stdout(&b));
    let d = framing(&["cuts", "--runs", "50"]);
    assert!(String::from_utf8_lossy(&d.stderr).contains("seed=20110 (default)"));
}

#[test]
fn design_then_predict() {
    let plan = tmp("plan.json");
    let report = tmp("report.json");
    let o = framing(&[
        "attack-design",
        "--adversary",
        "2-3,3-4,4-3",
        "--framed",
        "2,3,4,3-2",
        "--target",
        "+3",
        "--magnitude-pct",
        "2",
        "--out",
        plan.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("feasible_dim=1"));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&plan).unwrap()).unwrap();
    assert!(json.is_object());

    let o = framing(&["attack-predict", "--plan", plan.to_str().unwrap(), "--report", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("sequence=3,4,3-2,2"), "{out}");
    assert!(out.contains("condition=true"), "{out}");
    // Bus 3 moves in the requested direction, every other bus stays put.
    let bus3 = out.lines().find(|l| l.split_whitespace().next() == Some("3")).unwrap();
    let deg: f64 = bus3.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(deg > 1.0, "{bus3}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!(report.is_object());
}

#[test]
fn predict_from_cut() {
    let o = framing(&["attack-predict", "--cut", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    assert!(out.contains("condition=true"), "{out}");
    assert!(out.contains("delta_x_minus_y"), "{out}");
}

#[test]
fn sim_sweep_writes_csv() {
    let cfg = tmp("tiny.toml");
    std::fs::write(
        &cfg,
        r#"
case = "ieee14"
model = "dc"
snr_db = [40.0]
runs = 20
alpha = 0.04
seed = 3

[[scenario]]
name = "bus3"
adversary = "2-3,3-4,4-3"
framed = "2,3,4,3-2"
attacks = ["none", "framing"]
magnitudes_pct = [1.0]
"#,
    )
    .unwrap();
    let o = framing(&["sim-sweep", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert!(lines.len() >= 3, "{out}");
    assert!(lines[0].contains(','));
    let o2 = framing(&["sim-sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out, stdout(&o2));

    let o = framing(&["sim-run", "--config", cfg.to_str().unwrap(), "--runs", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
