use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

struct Workspace {
    dir: tempfile::TempDir,
}

impl Workspace {
    fn new() -> Self {
        Workspace { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn run(&self, args: &[&str]) -> Output {
        self.run_with_env(args, None)
    }

    fn run_with_env(&self, args: &[&str], bridge: Option<&str>) -> Output {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_widthforge"));
        cmd.args(args).current_dir(self.dir.path()).env_remove("WIDTHFORGE_EVALUATOR_CMD");
        if let Some(c) = bridge {
            cmd.env("WIDTHFORGE_EVALUATOR_CMD", c);
        }
        cmd.output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }

    fn dataset(&self) -> String {
        self.ok(&["dataset", "--name", "d", "--classes", "10", "--per-class", "6", "--resolution", "32", "--out", "ds.json"]);
        self.arg("ds.json")
    }
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Exit code plus the `code` field of the JSON error on stderr.
fn failure(out: &Output) -> (i32, String) {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    let err: Value = serde_json::from_str(line).unwrap_or_else(|_| panic!("stderr is not JSON: {stderr}"));
    (out.status.code().unwrap(), err["code"].as_str().unwrap().to_string())
}

#[test]
fn preset_and_identity_projection_agree() {
    let ws = Workspace::new();
    let preset = ws.ok(&["preset", "resnet18"]);
    ws.ok(&["project", "resnet18", "--out", "p"]);
    let projected = std::fs::read_to_string(ws.path("p/arch.json")).unwrap();
    assert_eq!(preset.trim(), projected.trim());
    for name in ["dataset.json", "manifest.json"] {
        assert!(ws.path("p").join(name).exists(), "{name}");
    }
    let flops: Value = serde_json::from_str(&ws.ok(&["flops", "resnet18"])).unwrap();
    assert_eq!(flops["total"], 1_814_073_344u64);
}

#[test]
fn projection_scales_every_axis() {
    let ws = Workspace::new();
    ws.ok(&["project", "resnet18", "--width", "0.312", "--depth", "0.5", "--resolution", "112", "--fraction", "0.1", "--out", "p"]);
    let arch = json(&ws.path("p/arch.json"));
    assert_eq!(arch["stem"][0]["base_out_channels"], 20);
    assert_eq!(arch["default_resolution"], 112);
    assert!(arch["stages"].as_array().unwrap().iter().all(|s| s["blocks"].as_array().unwrap().len() == 1));
    let ds = json(&ws.path("p/dataset.json"));
    assert_eq!(ds["resolution"], 112);
    let total: u64 = ds["samples_per_class"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 100_000);
}

#[test]
fn optimize_writes_its_artifacts() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    ws.ok(&["optimize", "toy-k-units", &ds, "--seed", "7", "--out", "run"]);
    for name in ["width.json", "audit.json", "overhead.json", "record.json", "manifest.json"] {
        assert!(ws.path("run").join(name).exists(), "{name}");
    }
    let width = json(&ws.path("run/width.json"));
    assert_eq!(width.as_array().unwrap().len(), 3);
    let audit = json(&ws.path("run/audit.json"));
    let overhead = json(&ws.path("run/overhead.json"));
    let entries = audit["entries"].as_array().unwrap();
    assert!(!entries.is_empty());
    assert_eq!(overhead["opt_flops"], entries.last().unwrap()["cumulative_cost_flops"]);
    let record = json(&ws.path("run/record.json"));
    assert_eq!(record["algorithm"], "greedy");
    assert_eq!(record["width"], width);

    ws.ok(&["optimize", "toy-k-units", &ds, "--algo", "uniform", "--out", "uni"]);
    assert_eq!(json(&ws.path("uni/width.json")), serde_json::json!(["1", "1", "1"]));
    ws.ok(&["optimize", "toy-k-units", &ds, "--algo", "slimming", "--out", "slim"]);
    assert_eq!(json(&ws.path("slim/audit.json"))["entries"].as_array().unwrap().len(), 1);
}

#[test]
fn transfer_round_trips_on_the_same_arch() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    ws.ok(&["optimize", "toy-k-units", &ds, "--seed", "3", "--out", "run"]);
    ws.ok(&["transfer", &ws.arg("run/width.json"), "toy-k-units", "toy-k-units", "--out", "t"]);
    let audit = json(&ws.path("t/audit.json"));
    assert_eq!(audit["granularity_failure"], false);
    assert!(audit["rel_error"].as_f64().unwrap() <= 0.005);
    assert_eq!(json(&ws.path("t/width.json")).as_array().unwrap().len(), 3);
}

#[test]
fn failures_map_to_exit_codes() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    std::fs::write(ws.path("w.json"), r#"["1", "1", "1"]"#).unwrap();

    assert_eq!(failure(&ws.run(&["flops", "no-such-arch"])), (2, "validation".into()));
    assert_eq!(failure(&ws.run(&["preset", "resnet18", "--set", "bogus=1"])), (2, "validation".into()));
    assert_eq!(failure(&ws.run(&["overhead", "1,1,224,1", "0.5,1,224,1"])), (2, "validation".into()));
    assert_eq!(failure(&ws.run(&["overhead", "0.5,1,224,1", "1,1,224,1", "--mode", "measured"])), (2, "validation".into()));
    assert_eq!(failure(&ws.run(&["report", &ws.arg("")])), (2, "validation".into()));
    assert_eq!(failure(&ws.run(&["no-such-command"])), (2, "usage".into()));
    assert_eq!(failure(&ws.run(&["flops", "toy-k-units", "--width", "missing.json"])).1, "io");

    assert_eq!(failure(&ws.run(&["optimize", "toy-k-units", &ds, "--algo", "dmcp", "--out", "x"])), (3, "evaluator".into()));
    assert_eq!(failure(&ws.run(&["optimize", "toy-k-units", &ds, "--evaluator", "bridge", "--out", "x"])), (3, "evaluator".into()));

    let w = ws.arg("w.json");
    assert_eq!(failure(&ws.run(&["transfer", &w, "toy-k-units", "resnet18", "--out", "t"])), (4, "extrapolation".into()));
}

#[test]
fn bridge_command_comes_from_the_environment() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    let script = ws.path("trainer.py");
    std::fs::write(
        &script,
        r#"
import json, sys
for line in sys.stdin:
    req = json.loads(line)
    units = req["arch"]["units"]
    total = sum(u["base_channels"] for u in units)
    print(json.dumps({
        "request_id": req["request_id"],
        "accuracy_proxy": total / (total + 64.0),
        "channel_scores": [[1.0] * u["base_channels"] for u in units],
        "cost_flops": 5,
    }), flush=True)
"#,
    )
    .unwrap();
    let cmd = format!("python3 {}", script.display());
    let out = ws.run_with_env(&["optimize", "toy-k-units", &ds, "--evaluator", "bridge", "--out", "b"], Some(&cmd));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let audit = json(&ws.path("b/audit.json"));
    let n = audit["entries"].as_array().unwrap().len() as u64;
    assert_eq!(json(&ws.path("b/overhead.json"))["opt_flops"], 5 * n);

    let broken = ws.run_with_env(&["optimize", "toy-k-units", &ds, "--evaluator", "bridge", "--out", "c"], Some("exit 0"));
    assert_eq!(failure(&broken), (3, "evaluator".into()));
}

#[test]
fn report_and_similarity_read_run_outputs() {
    let ws = Workspace::new();
    let ds = ws.dataset();
    for seed in ["1", "2"] {
        let out = format!("runs/s{seed}");
        ws.ok(&["optimize", "toy-k-units", &ds, "--seed", seed, "--source-config", "0.5,1,32,1", "--target-config", "1,1,32,1", "--out", &out]);
    }
    let csv = ws.ok(&["report", &ws.arg("runs")]);
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "algorithm,source,target,saved_fraction,reduction_factor,accuracy_mean,accuracy_std,seeds");
    let row = lines.next().unwrap();
    assert!(row.starts_with("greedy,"), "{row}");
    assert!(row.ends_with(",2"), "{row}");
    assert!(lines.next().is_none());

    let grid: Value = serde_json::from_str(&ws.ok(&[
        "similarity",
        &ws.arg("runs/s1/width.json"),
        &ws.arg("runs/s2/width.json"),
        "--format",
        "json",
    ]))
    .unwrap();
    let values = grid["values"].as_array().unwrap();
    assert_eq!(values.len(), 2);
    assert_eq!(values[0][1], values[1][0]);
    assert!((values[0][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn overhead_reproduces_compound_savings() {
    let ws = Workspace::new();
    let out: Value = serde_json::from_str(&ws.ok(&["overhead", "0.707,1,160,0.1", "1.414,2,320,1"])).unwrap();
    assert_eq!(out[0]["exact_reduction"], "320");
    assert_eq!(out[0]["saved_fraction"], 0.996875);
    let csv = ws.ok(&["overhead", "0.312,1,224,1", "1.732,1,224,1", "--arch", "resnet18", "--mode", "measured", "--format", "csv"]);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(2).unwrap().starts_with("measured,"));
}
