use std::path::PathBuf;

use widthforge_core::archspec::build_preset;
use widthforge_core::optimizers::{
    optimize_greedy, AuditLog, BridgeEvaluator, Evaluator, EvaluatorBudget, OptimizerConfig, EVALUATOR_CMD_ENV,
};
use widthforge_core::projection::DatasetSpec;
use widthforge_core::{ArchSpec, Error};

/// Writes a small trainer stand-in and returns the command that runs it.
///
/// `mode` selects a misbehaviour: `ok`, `wrong-id`, `short-scores`, `error`, `diverge`, `exit`.
fn fake_trainer(dir: &tempfile::TempDir, mode: &str) -> String {
    let script = r#"
import json, sys
mode = sys.argv[1]
for line in sys.stdin:
    req = json.loads(line)
    units = req["arch"]["units"]
    total = sum(u["base_channels"] for u in units)
    resp = {
        "request_id": req["request_id"],
        "accuracy_proxy": total / (total + 100.0),
        "channel_scores": [[1.0 / (1 + j) for j in range(u["base_channels"])] for u in units],
        "cost_flops": 7,
        "recipe": "fake",
    }
    if mode == "wrong-id":
        resp["request_id"] = "other"
    elif mode == "short-scores":
        resp["channel_scores"] = resp["channel_scores"][1:]
    elif mode == "error":
        resp = {"request_id": req["request_id"], "error": "out of memory"}
    elif mode == "diverge":
        resp["diverged"] = True
    elif mode == "exit":
        sys.exit(0)
    print(json.dumps(resp), flush=True)
"#;
    let path: PathBuf = dir.path().join("trainer.py");
    std::fs::write(&path, script).unwrap();
    format!("python3 {} {mode}", path.display())
}

fn setup() -> (ArchSpec, DatasetSpec, EvaluatorBudget) {
    let mut o = widthforge_core::archspec::Overrides::new();
    o.insert("units".into(), 2.into());
    o.insert("width".into(), 16.into());
    (build_preset("toy-k-units", Some(&o)).unwrap(), DatasetSpec::balanced("d", 10, 2, 16), EvaluatorBudget::default())
}

#[test]
fn well_behaved_trainer_answers_each_request() {
    let dir = tempfile::tempdir().unwrap();
    let (arch, ds, budget) = setup();
    let e = BridgeEvaluator::new(fake_trainer(&dir, "ok"), "toy", 0);
    assert!(!e.concurrent());
    let r = e.evaluate(&arch, &ds, &budget).unwrap();
    assert!((r.accuracy_proxy - 32.0 / 132.0).abs() < 1e-12);
    assert_eq!(r.channel_scores.len(), 2);
    assert_eq!(r.channel_scores[0].len(), 16);
    assert_eq!(r.cost_flops, 7);
    // The same process serves a whole greedy run.
    let mut log = AuditLog::default();
    let run = optimize_greedy::<f64>(&arch, &ds, &e, &OptimizerConfig::default(), &budget, &mut log).unwrap();
    assert!(log.len() > 1);
    assert_eq!(log.total_cost_flops(), 7 * log.len() as u128);
    assert_eq!(run.counts.len(), 2);
}

#[test]
fn protocol_violations_are_evaluator_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (arch, ds, budget) = setup();
    for mode in ["wrong-id", "short-scores", "error", "exit"] {
        let e = BridgeEvaluator::new(fake_trainer(&dir, mode), "toy", 0);
        match e.evaluate(&arch, &ds, &budget) {
            Err(Error::Evaluator(msg)) => assert!(!msg.is_empty(), "{mode}"),
            other => panic!("{mode}: {other:?}"),
        }
    }
}

#[test]
fn diverged_run_scores_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (arch, ds, budget) = setup();
    let e = BridgeEvaluator::new(fake_trainer(&dir, "diverge"), "toy", 0);
    assert_eq!(e.evaluate(&arch, &ds, &budget).unwrap().accuracy_proxy, 0.0);
}

#[test]
fn missing_command_is_reported() {
    if std::env::var_os(EVALUATOR_CMD_ENV).is_some() {
        return;
    }
    assert!(matches!(BridgeEvaluator::from_env("toy", 0), Err(Error::Evaluator(_))));
    let e = BridgeEvaluator::new("/nonexistent/trainer-binary", "toy", 0);
    let (arch, ds, budget) = setup();
    assert!(matches!(e.evaluate(&arch, &ds, &budget), Err(Error::Evaluator(_))));
}
