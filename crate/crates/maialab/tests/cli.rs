use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn maialab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maialab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| {
        panic!("stdout is not json ({e}): {}", String::from_utf8_lossy(&o.stdout))
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn describe_one_unit() {
    let dir = tempfile::tempdir().unwrap();
    let o = maialab(&["describe", "--neuron", "synthetic:table_a2:dog_given_leash"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v = stdout_json(&o);
    assert_eq!(v["status"], "ok");
    assert_eq!(v["summary"][0]["agreement"], 1.0);
    let manifest = read_json(&dir.path().join("manifest.json"));
    let artifacts = manifest["artifacts"].as_array().unwrap();
    assert!(artifacts.iter().any(|a| a.as_str().unwrap().ends_with("transcript.jsonl")));
    assert!(manifest["finished_at"].as_u64() >= manifest["started_at"].as_u64());
}

#[test]
fn config_errors_exit_2_with_json_on_stderr() {
    let dir = tempfile::tempdir().unwrap();
    let bad_client = dir.path().join("bad.toml");
    std::fs::write(&bad_client, "[clients]\ngenerator = \"dall-e-9\"\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["describe", "--neuron", "synthetic:table_a2:unicorn"],
        vec!["describe"],
        vec!["audit", "spurious"],
        vec!["audit", "bias", "--class", "flute", "--planted-bias", "warp drive"],
        vec!["describe", "--neuron", "synthetic:table_a2:stripes", "--config", bad_client.to_str().unwrap()],
        vec!["describe", "--neuron", "synthetic:table_a2:stripes", "--backbone", "oracle-9000"],
    ];
    for args in cases {
        let o = maialab(&args, &dir.path().join("run"));
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err: Value = serde_json::from_slice(&o.stderr)
            .unwrap_or_else(|_| panic!("{args:?}: {}", String::from_utf8_lossy(&o.stderr)));
        assert!(err["error"].is_string(), "{args:?}");
    }
}

#[test]
fn bias_audit_finds_the_planted_context() {
    let dir = tempfile::tempdir().unwrap();
    let o = maialab(&["audit", "bias", "--class", "cup", "--planted-bias", "table"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout_json(&o)["summary"]["found"], true);
    let report = read_json(&dir.path().join("bias_report.json"));
    assert_eq!(report["planted_context"], "table");
}

#[test]
fn eval_scores_a_described_unit() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("describe");
    let o = maialab(&["describe", "--neuron", "synthetic:table_a2:stripes"], &run);
    assert_eq!(o.status.code(), Some(0));
    let unit = std::fs::read_dir(run.join("units")).unwrap().next().unwrap().unwrap().path();
    let report = read_json(&unit.join("report.json"));
    let manifest = serde_json::json!({
        "entries": [{ "method": "scripted", "neuron": "synthetic:table_a2:stripes", "report": report }]
    });
    let path = dir.path().join("eval.json");
    std::fs::write(&path, manifest.to_string()).unwrap();
    let o = maialab(&["eval", "--manifest", path.to_str().unwrap()], &dir.path().join("eval"));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("eval/eval.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("method,layer,units,positive_mean,neutral_mean"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    let (pos, neu): (f64, f64) = (row[3].parse().unwrap(), row[4].parse().unwrap());
    assert!(pos - neu >= 0.5, "{csv}");
}

#[test]
fn ablate_writes_counters() {
    let dir = tempfile::tempdir().unwrap();
    let o = maialab(
        &["ablate", "--neuron", "synthetic:table_a2:0", "--configs", "exemplars-only"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("ablation.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "exemplars-only");
    assert_eq!((row[6], row[7]), ("0", "0"));
}

#[test]
fn spurious_audit_writes_table_and_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let o = maialab(
        &["audit", "spurious", "--planted", "default", "--random-subsets", "3", "--seed", "2"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["results.csv", "results.json", "dataset/features.csv", "dataset/pairings.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let subsets: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(subsets[..2], ["all", "l1-top50"]);
    assert!(subsets.iter().any(|s| s.starts_with("agent-")));
}
