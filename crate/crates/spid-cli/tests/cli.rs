use std::path::Path;
use std::process::{Command, Output};

fn spid(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_spid"));
    cmd.args(args).env_remove("SPID_OUT");
    if let Some(dir) = env_out {
        cmd.env("SPID_OUT", dir);
    }
    cmd.output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const TINY: &str = r#"{"N": 3, "n": 4, "M": 10, "K": 2, "duration": 0.5, "seed": 5}"#;

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    std::fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn validate_reports_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "min.json",
        r#"{"N": 4, "n": 8, "M": 50, "K": 2}"#,
    );
    let out = spid(&["validate", &cfg], None);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("mu_crit=0.5"), "{text}");
}

#[test]
fn validate_rejects_with_field_names() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.json",
        r#"{"N": 4, "n": 8, "M": 50, "K": 2, "eta": 1.5}"#,
    );
    let out = spid(&["validate", &bad], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("eta"));

    let unknown = write(
        dir.path(),
        "unknown.json",
        r#"{"N": 4, "n": 8, "M": 50, "K": 2, "speed": 3}"#,
    );
    let out = spid(&["validate", &unknown], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("speed"));

    let out = spid(
        &[
            "validate",
            &dir.path().join("missing.json").display().to_string(),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn batch_writes_one_report_per_seed_and_an_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "tiny.json", TINY);
    let manifest = write(
        dir.path(),
        "batch.json",
        r#"{"scenarios": ["tiny.json"], "output": "out", "seeds": 3, "parallelism": 2}"#,
    );
    let out = spid(&["run", &manifest], None);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let base = dir.path().join("out/tiny");
    for seed in [5, 6, 7] {
        let run = base.join(format!("seed-{seed}"));
        for f in [
            "metrics.json",
            "events.jsonl",
            "dag.txt",
            "tip_pool.csv",
            "finality.csv",
            "throughput.csv",
        ] {
            assert!(run.join(f).is_file(), "{f} missing for seed {seed}");
        }
    }
    let agg: serde_json::Value =
        serde_json::from_slice(&std::fs::read(base.join("aggregate.json")).unwrap()).unwrap();
    assert_eq!(agg["seeds"], serde_json::json!([5, 6, 7]));
    assert_eq!(agg["conservation_holds"], serde_json::json!(true));
    let csv = std::fs::read_to_string(base.join("seed-5/tip_pool.csv")).unwrap();
    assert!(csv.starts_with("time_s,count\n"));

    let first = tree(&dir.path().join("out"));
    let again = spid(&["run", &manifest], None);
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(first, tree(&dir.path().join("out")));
}

#[test]
fn invalid_scenario_is_skipped_but_reported() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "good.json", TINY);
    write(
        dir.path(),
        "bad.json",
        r#"{"N": 0, "n": 4, "M": 10, "K": 2}"#,
    );
    let manifest = write(
        dir.path(),
        "m.json",
        r#"{"scenarios": ["bad.json", "good.json"], "output": "out", "seeds": [1], "emit": ["metrics"]}"#,
    );
    let out = spid(&["run", &manifest], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("out/good/seed-1/metrics.json").is_file());
    assert!(!dir.path().join("out/good/seed-1/events.jsonl").exists());
    assert!(!dir.path().join("out/bad").exists());
}

#[test]
fn unwritable_output_fails_before_running() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "tiny.json", TINY);
    write(dir.path(), "blocker", "");
    let manifest = write(
        dir.path(),
        "m.json",
        r#"{"scenarios": ["tiny.json"], "output": "blocker/out"}"#,
    );
    let out = spid(&["run", &manifest], None);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not writable"));
}

#[test]
fn bad_manifests_are_validation_failures() {
    let dir = tempfile::tempdir().unwrap();
    let m = write(
        dir.path(),
        "m.json",
        r#"{"scenarios": ["a.json"], "seeds": []}"#,
    );
    assert_eq!(spid(&["run", &m], None).status.code(), Some(1));
    let m = write(dir.path(), "n.json", "not json");
    assert_eq!(spid(&["run", &m], None).status.code(), Some(1));
}

#[test]
fn preset_uses_the_environment_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = spid(&["preset", "fig7-k2"], Some(dir.path()));
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for label in ["K2-mu35", "K2-mu55"] {
        assert!(dir
            .path()
            .join("fig7-k2")
            .join(label)
            .join("seed-0/metrics.json")
            .is_file());
        assert!(dir
            .path()
            .join("fig7-k2")
            .join(label)
            .join("aggregate.json")
            .is_file());
    }
    let out = spid(
        &["preset", "fig9", "--out", &dir.path().display().to_string()],
        None,
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fig7-k2"));
}
