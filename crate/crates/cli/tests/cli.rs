//! Runs the `wmtom` binary end to end.

use std::path::Path;
use std::process::{Command, Output};

fn wmtom(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_wmtom"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn golden(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
        .display()
        .to_string()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn wm_matches_golden_render() {
    let out = wmtom(&["wm", "--story", &golden("s1.txt")], &[]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let expected = std::fs::read_to_string(golden("s1.expected")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), expected);
}

#[test]
fn wm_rejects_step_past_end() {
    let out = wmtom(&["wm", "--story", &golden("s1.txt"), "--at", "9"], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_without_config_is_a_usage_error() {
    let out = wmtom(
        &["eval", "--items", "items.jsonl", "--conditions", "c.json"],
        &[],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_is_deterministic() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let dir = d.path().display().to_string();
        let out = wmtom(&["gen", "--seed", "7", "--n", "10", "--out", &dir], &[]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for f in ["items.jsonl", "gold_traces.json"] {
        let a = std::fs::read(dirs[0].path().join(f)).unwrap();
        let b = std::fs::read(dirs[1].path().join(f)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{f} differs between runs");
    }
}

fn eval_setup(dir: &Path, provider: &str) -> (String, String, String) {
    let gen_dir = dir.join("gen");
    let out = wmtom(
        &[
            "gen",
            "--seed",
            "3",
            "--n",
            "4",
            "--out",
            &gen_dir.display().to_string(),
        ],
        &[],
    );
    assert!(out.status.success());
    let config = write(
        dir,
        "config.toml",
        &format!("[providers.default]\n{provider}\n"),
    );
    let conds = write(
        dir,
        "conditions.json",
        r#"[{"id": "baseline", "k": 0}, {"id": "ours", "lexicon": "ours", "k": 3}]"#,
    );
    (
        gen_dir.join("items.jsonl").display().to_string(),
        config,
        conds,
    )
}

#[test]
fn scripted_eval_runs_with_network_denied() {
    let dir = tempfile::tempdir().unwrap();
    let (items, config, conds) = eval_setup(
        dir.path(),
        "model = \"m\"\nmode = \"scripted\"\nscript = \"guidable\"",
    );
    let out_dir = dir.path().join("out").display().to_string();
    let out = wmtom(
        &[
            "eval",
            "--items",
            &items,
            "--conditions",
            &conds,
            "--config",
            &config,
            "--out",
            &out_dir,
        ],
        &[("WMTOM_DENY_NETWORK", "1")],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in ["report.json", "report.md", "manifest.json", "records.jsonl"] {
        assert!(dir.path().join("out").join(f).exists(), "missing {f}");
    }
}

#[test]
fn live_provider_fails_when_network_denied() {
    let dir = tempfile::tempdir().unwrap();
    let (items, config, conds) = eval_setup(
        dir.path(),
        "model = \"m\"\nmode = \"live\"\nbase_url = \"http://127.0.0.1:9/v1\"",
    );
    let out_dir = dir.path().join("out").display().to_string();
    let out = wmtom(
        &[
            "eval",
            "--items",
            &items,
            "--conditions",
            &conds,
            "--config",
            &config,
            "--out",
            &out_dir,
        ],
        &[("WMTOM_DENY_NETWORK", "1")],
    );
    assert_eq!(
        out.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr)
        .to_lowercase()
        .contains("network"));
}
