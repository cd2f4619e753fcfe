use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn riverbench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_riverbench"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = riverbench(&["gen", "--level", "easy", "--seed", "1", "--width", "96", "--out", arg(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["world_easy_1.json", "world_easy_1.ppm"]);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap());
    }
}

#[test]
fn invalid_level_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let o = riverbench(&["gen", "--level", "extreme", "--out", arg(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("extreme") && err.contains("Usage"), "{err}");
}

#[test]
fn collect_writes_pairs_and_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = riverbench(&["collect", "--count", "10", "--seed", "3", "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let index: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("index.json")).unwrap()).unwrap();
    let entries = index["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 10);
    for e in entries {
        assert!(out.join(e["rgb"].as_str().unwrap()).exists());
        assert!(out.join(e["mask"].as_str().unwrap()).exists());
    }
    assert_eq!(fs::read_dir(&out).unwrap().count(), 21);
}

#[test]
fn report_on_empty_directory_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("empty");
    fs::create_dir(&input).unwrap();
    let out = dir.path().join("report");
    let o = riverbench(&["report", "--input", arg(&input), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    let out = dir.path().join("out");
    for args in [
        vec!["train-vae", "--data", arg(&nowhere), "--out", arg(&out)],
        vec!["eval", "--run", arg(&nowhere), "--out", arg(&out)],
        vec!["train", "--vae", arg(&nowhere), "--out", arg(&out)],
    ] {
        assert_eq!(riverbench(&args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn config_errors_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "algo.horizn = 128\n").unwrap();
    let out = dir.path().join("out");
    let o = riverbench(&["train", "--config", arg(&cfg), "--out", arg(&out)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("horizn"));

    fs::write(&cfg, "total_steps = 0\n").unwrap();
    assert_eq!(riverbench(&["train", "--config", arg(&cfg), "--out", arg(&out)]).status.code(), Some(3));
    assert!(!out.exists());
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    fs::write(
        &cfg,
        "# tiny run\nvae_frames = 16\nvae.epochs = 1\nalgo.horizon = 200\nalgo.minibatch_size = 100\n\
         checkpoint_interval = 200\nlevel = hard\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let o = riverbench(&[
        "train", "--config", arg(&cfg), "--level", "easy", "--algo", "p3o", "--seeds", "2", "--steps", "400",
        "--out", arg(&run),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    // Flags override the file; file values override defaults.
    assert_eq!(manifest["config"]["level"], "Easy");
    assert_eq!(manifest["config"]["algorithm"], "P3o");
    assert_eq!(manifest["config"]["algo"]["horizon"], 200);
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    for s in 0..2 {
        assert!(run.join(format!("metrics_seed{s}.csv")).exists());
    }

    let ev = dir.path().join("eval");
    let o = riverbench(&["eval", "--run", arg(&run), "--level", "medium", "--episodes", "2", "--out", arg(&ev)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("P3O"));
    let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("eval_medium.json")).unwrap()).unwrap();
    assert_eq!(rep["episodes"].as_array().unwrap().len(), 4);

    let out = dir.path().join("report");
    let o = riverbench(&["report", "--input", arg(dir.path()), "--out", arg(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("summary.txt").exists());
    assert!(out.join("curves.gp").exists());
}
