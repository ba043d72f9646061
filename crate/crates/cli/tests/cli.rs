use std::path::Path;
use std::process::{Command, Output};

fn pop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pop")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &str = r#"
classes = 40
images_per_class = 4
attributes = 20
n_train = 600
n_val = 200
n_test = 200
epochs = 2
"#;

fn small_data(dir: &Path, task: &str) {
    let spec = dir.join("spec.toml");
    std::fs::write(&spec, SMALL).unwrap();
    let o = pop(&["gen-data", "--task", task, "--spec", p(&spec), "--seed", "3", "--out", p(dir)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn gen_data_writes_world_and_splits() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path(), "object-attr");
    for f in ["world.json", "train.jsonl", "val.jsonl", "test.jsonl", "dataset.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let train = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
    assert_eq!(train.lines().count(), 600);
}

#[test]
fn train_eval_roundtrip_for_pop_and_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "object-only");
    let cfg = d.join("spec.toml");
    for model in ["pop", "pipeline"] {
        let ck = d.join(format!("{model}.json"));
        let o = pop(&[
            "train", "--model", model, "--data", p(&d.join("train.jsonl")), "--val", p(&d.join("val.jsonl")),
            "--config", p(&cfg), "--out-checkpoint", p(&ck),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let report = d.join(format!("{model}-metrics.json"));
        let o = pop(&[
            "eval", "--model", model, "--checkpoint", p(&ck), "--test", p(&d.join("test.jsonl")), "--report", p(&report),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(stdout(&o).contains("Total"));
        let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
        assert!(metrics["total"].as_f64().unwrap() >= 0.0);
    }
    // the checkpoint kind is checked
    let o = pop(&["eval", "--model", "pop", "--checkpoint", p(&d.join("pipeline.json")), "--test", p(&d.join("test.jsonl"))]);
    assert_eq!(code(&o), 2);
    // re-tuning the pipeline thresholds
    let tuned = d.join("tuned.json");
    let o = pop(&[
        "tune-thresholds", "--checkpoint", p(&d.join("pipeline.json")), "--val", p(&d.join("val.jsonl")), "--out", p(&tuned),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tuned.exists());
}

#[test]
fn baselines_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "object-attr");
    let test = d.join("test.jsonl");
    let train = d.join("train.jsonl");
    for kind in ["random", "majority", "probability", "attr-random"] {
        let o = pop(&["baseline", "--kind", kind, "--test", p(&test), "--train", p(&train)]);
        assert_eq!(code(&o), 0, "{kind}: {}", stderr(&o));
    }
    // the CNN labeler handles object-only acts, attr-random needs attributes
    assert_eq!(code(&pop(&["baseline", "--kind", "cnn", "--test", p(&test)])), 2);
    let plain = tempfile::tempdir().unwrap();
    small_data(plain.path(), "object-only");
    let plain_test = plain.path().join("test.jsonl");
    let o = pop(&["baseline", "--kind", "cnn", "--test", p(&plain_test)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("100.0"));
    assert_eq!(code(&pop(&["baseline", "--kind", "attr-random", "--test", p(&plain_test)])), 2);
    let o = pop(&["baseline", "--kind", "majority", "--test", p(&test)]);
    assert!(stdout(&o).contains("0.0"));
    let o = pop(&["baseline", "--kind", "oracle", "--test", p(&test)]);
    assert_eq!(code(&o), 2);
    let o = pop(&["stats", "--train", p(&train), "--test", p(&test)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn gradcheck_passes() {
    for model in ["pop", "trpop", "pipeline"] {
        let o = pop(&["gradcheck", "--model", model, "--trials", "4"]);
        assert_eq!(code(&o), 0, "{model}: {}", stderr(&o));
    }
}

#[test]
fn run_writes_bundle_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("m.toml");
    std::fs::write(&manifest, format!("name = \"cli\"\nsystem = \"pop\"\ntask = \"object-only\"\n{SMALL}")).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = pop(&["run", "--manifest", p(&manifest), "--out", p(out)]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["report.json", "report.txt", "manifest.toml", "run.json", "checkpoint.json"] {
        assert!(a.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read(a.join("report.json")).unwrap(), std::fs::read(b.join("report.json")).unwrap());
}

#[test]
fn exit_codes() {
    // usage
    assert_eq!(code(&pop(&["frobnicate"])), 1);
    assert_eq!(code(&pop(&["train", "--model", "pop"])), 1);
    assert_eq!(code(&pop(&["--help"])), 0);

    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    small_data(d, "object-only");

    // data errors
    let o = pop(&["stats", "--train", p(&d.join("missing.jsonl"))]);
    assert_eq!(code(&o), 2);
    let bad = d.join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": 1}\n").unwrap();
    let o = pop(&["stats", "--train", p(&bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.jsonl"));
    let manifest = d.join("m.toml");
    std::fs::write(&manifest, "no_such_key = 1\n").unwrap();
    assert_eq!(code(&pop(&["run", "--manifest", p(&manifest), "--out", p(&d.join("o"))])), 2);

    // numeric failure: a huge learning rate overflows the loss
    let cfg = d.join("hot.toml");
    std::fs::write(&cfg, "lr0 = 1e200\nmomentum = 0.0\nepochs = 2\n").unwrap();
    let o = pop(&[
        "train", "--model", "pop", "--data", p(&d.join("train.jsonl")), "--config", p(&cfg), "--out-checkpoint",
        p(&d.join("ck.json")),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}
