use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 11
[data]
stickers = 80
click_logs = 240
train_pairs = 40
test_pairs = 12
[index]
k = 4
[userrep]
steps = 10
[train]
epochs = 1
[online]
sessions = 200
bootstrap = 50
"#;

fn pearl(dir: &Path, args: &[&str]) -> Output {
    let cfg = dir.parent().unwrap().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    Command::new(env!("CARGO_BIN_EXE_pearl"))
        .arg("--dir")
        .arg(dir)
        .arg("--config")
        .arg(&cfg)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pearl(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn full_pipeline(dir: &Path) -> Vec<String> {
    let mut printed = Vec::new();
    for args in [
        &["gen-data"][..],
        &["resolve-intents"],
        &["train-user-emb"],
        &["build-index"],
        &["train"],
        &["retrieve", "hello", "--group", "20-29:f", "--format", "jsonl"],
        &["eval-offline"],
        &["simulate-online"],
        &["ablate-ids", "--schemes", "atomic,pq"],
    ] {
        printed.push(ok(dir, args).replace(dir.to_str().unwrap(), "<dir>"));
    }
    printed
}

#[test]
fn pipeline_composes_and_reruns_bit_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let out_a = full_pipeline(&a);
    let out_b = full_pipeline(&b);
    assert_eq!(out_a, out_b);
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.keys().collect::<Vec<_>>(), fb.keys().collect::<Vec<_>>());
    for (k, v) in &fa {
        assert!(fb[k] == *v, "{} differs between reruns", k.display());
    }

    let lines: Vec<serde_json::Value> =
        out_a[5].lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["kind"], "header");
    let hits = &lines[1..];
    assert!(!hits.is_empty() && hits.len() <= 20);
    assert!(hits.iter().all(|h| h["sticker_id"].is_string() && h["stages"].as_str().unwrap().len() == 5));

    // Same null comparison: identical rankers.
    let online = std::fs::read_to_string(a.join("reports/online.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = online.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows[3]["value"], 0.0);

    let ablation = std::fs::read_to_string(a.join("reports/ablate-ids.jsonl")).unwrap();
    assert_eq!(ablation.lines().count(), 3);
}

#[test]
fn missing_artifacts_name_the_producing_command() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    let out = pearl(&d, &["build-index"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pearl gen-data"));

    ok(&d, &["gen-data"]);
    ok(&d, &["build-index"]);
    let out = pearl(&d, &["retrieve", "hello"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pearl train"));

    let out = pearl(&d, &["train"]);
    assert_eq!(out.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pearl train-user-emb"));
}

#[test]
fn bad_input_gets_distinct_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    assert_eq!(pearl(&d, &["--set", "train.epochz=3", "gen-data"]).status.code(), Some(2));
    assert_eq!(pearl(&d, &["no-such-command"]).status.code(), Some(64));
    ok(&d, &["gen-data"]);
    std::fs::write(d.join("data/corpus.jsonl"), "{\"id\": 1}\n").unwrap();
    let out = pearl(&d, &["build-index"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("corpus.jsonl:1"));
}

#[test]
fn inspect_lists_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("run");
    ok(&d, &["gen-data"]);
    let s = ok(&d, &["inspect"]);
    assert!(s.contains("present  data/corpus.jsonl"));
    assert!(s.contains("missing  model/checkpoint.bin"));
    assert!(ok(&d, &["inspect", d.join("data/corpus.jsonl").to_str().unwrap()]).starts_with("80 records"));
}
