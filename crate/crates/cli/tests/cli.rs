use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn devis(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_devis")).args(args).env("DEVIS_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Small run: two 32x32 queries of four frames, two training rounds.
fn small_config(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let out = devis(&["print-default-config"]);
    assert_eq!(code(&out), 0);
    let mut v: Value = serde_json::from_slice(&out.stdout).unwrap();
    v["scene"]["resolution"] = 32.into();
    v["scene"]["n_frames"] = 4.into();
    v["n_queries"] = 2.into();
    v["n_train_queries"] = 2.into();
    v["train"]["group_size"] = 4.into();
    v["train"]["groups_per_round"] = 2.into();
    v["train"]["epochs_per_round"] = 2.into();
    v["train"]["rounds"] = 2.into();
    edit(&mut v);
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    path
}

fn run_in(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    all.extend_from_slice(args);
    devis(&all)
}

#[test]
fn default_config_is_valid_json_with_defaults() {
    let out = devis(&["print-default-config"]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["scene"]["resolution"], 64);
    assert_eq!(v["train"]["group_size"], 8);
}

#[test]
fn invalid_beta_exits_2_without_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |v| v["train"]["beta"] = (-1.0).into());
    let out_dir = tmp.path().join("run");
    let o = run_in(&cfg, &out_dir, &["synth"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out_dir.exists());
}

#[test]
fn unknown_config_field_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |v| v["bogus"] = 1.into());
    assert_eq!(code(&run_in(&cfg, &tmp.path().join("run"), &["synth"])), 2);
}

#[test]
fn missing_config_file_exits_2() {
    assert_eq!(code(&devis(&["--config", "/nonexistent/devis.json", "synth"])), 2);
}

#[test]
fn eval_without_dataset_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |_| {});
    let o = run_in(&cfg, &tmp.path().join("run"), &["eval"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn corrupt_query_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |_| {});
    let run = tmp.path().join("run");
    assert_eq!(code(&run_in(&cfg, &run, &["synth"])), 0);
    std::fs::write(run.join("dataset/query_0000/source.dvraw"), b"garbage").unwrap();
    assert_eq!(code(&run_in(&cfg, &run, &["eval"])), 3);
}

#[test]
fn unknown_strategy_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |_| {});
    let run = tmp.path().join("run");
    assert_eq!(code(&run_in(&cfg, &run, &["synth"])), 0);
    assert_eq!(code(&run_in(&cfg, &run, &["adevis", "--strategy", "zigzag"])), 2);
    assert_eq!(code(&run_in(&cfg, &run, &["compare", "--strategies", "bta,zigzag"])), 2);
}

#[test]
fn zero_jobs_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |_| {});
    assert_eq!(code(&run_in(&cfg, &tmp.path().join("run"), &["--jobs", "0", "synth"])), 2);
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_is_bit_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |_| {});
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run_in(&cfg, &a, &["synth"])), 0);
    assert_eq!(code(&run_in(&cfg, &b, &["synth"])), 0);
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert!(ta.iter().any(|(p, _)| p.ends_with("target.dvraw")));
    assert_eq!(ta, tb);
}

#[derive(serde::Deserialize)]
struct Row {
    psnr: f64,
    lpips: f64,
    reward: f64,
}

#[test]
fn eval_aggregate_is_column_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |v| v["n_queries"] = 3.into());
    let run = tmp.path().join("run");
    assert_eq!(code(&run_in(&cfg, &run, &["synth"])), 0);
    assert_eq!(code(&run_in(&cfg, &run, &["eval"])), 0);
    let rows: Vec<Row> = csv::Reader::from_path(run.join("eval/per_query.csv")).unwrap().deserialize().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let agg: Value = serde_json::from_slice(&std::fs::read(run.join("eval/aggregate.json")).unwrap()).unwrap();
    let n = rows.len() as f64;
    for (key, mean) in [
        ("mean_psnr", rows.iter().map(|r| r.psnr).sum::<f64>() / n),
        ("mean_lpips", rows.iter().map(|r| r.lpips).sum::<f64>() / n),
        ("mean_reward", rows.iter().map(|r| r.reward).sum::<f64>() / n),
    ] {
        assert!((agg[key].as_f64().unwrap() - mean).abs() < 1e-12, "{key}");
    }
}

#[test]
fn single_step_compare_rows_coincide() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path(), |_| {});
    let run = tmp.path().join("run");
    let o = run_in(&cfg, &run, &["compare", "--steps", "1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(run.join("compare/table_n1.csv")).unwrap();
    let rows: Vec<Vec<String>> = rdr.records().map(|r| r.unwrap().iter().skip(1).map(String::from).collect()).collect();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r == &rows[0]));
}

#[test]
fn resumed_training_matches_uninterrupted() {
    let tmp = tempfile::tempdir().unwrap();
    let full = small_config(tmp.path(), |_| {});
    let straight = tmp.path().join("straight");
    assert_eq!(code(&run_in(&full, &straight, &["train"])), 0);

    let half_dir = tmp.path().join("half");
    std::fs::create_dir(&half_dir).unwrap();
    let half = small_config(&half_dir, |v| v["train"]["rounds"] = 1.into());
    let resumed = tmp.path().join("resumed");
    assert_eq!(code(&run_in(&half, &resumed, &["train"])), 0);
    assert_eq!(code(&run_in(&full, &resumed, &["train"])), 0);

    for f in ["train/log.csv", "train/params.json", "train/checkpoints/round_0002.json"] {
        assert_eq!(std::fs::read(straight.join(f)).unwrap(), std::fs::read(resumed.join(f)).unwrap(), "{f}");
    }
}
