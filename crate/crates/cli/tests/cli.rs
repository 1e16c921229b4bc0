use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn fillerkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fillerkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fillerkit(dir.path(), &["--help"])), 0);
    assert_eq!(code(&fillerkit(dir.path(), &["--version"])), 0);
    assert_eq!(code(&fillerkit(dir.path(), &["detect", "--help"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&fillerkit(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&fillerkit(dir.path(), &["episodes"])), 1);
    let bad_mode = fillerkit(
        dir.path(),
        &["detect", "--mode", "fast", "--audio", "a.wav", "--vad-model", "v", "--clf-model", "c", "--out", "o.csv"],
    );
    assert_eq!(code(&bad_mode), 1);
    assert_eq!(code(&fillerkit(dir.path(), &["--jobs", "0", "episodes", "--out", "e"])), 1);

    std::fs::write(dir.path().join("broken.toml"), "count = [").unwrap();
    let out = fillerkit(dir.path(), &["--config", "broken.toml", "episodes", "--out", "e"]);
    assert_eq!(code(&out), 1);
    std::fs::write(dir.path().join("typed.toml"), "[episodes]\ncount = \"many\"\n").unwrap();
    let out = fillerkit(dir.path(), &["--config", "typed.toml", "episodes", "--out", "e"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("[episodes]"));
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = fillerkit(dir.path(), &["evaluate", "--ref", "missing.csv", "--pred", "missing.csv", "--out", "r.json"]);
    assert_eq!(code(&out), 2);
    std::fs::write(dir.path().join("bad.csv"), "start_s,end_s,label\n2.0,1.0,uh\n").unwrap();
    let out = fillerkit(dir.path(), &["evaluate", "--ref", "bad.csv", "--pred", "bad.csv", "--out", "r.json"]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn diverging_training_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mix = fillerkit(dir.path(), &["mix", "--out", "mix", "--n-train", "3", "--n-test", "0", "--duration", "1"]);
    assert_eq!(code(&mix), 0, "{}", String::from_utf8_lossy(&mix.stderr));
    std::fs::write(
        dir.path().join("diverge.toml"),
        "[train_vad]\nval_fraction = 0.0\n[train_vad.train]\nepochs = 3\nlearning_rate = 1e300\noptimizer = { kind = \"sgd\", momentum = 0.0 }\n",
    )
    .unwrap();
    let out = fillerkit(
        dir.path(),
        &["--config", "diverge.toml", "train-vad", "--manifest", "mix/manifest.csv", "--out", "vad.fkm"],
    );
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn flags_override_config_file_which_overrides_defaults() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("run.toml"),
        "seed = 4\n[episodes]\ncount = 2\nprefix = \"pod\"\n[episodes.episode]\nduration_s = 8.0\n",
    )
    .unwrap();
    let out = fillerkit(dir.path(), &["--config", "run.toml", "episodes", "--out", "eps", "--count", "1"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = json(&dir.path().join("eps/config.json"));
    assert_eq!(cfg["command"], "episodes");
    assert_eq!(cfg["config"]["count"], 1);
    assert_eq!(cfg["config"]["prefix"], "pod");
    assert_eq!(cfg["config"]["seed"], 4);
    assert_eq!(cfg["config"]["episode"]["duration_s"], 8.0);
    // Untouched defaults are still written out in full.
    assert!(cfg["config"]["episode"]["p_planted"].is_number());
    assert!(dir.path().join("eps/pod0000.wav").exists());
    assert!(!dir.path().join("eps/pod0001.wav").exists());
}

#[test]
fn seeds_control_synthesis() {
    let dir = tempfile::tempdir().unwrap();
    for (out, seed) in [("a", "1"), ("b", "1"), ("c", "2")] {
        let r = fillerkit(dir.path(), &["--seed", seed, "episodes", "--out", out, "--count", "1", "--duration", "6"]);
        assert_eq!(code(&r), 0);
    }
    let read = |d: &str| std::fs::read(dir.path().join(d).join("ep0000.wav")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn evaluate_writes_json_and_csv_reports() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("ref.csv"),
        "start_s,end_s,label\n1.0,1.4,uh\n3.0,3.5,um\n6.0,6.3,uh\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("pred.csv"),
        "start_s,end_s,label,confidence\n1.1,1.5,uh,0.9\n3.4,3.9,um,0.8\n8.0,8.2,uh,0.7\n",
    )
    .unwrap();
    let out = fillerkit(
        dir.path(),
        &["evaluate", "--ref", "ref.csv", "--pred", "pred.csv", "--out", "report.json", "--collar", "0.2"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(&dir.path().join("report.json"));
    let ev = &r["event"]["overall"];
    assert_eq!((ev["tp"].as_u64(), ev["fp"].as_u64(), ev["fn"].as_u64()), (Some(1), Some(2), Some(2)));
    let csv = std::fs::read_to_string(dir.path().join("report.json.csv")).unwrap();
    assert!(csv.starts_with("kind,label,tp,fp,fn,precision,recall,f1\n"));
    assert!(csv.contains("event,overall,1,2,2,"));
    assert_eq!(json(&dir.path().join("report.json.config.json"))["config"]["collar"], 0.2);
}

#[test]
fn export_labels_resolves_logged_annotations() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("candidates.csv"),
        "id,episode,gap_start_s,gap_end_s,clip_path,highlight_start_s,highlight_end_s,status,label\n\
         c0,ep,1.0,1.3,clips/c0.wav,1.0,1.3,unlabeled,\n\
         c1,ep,2.0,2.4,clips/c1.wav,2.0,2.4,unlabeled,\n",
    )
    .unwrap();
    let rec = |c: &str, a: &str, l: &str, t: u64| {
        format!("{{\"candidate_id\":\"{c}\",\"annotator_id\":\"{a}\",\"label\":\"{l}\",\"timestamp\":{t}}}\n")
    };
    let log = [rec("c0", "a", "um", 1), rec("c0", "b", "um", 2), rec("c1", "a", "uh", 3)].concat();
    std::fs::write(dir.path().join("labels.jsonl"), log).unwrap();
    let out = fillerkit(
        dir.path(),
        &["export-labels", "--candidates", "candidates.csv", "--log", "labels.jsonl", "--out", "resolved.csv"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let resolved = std::fs::read_to_string(dir.path().join("resolved.csv")).unwrap();
    assert_eq!(resolved.lines().count(), 2);
    assert!(resolved.contains("c0,ep,") && resolved.ends_with(",um\n"));
    let stats = json(&dir.path().join("resolved.csv.stats.json"));
    assert_eq!((stats["resolved"].as_u64(), stats["needs_second"].as_u64()), (Some(1), Some(1)));
}
