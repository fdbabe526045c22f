use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use amtl::frontend::wav::encode_wav;
use amtl::frontend::AudioBuffer;
use serde_json::{json, Value};

fn amtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amtl")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn tiny_config(n_repeats: usize) -> Value {
    json!({
        "corpus": {
            "n_speakers": 12,
            "n_age_groups": 2,
            "n_senones": 4,
            "utterances_per_speaker": 2,
            "frames_per_utterance": [30, 36],
            "feature_dim": 6,
            "split": {"train": 1.0, "dev": 1.0, "test": 1.0}
        },
        "model": {
            "tdnn_delays": [[-1, 0, 1], [-2, 1]],
            "g_width": 8,
            "head_hidden_width": 6
        },
        "schedule": {"n_repeats": n_repeats, "epochs_per_phase": 1, "batch_size": 4, "alpha_max": 0.1},
        "probe": {"hidden_width": 8, "epochs": 2}
    })
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let p = dir.join("config.json");
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_then_train_all_modes_writes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config(2));
    let data = tmp.path().join("data");
    let o = amtl(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["train.json", "train.f32", "dev.json", "test.f32", "stats.json", "config.json"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }

    let out = tmp.path().join("runs");
    let o = amtl(&["train", "--config", s(&cfg), "--data", s(&data), "--out", s(&out), "--mode", "all"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for run in ["BASELINE", "AGE", "SPK", "AGE_SPK"] {
        let dir = out.join(run);
        for f in ["config.json", "metrics.jsonl", "metrics.csv", "probes.json", "timing.log"] {
            assert!(dir.join(f).is_file(), "{run} missing {f}");
        }
        assert!(dir.join("checkpoints/last.json").is_file());
        assert!(dir.join("checkpoints/best.json").is_file());
        let csv = std::fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert!(csv.starts_with("run,mode,alpha_max,repeat,metric,value\n"));
        assert!(csv.contains(&format!("{run},{run},0.1,1,dev_fer,")), "{csv}");
        let probes: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("probes.json")).unwrap()).unwrap();
        assert!(probes["probes"][0]["reference_accuracy"].is_number());
    }
    let table = std::fs::read_to_string(out.join("comparison.txt")).unwrap();
    assert_eq!(table.lines().count(), 5, "{table}");
    assert!(!out.join(".amtl.lock").exists());

    let o = amtl(&["report", s(&out.join("BASELINE")), s(&out.join("AGE_SPK"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("best-dev comparison") && text.contains("probes on G features"), "{text}");
}

#[test]
fn existing_results_need_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &tiny_config(1));
    let out = tmp.path().join("data");
    assert_eq!(code(&amtl(&["synth", "--config", s(&cfg), "--out", s(&out)])), 0);
    std::fs::write(out.join("notes.txt"), "mine").unwrap();
    let o = amtl(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
    let o = amtl(&["synth", "--config", s(&cfg), "--out", s(&out), "--force"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(out.join("notes.txt")).unwrap(), "mine");
}

#[test]
fn held_lock_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("data");
    std::fs::create_dir_all(&out).unwrap();
    std::fs::write(out.join(".amtl.lock"), "1").unwrap();
    let cfg = write_config(tmp.path(), &tiny_config(1));
    let o = amtl(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("in use"), "{}", stderr(&o));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&amtl(&["train", "--bogus"])), 1);
    assert_eq!(code(&amtl(&["train", "--out", "x", "--mode", "AGES"])), 1);
    let mut cfg = tiny_config(1);
    cfg["schedule"]["n_repeat"] = json!(3);
    let p = write_config(tmp.path(), &cfg);
    let o = amtl(&["train", "--config", s(&p), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("n_repeat"), "{}", stderr(&o));
}

#[test]
fn diverging_run_exits_3_and_keeps_other_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config(2);
    cfg["schedule"]["learning_rate"] = json!(1e6);
    let p = write_config(tmp.path(), &cfg);
    let out = tmp.path().join("o");
    let o = amtl(&["train", "--config", s(&p), "--out", s(&out), "--mode", "BASELINE,AGE_SPK"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(out.join("BASELINE/metrics.csv").is_file());
    assert!(out.join("AGE_SPK/config.json").is_file());
}

#[test]
fn alpha_sweep_writes_one_run_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), &tiny_config(2));
    let out = tmp.path().join("o");
    let o = amtl(&["train", "--config", s(&p), "--out", s(&out), "--mode", "AGE_SPK", "--alpha-sweep", "0.1,0.01"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("AGE_SPK_alpha0.1/metrics.jsonl").is_file());
    assert!(out.join("AGE_SPK_alpha0.01/metrics.jsonl").is_file());
    let sweep = std::fs::read_to_string(out.join("sweep.txt")).unwrap();
    assert_eq!(sweep.lines().count(), 3, "{sweep}");
}

#[test]
fn report_rejects_runs_from_different_experiments() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = vec![];
    for seed in ["1", "2"] {
        let p = write_config(tmp.path(), &tiny_config(1));
        let out = tmp.path().join(format!("o{seed}"));
        let o = amtl(&["train", "--config", s(&p), "--out", s(&out), "--mode", "BASELINE", "--seed", seed]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        dirs.push(out.join("BASELINE"));
    }
    let o = amtl(&["report", s(&dirs[0]), s(&dirs[1])]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("corpus.seed") && err.contains("schedule.seed"), "{err}");
}

fn slow_config() -> Value {
    let mut cfg = tiny_config(6);
    cfg["corpus"]["utterances_per_speaker"] = json!(12);
    cfg["corpus"]["feature_dim"] = json!(20);
    cfg["corpus"]["frames_per_utterance"] = json!([80, 100]);
    cfg["model"] = json!({"g_width": 32, "head_hidden_width": 32});
    cfg
}

#[test]
fn resume_after_kill_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), &slow_config());
    let full = tmp.path().join("full");
    let o = amtl(&["train", "--config", s(&p), "--out", s(&full), "--mode", "AGE_SPK"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    let cut = tmp.path().join("cut");
    let mut child = Command::new(env!("CARGO_BIN_EXE_amtl"))
        .args(["train", "--config", s(&p), "--out", s(&cut), "--mode", "AGE_SPK"])
        .spawn()
        .unwrap();
    let last = cut.join("AGE_SPK/checkpoints/last.json");
    let start = Instant::now();
    while !last.exists() {
        assert!(start.elapsed() < Duration::from_secs(120), "no checkpoint appeared");
        std::thread::sleep(Duration::from_millis(2));
    }
    child.kill().unwrap();
    let status = child.wait().unwrap();
    assert!(!status.success(), "run finished before it could be interrupted; enlarge slow_config");
    // The killed process could not release its lock.
    std::fs::remove_file(cut.join(".amtl.lock")).unwrap();

    let o = amtl(&["train", "--config", s(&p), "--out", s(&cut), "--mode", "AGE_SPK", "--resume"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in ["metrics.jsonl", "metrics.csv", "probes.json", "checkpoints/last.json", "checkpoints/best.json"] {
        let a = std::fs::read(full.join("AGE_SPK").join(f)).unwrap();
        let b = std::fs::read(cut.join("AGE_SPK").join(f)).unwrap();
        assert!(a == b, "{f} differs after resume");
    }
}

#[test]
fn resume_with_changed_config_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let p = write_config(tmp.path(), &tiny_config(1));
    let out = tmp.path().join("o");
    assert_eq!(code(&amtl(&["train", "--config", s(&p), "--out", s(&out), "--mode", "BASELINE"])), 0);
    let p = write_config(tmp.path(), &tiny_config(2));
    let o = amtl(&["train", "--config", s(&p), "--out", s(&out), "--mode", "BASELINE", "--resume"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("schedule.n_repeats"), "{}", stderr(&o));
}

fn tone(freq: f64, secs: f64) -> Vec<u8> {
    let n = (16000.0 * secs) as usize;
    let samples = (0..n).map(|i| 0.3 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin()).collect();
    encode_wav(&AudioBuffer::new(samples, 16000).unwrap()).unwrap()
}

#[test]
fn mfcc_skips_bad_files_and_reports_them() {
    let tmp = tempfile::tempdir().unwrap();
    let wavs = tmp.path().join("wav");
    std::fs::create_dir_all(&wavs).unwrap();
    std::fs::write(wavs.join("a.wav"), tone(440.0, 0.5)).unwrap();
    std::fs::write(wavs.join("b.wav"), tone(880.0, 0.5)).unwrap();
    std::fs::write(wavs.join("broken.wav"), b"RIFF....").unwrap();
    // 0.5 s gives 48 frames of 25 ms every 10 ms.
    let labels = json!({"utterances": [
        {"id": "a", "wav": "a.wav", "split": "train", "speaker": 0, "age_group": 0, "senones": vec![1; 48]},
        {"id": "b", "wav": "b.wav", "split": "dev", "speaker": 1, "age_group": 1,
         "senone_string": vec!["2"; 48].join(" ")},
        {"id": "short", "wav": "a.wav", "split": "test", "speaker": 2, "age_group": 0, "senones": [1, 2]},
        {"id": "broken", "wav": "broken.wav", "split": "test", "speaker": 2, "age_group": 0, "senones": [0]},
        {"id": "missing", "wav": "nope.wav", "split": "test", "speaker": 2, "age_group": 0, "senones": [0]}
    ]});
    let lp = tmp.path().join("labels.json");
    std::fs::write(&lp, labels.to_string()).unwrap();
    let out = tmp.path().join("feats");
    let o = amtl(&["mfcc", "--wav-dir", s(&wavs), "--labels", s(&lp), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for id in ["short", "broken", "missing"] {
        assert!(err.contains(&format!("skipped {id}")), "{err}");
    }
    assert!(err.contains("3 of 5"), "{err}");
    let utts = amtl::formats::read_archive(&out.join("features.json")).unwrap();
    assert_eq!(utts.len(), 2);
    assert_eq!(utts[0].1.features.rows(), 48);
    assert_eq!(utts[0].1.features.cols(), 40);
    assert_eq!(utts[1].1.senones, vec![2; 48]);
}
