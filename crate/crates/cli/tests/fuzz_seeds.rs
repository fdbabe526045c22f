//! Replays the checked-in fuzz seeds through the fuzz target bodies.

use std::path::PathBuf;

use amtl_cli::fuzzing;

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn accepted(target: &str, f: fn(&[u8]) -> bool) -> Vec<String> {
    seeds(target).into_iter().filter(|(_, d)| f(d)).map(|(n, _)| n).collect()
}

#[test]
fn wav_seeds() {
    assert_eq!(accepted("wav", fuzzing::wav), ["tone_800", "too_short"]);
}

#[test]
fn archive_seeds() {
    assert_eq!(accepted("archive", fuzzing::archive), ["empty", "three_utts"]);
}

#[test]
fn checkpoint_seeds() {
    assert_eq!(accepted("checkpoint", fuzzing::checkpoint), ["tiny_age_spk"]);
}

#[test]
fn config_seeds() {
    assert_eq!(accepted("config", fuzzing::config), ["defaults", "empty", "partial"]);
}

#[test]
fn framing_rejects_short_inputs() {
    assert!(fuzzing::split_framed(&[1, 0]).is_none());
    assert!(fuzzing::split_framed(&[9, 0, 0, 0, b'{']).is_none());
    let f = fuzzing::frame(b"{}", b"xy");
    assert_eq!(fuzzing::split_framed(&f), Some((&b"{}"[..], &b"xy"[..])));
}
