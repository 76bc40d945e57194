use std::path::Path;
use std::process::{Command, Output};

fn mtj(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtj"))
        .args(args)
        .output()
        .expect("spawn mtj")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn arg(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_succeeds_and_usage_errors_exit_one() {
    assert_eq!(code(&mtj(&["--help"])), 0);
    assert_eq!(code(&mtj(&["frobnicate"])), 1);
    assert_eq!(code(&mtj(&["train"])), 1, "missing required options");
    assert_eq!(code(&mtj(&["--threads", "0", "synth", "-n", "1"])), 1);
}

#[test]
fn missing_inputs_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let absent = dir.path().join("absent.csv");
    let out = mtj(&[
        "--out-dir",
        arg(dir.path()),
        "evaluate",
        "--predictions",
        arg(&absent),
        "--manifest",
        arg(&dir.path().join("absent.json")),
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn synth_writes_a_complete_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtj(&[
        "--seed",
        "3",
        "--out-dir",
        arg(dir.path()),
        "synth",
        "-n",
        "4",
        "--domains",
        "SyntheticA,SyntheticB",
        "--width",
        "64",
        "--height",
        "32",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for rel in [
        "manifest.json",
        "labels.csv",
        "run.json",
        "SyntheticA/frame_000003.png",
        "SyntheticB/frame_000003.png",
    ] {
        assert!(dir.path().join(rel).is_file(), "missing {rel}");
    }
    let labels = std::fs::read_to_string(dir.path().join("labels.csv")).unwrap();
    // header plus GT and four specialists for each of 8 frames
    assert_eq!(labels.lines().count(), 1 + 8 * 5);
}

#[test]
fn unknown_stage_domain_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        code(&mtj(&[
            "--out-dir",
            arg(&data),
            "synth",
            "-n",
            "2",
            "--width",
            "64",
            "--height",
            "32"
        ])),
        0
    );
    let out = mtj(&[
        "--out-dir",
        arg(&dir.path().join("run")),
        "train",
        "--manifest",
        arg(&data.join("manifest.json")),
        "--stages",
        "SyntheticB",
        "--depth",
        "2",
        "--base-filters",
        "4",
        "--width",
        "64",
        "--height",
        "32",
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}
