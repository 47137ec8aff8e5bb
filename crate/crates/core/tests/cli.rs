use std::fs;
use std::process::Command;

fn nmtkit() -> Command {
    Command::new(env!("CARGO_BIN_EXE_nmtkit"))
}

#[test]
fn score_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let text = "the cat sat on the mat .\na second line here\n";
    fs::write(dir.path().join("hyp.txt"), text).unwrap();
    fs::write(dir.path().join("ref.txt"), text).unwrap();
    let out = nmtkit()
        .arg("score")
        .arg("--hyp")
        .arg(dir.path().join("hyp.txt"))
        .arg("--ref")
        .arg(dir.path().join("ref.txt"))
        .arg("--out")
        .arg(dir.path().join("score"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bleu=100.0"));
    let score: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(score["bleu"], 100.0);
    assert!(dir.path().join("score/manifest.json").exists());
}

#[test]
fn bad_flags_exit_2() {
    let out = nmtkit().args(["score", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn every_subcommand_has_help() {
    for cmd in nmtkit::cli::COMMANDS {
        let out = nmtkit().args([cmd, "--help"]).output().unwrap();
        assert!(out.status.success(), "{cmd}");
    }
}
