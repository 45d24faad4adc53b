//! End-to-end checks of the `precache` binary: artifact layout, exit codes
//! and rerun determinism.

use std::path::Path;
use std::process::{Command, Output};

fn precache(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_precache"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

const PROGRAM: &str = "        LI   r1, 0x1000
        LD   r2, [r1]
        ADD  r2, r2, 7
        ST   [r1+4], r2
        LI   r3, 0
again:
        ADD  r3, r3, 1
        BNE  r3, 5, again
        HALT
";

fn write_inputs(dir: &Path) {
    std::fs::write(dir.join("base.cfg"), "mode = baseline\ncores = 1\n").unwrap();
    std::fs::write(dir.join("pre.cfg"), "mode = precache\ncores = 1\n").unwrap();
    std::fs::write(dir.join("prog.pasm"), PROGRAM).unwrap();
}

#[test]
fn run_writes_a_complete_run_directory() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let out = precache(
        &["run", "--config", "pre.cfg", "--program", "prog.pasm", "--out", "out"],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("mode=precache cores=1"));

    let dir = tmp.path().join("out");
    for name in ["config.txt", "program.pasm", "stats.csv", "dump.txt", "trace_core0.txt"] {
        assert!(dir.join(name).is_file(), "missing {name}");
    }
    let csv = std::fs::read_to_string(dir.join("stats.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "header plus one row");
    let saved = std::fs::read_to_string(dir.join("program.pasm")).unwrap();
    assert_eq!(saved, PROGRAM);
}

#[test]
fn compare_accepts_modes_and_rejects_different_programs() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    std::fs::write(tmp.path().join("other.pasm"), "        LI   r1, 9\n        HALT\n").unwrap();
    for (cfg, dir) in [("base.cfg", "a"), ("pre.cfg", "b")] {
        let out =
            precache(&["run", "--config", cfg, "--program", "prog.pasm", "--out", dir], tmp.path());
        assert!(out.status.success(), "stderr: {}", stderr(&out));
    }
    let out = precache(
        &["run", "--config", "base.cfg", "--program", "other.pasm", "--out", "c"],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));

    let same = precache(&["compare", "a", "b"], tmp.path());
    assert!(same.status.success(), "stdout: {}", stdout(&same));
    assert!(stdout(&same).contains("equivalent"));

    let diff = precache(&["compare", "a", "c"], tmp.path());
    assert_eq!(diff.status.code(), Some(1));
    assert!(stdout(&diff).contains("divergence"));
}

#[test]
fn dump_reproduces_the_saved_dump_byte_for_byte() {
    let tmp = tempfile::tempdir().unwrap();
    write_inputs(tmp.path());
    let out = precache(
        &["run", "--config", "pre.cfg", "--program", "prog.pasm", "--out", "out"],
        tmp.path(),
    );
    assert!(out.status.success(), "stderr: {}", stderr(&out));
    let saved = std::fs::read_to_string(tmp.path().join("out/dump.txt")).unwrap();
    let redone = precache(&["dump", "out"], tmp.path());
    assert!(redone.status.success());
    assert_eq!(stdout(&redone), saved);
}

#[test]
fn attack_verdicts_gate_the_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let contained = precache(&["attack", "--name", "meltdown", "--mode", "precache"], tmp.path());
    assert!(contained.status.success(), "stdout: {}", stdout(&contained));
    assert!(stdout(&contained).contains("verdict: contained"));

    let observable = precache(&["attack", "--name", "meltdown", "--mode", "baseline"], tmp.path());
    assert!(observable.status.success(), "stdout: {}", stdout(&observable));
    assert!(stdout(&observable).contains("verdict: secret observable"));
}

#[test]
fn fuzz_summary_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["fuzz", "--seed", "11", "--count", "4", "--cores", "2"];
    let first = precache(&args, tmp.path());
    assert!(first.status.success(), "stdout: {}", stdout(&first));
    assert!(stdout(&first).contains("4/4 equivalent"));
    let second = precache(&args, tmp.path());
    assert_eq!(stdout(&first), stdout(&second));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.cfg"), "mode = precache\nwayness = 4\n").unwrap();
    std::fs::write(tmp.path().join("prog.pasm"), "        HALT\n").unwrap();
    let out = precache(
        &["run", "--config", "bad.cfg", "--program", "prog.pasm", "--out", "out"],
        tmp.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("wayness"));
}
