use std::path::Path;
use std::process::{Command, Output};

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
        }
    }
}

fn fresh() -> tempfile::TempDir {
    let repo = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&repo.join("corpus"), &dir.path().join("corpus"));
    copy_dir(&repo.join("config"), &dir.path().join("config"));
    dir
}

fn run(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_healthchat"))
        .arg("--data-dir")
        .arg(data)
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn ingest_reports_fixture_counts() {
    let dir = fresh();
    let out = stdout(&run(dir.path(), &["ingest"]));
    assert_eq!(out.trim(), "base=24 lookup=2048 conv_pairs=893 posts=60");
}

#[test]
fn exit_codes_separate_usage_from_io() {
    let dir = fresh();
    assert_eq!(run(dir.path(), &["--bogus"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["fit-topics", "--k", "0"]).status.code(), Some(1));
    let missing = dir.path().join("nowhere");
    assert_eq!(run(&missing, &["ingest"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["eval-followups"]).status.code(), Some(2), "no snapshots yet");
}

#[test]
fn malformed_corpus_is_a_validation_error() {
    let dir = fresh();
    std::fs::write(dir.path().join("corpus/base_qa.jsonl"), "{not json}\n").unwrap();
    assert_eq!(run(dir.path(), &["ingest"]).status.code(), Some(1));
}

#[test]
fn pipeline_is_byte_identical_on_rerun() {
    let dir = fresh();
    let steps = ["build-index", "fit-topics", "curate-posts", "eval-followups"];
    let snapshot = |root: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(root.join("artifacts"))
            .unwrap()
            .map(|e| e.unwrap().path())
            .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    };
    for step in steps {
        stdout(&run(dir.path(), &[step]));
    }
    let first = snapshot(dir.path());
    assert!(first.iter().any(|(n, _)| n == "eval_followups.jsonl"));
    for step in steps {
        stdout(&run(dir.path(), &[step]));
    }
    assert_eq!(first, snapshot(dir.path()));

    let curate = stdout(&run(dir.path(), &["curate-posts"]));
    assert_eq!(curate.trim(), "selected=54 excluded=6");
    let eval = std::fs::read_to_string(dir.path().join("artifacts/eval_followups.jsonl")).unwrap();
    assert_eq!(eval.lines().count(), 96);
}
