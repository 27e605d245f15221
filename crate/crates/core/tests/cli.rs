use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsmin::minimizer::RunRecord;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/twelve_tests.jsonl")
}

fn tsmin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsmin"))
        .args(args)
        .env_remove("TSMIN_PROVIDER_URL")
        .output()
        .expect("binary runs")
}

fn records(out: &Path) -> Vec<RunRecord> {
    std::fs::read_to_string(out.join("runs.jsonl"))
        .unwrap()
        .lines()
        .map(|l| {
            serde_json::from_str::<RunRecord>(l)
                .unwrap()
                .without_timing()
        })
        .collect()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn pipeline_smoke_two_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = tsmin(&[
        "pipeline",
        "--corpus",
        fixture().to_str().unwrap(),
        "--provider",
        "hashing",
        "--budgets",
        "0.5",
        "--runs",
        "2",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    assert_eq!(recs.len(), 2);
    assert!(recs.iter().all(|r| r.selected.len() == 6));
    for name in [
        "report.json",
        "report.csv",
        "manifest.json",
        "versions.jsonl",
        "prep.jsonl",
    ] {
        assert!(out.join(name).is_file(), "{name}");
    }
    assert!(out.join("embeddings/Calc/1.ltme").is_file());
}

#[test]
fn unknown_provider_is_config_error() {
    let o = tsmin(&[
        "pipeline",
        "--corpus",
        fixture().to_str().unwrap(),
        "--provider",
        "magic",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("E_CONFIG"), "{}", stderr(&o));
}

#[test]
fn bad_flags_are_config_errors() {
    assert_eq!(
        tsmin(&["pipeline", "--budgets", "abc"]).status.code(),
        Some(1)
    );
    assert_eq!(tsmin(&["frobnicate"]).status.code(), Some(1));
    let c = fixture();
    let c = c.to_str().unwrap();
    assert_eq!(
        tsmin(&["pipeline", "--corpus", c, "--budgets", "1.5"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        tsmin(&["pipeline", "--corpus", c, "--runs", "0"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        tsmin(&["pipeline", "--corpus", c, "--measure", "dot"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(tsmin(&["pipeline"]).status.code(), Some(1));
    assert_eq!(tsmin(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_corpus_is_data_error() {
    let o = tsmin(&["pipeline", "--corpus", "/nonexistent/corpus.jsonl"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("E_DATA"));
}

#[test]
fn missing_embedding_file_is_provider_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = tsmin(&[
        "embed",
        "--corpus",
        fixture().to_str().unwrap(),
        "--provider",
        "file:/nonexistent/vectors.ltme",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("E_PROVIDER"));
}

#[test]
fn unreachable_remote_is_provider_error() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let dir = tempfile::tempdir().unwrap();
    let spec = format!("remote:codebert@http://127.0.0.1:{port}");
    let o = tsmin(&[
        "embed",
        "--corpus",
        fixture().to_str().unwrap(),
        "--provider",
        &spec,
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn staged_commands_match_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let staged = dir.path().join("staged");
    let whole = dir.path().join("whole");
    let c = fixture();
    let common = |out: &Path| {
        vec![
            "--corpus".to_string(),
            c.to_str().unwrap().to_string(),
            "--budgets".into(),
            "0.25,0.75".into(),
            "--runs".into(),
            "2".into(),
            "--measure".into(),
            "cos,euc".into(),
            "--baseline".into(),
            "--seed".into(),
            "11".into(),
            "--out".into(),
            out.to_str().unwrap().to_string(),
        ]
    };
    for cmd in ["embed", "minimize", "evaluate"] {
        let mut args = vec![cmd.to_string()];
        args.extend(common(&staged));
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = tsmin(&args);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let mut args = vec!["pipeline".to_string()];
    args.extend(common(&whole));
    let args: Vec<&str> = args.iter().map(String::as_str).collect();
    assert!(tsmin(&args).status.success());

    let a = records(&staged);
    assert_eq!(a.len(), 3 * 2 * 2);
    assert_eq!(a, records(&whole));
    let embeddings = |d: &Path| std::fs::read(d.join("embeddings/Calc/1.ltme")).unwrap();
    assert_eq!(embeddings(&staged), embeddings(&whole));
}

#[test]
fn evaluate_rejects_foreign_run_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let c = fixture();
    let c = c.to_str().unwrap();
    let base = [
        "--corpus",
        c,
        "--budgets",
        "0.5",
        "--runs",
        "1",
        "--out",
        out,
    ];
    let mut pipeline = vec!["pipeline"];
    pipeline.extend(base);
    assert!(tsmin(&pipeline).status.success());
    let mut evaluate = vec!["evaluate", "--seed", "99"];
    evaluate.extend(base);
    assert_eq!(tsmin(&evaluate).status.code(), Some(3));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = dir.path().join("job.toml");
    std::fs::write(
        &cfg,
        format!(
            "corpus = {:?}\nbudgets = [0.5]\nruns = 4\nmax-gen = 30\nout = {:?}\n",
            fixture().to_str().unwrap(),
            out.to_str().unwrap()
        ),
    )
    .unwrap();
    let o = tsmin(&["pipeline", "--config", cfg.to_str().unwrap(), "--runs", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&out);
    assert_eq!(recs.len(), 1);
    assert!(recs[0].generations <= 30);

    std::fs::write(&cfg, "colour = \"red\"\n").unwrap();
    let o = tsmin(&["pipeline", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn worker_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let c = fixture();
    let run = |workers: &str| {
        let out = dir.path().join(format!("w{workers}"));
        let o = tsmin(&[
            "pipeline",
            "--corpus",
            c.to_str().unwrap(),
            "--runs",
            "3",
            "--workers",
            workers,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        records(&out)
    };
    assert_eq!(run("1"), run("4"));
}
