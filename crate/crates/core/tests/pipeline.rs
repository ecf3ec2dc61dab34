use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use exploit2cve::backend::BackendSpec;
use exploit2cve::pipeline::{
    ingest, read_jsonl, run_compose_stage, run_evaluate_stage, run_extract_stage, run_pipeline,
    run_sample, run_stats, ComposedRecord, PipelineConfig, SampledItem, ASPECTS_FILE,
    COMPOSED_FILE, REPORT_FILE, STATS_FILE,
};
use exploit2cve::Error;
use tempfile::TempDir;

fn corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus")
}

fn config(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(corpus().join("posts"), out);
    cfg.cves = Some(corpus().join("cves.jsonl"));
    cfg.cpe = Some(corpus().join("cpe.txt"));
    cfg
}

fn stub_config(out: &Path) -> PipelineConfig {
    let mut cfg = config(out);
    let stub = BackendSpec::Stub(corpus().join("stub.json"));
    cfg.ner_backend = stub.clone();
    cfg.qa_backend = stub;
    cfg
}

fn composed(out: &Path) -> Vec<ComposedRecord> {
    read_jsonl(&out.join(COMPOSED_FILE)).unwrap()
}

fn normalized(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[test]
fn rule_run_matches_golden_output() {
    let dir = TempDir::new().unwrap();
    let report = run_pipeline(&config(dir.path())).unwrap();
    let got = fs::read_to_string(dir.path().join(COMPOSED_FILE)).unwrap();
    let want = fs::read_to_string(corpus().join("expected/composed.jsonl")).unwrap();
    assert_eq!(got, want);
    assert_eq!(report.n_pairs, 4);
    assert_eq!(report.excluded, 1);
    assert!(report.fallbacks.is_empty());
}

#[test]
fn stub_run_reproduces_reference_rows() {
    let dir = TempDir::new().unwrap();
    run_pipeline(&stub_config(dir.path())).unwrap();
    let records = composed(dir.path());
    let expected = fs::read_to_string(corpus().join("expected/reference_rows.txt")).unwrap();
    for line in expected.lines() {
        let (id, text) = line.split_once('\t').unwrap();
        let id: u64 = id.parse().unwrap();
        let rec = records.iter().find(|r| r.edb_id == id).unwrap();
        assert_eq!(normalized(&rec.text), normalized(text), "post {id}");
    }
}

#[test]
fn stub_scored_against_its_own_labels_is_perfect() {
    let dir = TempDir::new().unwrap();
    let mut cfg = stub_config(dir.path());
    cfg.gold = Some(corpus().join("gold.jsonl"));
    let report = run_pipeline(&cfg).unwrap();
    let ner = report.ner.unwrap();
    let qa = report.qa.unwrap();
    assert_eq!(ner.overall.f1, 1.0);
    assert_eq!((qa.overall.exact, qa.overall.f1), (1.0, 1.0));
    assert_eq!(qa.n_positive + qa.n_negative, 15);
}

#[test]
fn rule_run_with_labels_reports_metrics() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(dir.path());
    cfg.gold = Some(corpus().join("gold.jsonl"));
    let report = run_pipeline(&cfg).unwrap();
    let ner = report.ner.unwrap();
    let qa = report.qa.unwrap();
    for v in [
        ner.overall.f1,
        qa.overall.exact,
        qa.overall.f1,
        qa.positive.f1,
    ] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(qa.positive.exact <= qa.positive.f1);
}

#[test]
fn staged_run_equals_one_shot_run() {
    let whole = TempDir::new().unwrap();
    run_pipeline(&config(whole.path())).unwrap();

    let staged = TempDir::new().unwrap();
    let cfg = config(staged.path());
    ingest(&cfg).unwrap();
    run_extract_stage(&cfg).unwrap();
    run_compose_stage(&cfg).unwrap();
    run_evaluate_stage(&cfg).unwrap();
    for f in [COMPOSED_FILE, REPORT_FILE, ASPECTS_FILE] {
        assert_eq!(
            fs::read(whole.path().join(f)).unwrap(),
            fs::read(staged.path().join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn rerunning_a_stage_changes_nothing() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path());
    run_pipeline(&cfg).unwrap();
    let before = fs::read(dir.path().join(COMPOSED_FILE)).unwrap();
    let report_before = fs::read(dir.path().join(REPORT_FILE)).unwrap();
    run_compose_stage(&cfg).unwrap();
    run_evaluate_stage(&cfg).unwrap();
    assert_eq!(before, fs::read(dir.path().join(COMPOSED_FILE)).unwrap());
    assert_eq!(
        report_before,
        fs::read(dir.path().join(REPORT_FILE)).unwrap()
    );
}

#[test]
fn empty_corpus_has_no_pairs() {
    let posts = TempDir::new().unwrap();
    let out = TempDir::new().unwrap();
    let mut cfg = config(out.path());
    cfg.posts = posts.path().to_path_buf();
    let err = run_pipeline(&cfg).unwrap_err();
    assert!(matches!(err, Error::NoPairs), "{err}");
    assert_eq!(
        fs::read_to_string(out.path().join(COMPOSED_FILE)).unwrap(),
        ""
    );
}

#[test]
fn config_file_paths_are_relative_to_the_file() {
    let cfg = PipelineConfig::load(&corpus().join("pipeline.toml")).unwrap();
    cfg.validate().unwrap();
    assert!(cfg.posts.ends_with("posts"));
    assert!(cfg.posts.starts_with(corpus()));
    assert_eq!(cfg.ner_backend, BackendSpec::Rule);
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "posts = \"p\"\nout = \"o\"\nbackend = \"rule\"\n").unwrap();
    let err = PipelineConfig::load(&path).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn stats_cover_every_link() {
    let dir = TempDir::new().unwrap();
    let report = run_stats(&config(dir.path()), true).unwrap();
    assert_eq!(report.links, 4);
    assert_eq!(report.gaps.total, 4);
    assert_eq!(
        report.gaps.buckets.iter().map(|b| b.count).sum::<usize>(),
        4
    );
    assert!(dir.path().join(STATS_FILE).exists());
    let csv = fs::read_to_string(dir.path().join("gaps.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    // one post of five cites no CVE
    let year_total: usize = report.missing.per_year.values().map(|y| y.matching).sum();
    assert_eq!(year_total, 1);
}

#[test]
fn sampling_is_seeded() {
    let dir = TempDir::new().unwrap();
    let mut cfg = config(dir.path());
    run_pipeline(&cfg).unwrap();
    let a = run_sample(&cfg, 10).unwrap();
    let b = run_sample(&cfg, 10).unwrap();
    assert_eq!(a, b);
    let written: Vec<SampledItem> = read_jsonl(&dir.path().join("sample.jsonl")).unwrap();
    assert_eq!(written, b);
    cfg.seed = 99;
    assert_ne!(run_sample(&cfg, 10).unwrap(), a);
    let err = run_sample(&cfg, 10_000).unwrap_err();
    assert!(matches!(
        err,
        Error::SampleTooLarge {
            requested: 10_000,
            ..
        }
    ));
}

// ---------------------------------------------------------------------------
// Command line

fn cli(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_exploit2cve"))
        .args(args)
        .output()
        .unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
    )
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn cli_run_succeeds() {
    let dir = TempDir::new().unwrap();
    let config = corpus().join("pipeline.toml");
    let (code, stdout) = cli(&[
        "run",
        "--config",
        path_str(&config),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code, 0);
    let report: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["n_pairs"], 4);
    assert_eq!(
        fs::read(dir.path().join(COMPOSED_FILE)).unwrap(),
        fs::read(corpus().join("expected/composed.jsonl")).unwrap()
    );
}

#[test]
fn cli_stages_in_sequence() {
    let dir = TempDir::new().unwrap();
    let config = corpus().join("pipeline.toml");
    for stage in ["ingest", "extract", "compose", "evaluate"] {
        let (code, _) = cli(&[
            stage,
            "--config",
            path_str(&config),
            "--out",
            path_str(dir.path()),
        ]);
        assert_eq!(code, 0, "{stage}");
    }
    let (code, _) = cli(&[
        "sample",
        "-n",
        "5",
        "--config",
        path_str(&config),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code, 0);
    let (code, stdout) = cli(&[
        "stats",
        "--csv",
        "--config",
        path_str(&config),
        "--out",
        path_str(dir.path()),
    ]);
    assert_eq!(code, 0);
    assert!(stdout.contains("\"links\": 4"));
}

#[test]
fn cli_validation_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(
        cli(&[
            "run",
            "--posts",
            path_str(&missing),
            "--out",
            path_str(dir.path())
        ])
        .0,
        2
    );
    assert_eq!(cli(&["run"]).0, 2);
    let config = corpus().join("pipeline.toml");
    let sample = [
        "sample",
        "-n",
        "100000",
        "--config",
        path_str(&config),
        "--out",
        path_str(dir.path()),
    ];
    // no aspects.jsonl yet
    assert_eq!(cli(&sample).0, 2);
    assert_eq!(
        cli(&[
            "run",
            "--config",
            path_str(&config),
            "--out",
            path_str(dir.path())
        ])
        .0,
        0
    );
    // more than the 35 extracted instances
    assert_eq!(cli(&sample).0, 2);
}

#[test]
fn cli_backend_failure_without_fallback_exits_3() {
    let dir = TempDir::new().unwrap();
    let config = corpus().join("pipeline.toml");
    let args = [
        "run",
        "--config",
        path_str(&config),
        "--out",
        path_str(dir.path()),
        "--backend-ner",
        "external:tcp://127.0.0.1:1",
    ];
    assert_eq!(cli(&args).0, 0);
    let mut strict = args.to_vec();
    strict.push("--no-fallback");
    assert_eq!(cli(&strict).0, 3);
}

#[test]
fn post_order_does_not_change_per_post_output() {
    use exploit2cve::pipeline::{extract, load_posts};
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path());
    let posts = load_posts(&cfg.posts).unwrap();
    let forward = extract(&cfg, &posts).unwrap().aspects;
    let mut reversed_posts = posts.clone();
    reversed_posts.reverse();
    let mut backward = extract(&cfg, &reversed_posts).unwrap().aspects;
    backward.reverse();
    assert_eq!(forward, backward);
}
