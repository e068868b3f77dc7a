use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pooljudge"))
        .args(args)
        .output()
        .unwrap()
}

fn code(args: &[&str]) -> i32 {
    run(args).status.code().unwrap()
}

fn stdout(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// The fixture copied into a scratch directory so default report paths
/// land somewhere disposable.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for name in [
        "atlas.run",
        "birch.run",
        "cedar.run",
        "original.qrels",
        "pooled.qrels",
        "queries.tsv",
        "items.txt",
    ] {
        std::fs::copy(fixture(name), dir.path().join(name)).unwrap();
    }
    dir
}

fn p(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&["--help"]), 0);
    assert_eq!(code(&["--version"]), 0);
    assert_eq!(code(&["eval", "--help"]), 0);
    let help = String::from_utf8(run(&["eval", "--help"]).stdout).unwrap();
    assert!(help.contains("query_id item_id rank score run_tag"));
}

#[test]
fn argument_errors_exit_one() {
    assert_eq!(code(&[]), 1);
    assert_eq!(code(&["eval", "--nope"]), 1);
    assert_eq!(code(&["frobnicate"]), 1);
    assert_eq!(code(&["eval", "--run", "x.run"]), 1);
    assert_eq!(code(&["--threads", "0", "agreement", "--log", "x"]), 1);
}

#[test]
fn unreadable_input_exits_two() {
    let dir = workspace();
    assert_eq!(
        code(&[
            "eval",
            "--run",
            "/no/such.run",
            "--qrels",
            &p(&dir, "original.qrels")
        ]),
        2
    );
    assert_eq!(
        code(&[
            "eval",
            "--run",
            &p(&dir, "atlas.run"),
            "--qrels",
            "/no/such.qrels"
        ]),
        2
    );
    assert_eq!(code(&["agreement", "--log", "/no/such.jsonl"]), 2);
    // unwritable report location
    assert_eq!(
        code(&[
            "eval",
            "--run",
            &p(&dir, "atlas.run"),
            "--qrels",
            &p(&dir, "original.qrels"),
            "--out",
            "/no/such/dir/report"
        ]),
        2
    );
}

#[test]
fn malformed_input_exits_one() {
    let dir = workspace();
    let bad = dir.path().join("bad.run");
    std::fs::write(&bad, "q00 v001 1 0.9\n").unwrap();
    assert_eq!(
        code(&[
            "eval",
            "--run",
            bad.to_str().unwrap(),
            "--qrels",
            &p(&dir, "original.qrels")
        ]),
        1
    );
    let qrels = dir.path().join("bad.qrels");
    std::fs::write(&qrels, "q00 v000 2\n").unwrap();
    assert_eq!(
        code(&[
            "eval",
            "--run",
            &p(&dir, "atlas.run"),
            "--qrels",
            qrels.to_str().unwrap()
        ]),
        1
    );
}

#[test]
fn rank_gaps_need_lenient() {
    let dir = workspace();
    let gappy = dir.path().join("gappy.run");
    std::fs::write(&gappy, "q00 v000 1 0.9 g\nq00 v001 3 0.8 g\n").unwrap();
    let args = [
        "eval",
        "--run",
        gappy.to_str().unwrap(),
        "--qrels",
        &p(&dir, "original.qrels"),
        "--no-files",
    ];
    assert_eq!(code(&args), 1);
    let mut lenient = args.to_vec();
    lenient.push("--lenient");
    assert_eq!(code(&lenient), 0);
}

#[test]
fn collection_check_rejects_unknown_items() {
    let dir = workspace();
    let few = dir.path().join("few.txt");
    std::fs::write(&few, "v000\nv001\n").unwrap();
    let check = |items: &str| {
        code(&[
            "eval",
            "--run",
            &p(&dir, "atlas.run"),
            "--qrels",
            &p(&dir, "original.qrels"),
            "--items",
            items,
            "--queries",
            &p(&dir, "queries.tsv"),
            "--no-files",
        ])
    };
    assert_eq!(check(&p(&dir, "items.txt")), 0);
    assert_eq!(check(few.to_str().unwrap()), 1);
}

#[test]
fn eval_writes_reports_next_to_the_run() {
    let dir = workspace();
    let out = stdout(&[
        "eval",
        "--run",
        &p(&dir, "atlas.run"),
        "--qrels",
        &p(&dir, "original.qrels"),
        "--qrels",
        &p(&dir, "pooled.qrels"),
        "--per-query",
    ]);
    assert!(out.contains("C@1"));
    let csv = std::fs::read_to_string(dir.path().join("atlas.metrics.csv")).unwrap();
    let json: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("atlas.metrics.json")).unwrap(),
    )
    .unwrap();
    assert!(dir.path().join("atlas.metrics.per_query.csv").exists());
    assert_eq!(json["system"], "atlas");
    assert_eq!(json["judgment_tag"], "original+pooled");
    assert!(csv.lines().count() > 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = workspace();
    let args = |out: &str| {
        vec![
            "eval".to_string(),
            "--run".into(),
            p(&dir, "atlas.run"),
            "--run".into(),
            p(&dir, "cedar.run"),
            "--qrels".into(),
            p(&dir, "original.qrels"),
            "--qrels".into(),
            p(&dir, "pooled.qrels"),
            "--format".into(),
            "json".into(),
            "--out".into(),
            p(&dir, out),
        ]
    };
    let first = run(&args("a").iter().map(String::as_str).collect::<Vec<_>>());
    let second = run(&args("b").iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(first.stdout, second.stdout);
    for system in ["atlas", "cedar"] {
        for ext in ["csv", "json"] {
            assert_eq!(
                std::fs::read(dir.path().join(format!("a.{system}.{ext}"))).unwrap(),
                std::fs::read(dir.path().join(format!("b.{system}.{ext}"))).unwrap()
            );
        }
    }
    let parsed: Value = serde_json::from_slice(&first.stdout).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), 2);
}

#[test]
fn csv_output_for_several_runs_has_one_header() {
    let dir = workspace();
    let out = stdout(&[
        "eval",
        "--run",
        &p(&dir, "atlas.run"),
        "--run",
        &p(&dir, "birch.run"),
        "--qrels",
        &p(&dir, "original.qrels"),
        "--format",
        "csv",
        "--no-files",
    ]);
    let header = out.lines().next().unwrap();
    assert_eq!(out.lines().filter(|l| *l == header).count(), 1);
    assert!(out.contains("atlas") && out.contains("birch"));
}

#[test]
fn duplicate_run_tags_are_rejected() {
    let dir = workspace();
    assert_eq!(
        code(&[
            "eval",
            "--run",
            &p(&dir, "atlas.run"),
            "--run",
            &p(&dir, "atlas.run"),
            "--qrels",
            &p(&dir, "original.qrels"),
        ]),
        1
    );
}

#[test]
fn delta_table_uses_a_b_c_cells() {
    let dir = workspace();
    let out = stdout(&[
        "delta",
        "--run",
        &p(&dir, "birch.run"),
        "--original",
        &p(&dir, "original.qrels"),
        "--corrected",
        &p(&dir, "original.qrels"),
        "--corrected",
        &p(&dir, "pooled.qrels"),
        "--k",
        "1",
    ]);
    assert!(out.contains("C@1    25.0 (12.5 + 12.5)%"), "{out}");
    assert!(dir.path().join("birch.delta.csv").exists());
}

#[test]
fn pool_plan_resolve_pipeline() {
    let dir = workspace();
    stdout(&[
        "pool",
        "--run",
        &p(&dir, "atlas.run"),
        "--run",
        &p(&dir, "cedar.run"),
        "--seed-qrels",
        &p(&dir, "original.qrels"),
        "--depth",
        "5",
    ]);
    let pool: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("atlas.pool.json")).unwrap())
            .unwrap();
    assert_eq!(pool["depth"], 5);
    let pairs = pool["pairs"].as_array().unwrap().len();
    let pool_run = std::fs::read_to_string(dir.path().join("atlas.pool.run")).unwrap();
    assert_eq!(pool_run.lines().count(), pairs);
    let pool_csv = std::fs::read_to_string(dir.path().join("atlas.pool.csv")).unwrap();
    assert_eq!(pool_csv.lines().count(), pairs + 1);

    let plan = stdout(&[
        "plan",
        "--pool",
        &p(&dir, "atlas.pool.json"),
        "--fraction",
        "0.5",
        "--seed",
        "3",
        "--format",
        "csv",
    ]);
    assert_eq!(plan.lines().next(), Some("job_id,query_id,item_id,pass"));
    let second = plan.lines().filter(|l| l.ends_with(",2")).count();
    assert_eq!(second, pairs / 2);
    assert_eq!(plan.lines().count() - 1, pairs + second);
    // same seed, same plan
    assert_eq!(
        plan,
        stdout(&[
            "plan",
            "--pool",
            &p(&dir, "atlas.pool.json"),
            "--fraction",
            "0.5",
            "--seed",
            "3",
            "--format",
            "csv",
            "--no-files"
        ])
    );

    // every first-pass job labeled relevant by one rater
    let mut log = String::new();
    for line in plan.lines().skip(1).filter(|l| l.ends_with(",1")) {
        let f: Vec<&str> = line.split(',').collect();
        log.push_str(&format!(
            "{{\"pair_id\":\"{q}::{i}\",\"query_id\":\"{q}\",\"item_id\":\"{i}\",\"rater_id\":\"r1\",\"label\":\"relevant\",\"ts\":\"2024-01-01T00:00:00Z\"}}\n",
            q = f[1],
            i = f[2]
        ));
    }
    std::fs::write(dir.path().join("labels.jsonl"), log).unwrap();
    let summary: Value = serde_json::from_str(&stdout(&[
        "resolve",
        "--log",
        &p(&dir, "labels.jsonl"),
        "--pool",
        &p(&dir, "atlas.pool.json"),
        "--format",
        "json",
    ]))
    .unwrap();
    assert_eq!(summary["resolved"], pairs);
    let qrels = std::fs::read_to_string(dir.path().join("labels.resolved.qrels")).unwrap();
    assert_eq!(qrels.lines().count(), pairs);
    assert!(qrels.lines().all(|l| l.contains(" 1 pooled:")));
    assert!(dir.path().join("labels.resolved.csv").exists());

    // the attributed labels feed the ablation directly
    let ablation = stdout(&[
        "ablate",
        "--run",
        &p(&dir, "atlas.run"),
        "--run",
        &p(&dir, "cedar.run"),
        "--original",
        &p(&dir, "original.qrels"),
        "--pooled",
        &p(&dir, "labels.resolved.qrels"),
        "--format",
        "json",
        "--no-files",
    ]);
    let ablation: Value = serde_json::from_str(&ablation).unwrap();
    assert_eq!(ablation["entries"].as_array().unwrap().len(), 2);
}

#[test]
fn resolve_rejects_bad_log_lines() {
    let dir = workspace();
    let log = dir.path().join("bad.jsonl");
    std::fs::write(&log, "{\"query_id\": \"q00\"}\n").unwrap();
    assert_eq!(code(&["resolve", "--log", log.to_str().unwrap()]), 1);
    assert_eq!(code(&["agreement", "--log", log.to_str().unwrap()]), 1);
}

#[test]
fn ablation_needs_attribution() {
    let dir = workspace();
    assert_eq!(
        code(&[
            "ablate",
            "--run",
            &p(&dir, "atlas.run"),
            "--original",
            &p(&dir, "original.qrels"),
            "--pooled",
            &p(&dir, "original.qrels"),
            "--no-files",
        ]),
        1
    );
    assert_eq!(
        code(&[
            "ablate",
            "--run",
            &p(&dir, "atlas.run"),
            "--original",
            &p(&dir, "original.qrels"),
            "--pooled",
            &p(&dir, "pooled.qrels"),
            "--system",
            "nobody",
            "--no-files",
        ]),
        1
    );
}

#[test]
fn overlap_report_and_flags() {
    let dir = workspace();
    let json: Value = serde_json::from_str(&stdout(&[
        "overlap",
        "--run",
        &p(&dir, "atlas.run"),
        "--run",
        &p(&dir, "birch.run"),
        "--run",
        &p(&dir, "cedar.run"),
        "--format",
        "json",
    ]))
    .unwrap();
    assert_eq!(json["pairs"].as_array().unwrap().len(), 3);
    assert_eq!(json["depth"], 10);
    assert!(dir.path().join("atlas.overlap.csv").exists());
    let truncated: Value = serde_json::from_str(&stdout(&[
        "overlap",
        "--run",
        &p(&dir, "atlas.run"),
        "--run",
        &p(&dir, "birch.run"),
        "--truncated",
        "--p",
        "0.5",
        "--format",
        "json",
        "--no-files",
    ]))
    .unwrap();
    assert_eq!(truncated["variant"], "truncated");
    assert_eq!(
        code(&["overlap", "--run", &p(&dir, "atlas.run"), "--no-files"]),
        1
    );
    assert_eq!(
        code(&[
            "overlap",
            "--run",
            &p(&dir, "atlas.run"),
            "--run",
            &p(&dir, "cedar.run"),
            "--p",
            "1.5",
            "--no-files"
        ]),
        1
    );
}

#[test]
fn dist_writes_plot_and_joint_files() {
    let dir = workspace();
    stdout(&[
        "dist",
        "--qrels",
        &p(&dir, "original.qrels"),
        "--qrels",
        &p(&dir, "pooled.qrels"),
        "--run",
        &p(&dir, "atlas.run"),
        "--queries",
        &p(&dir, "queries.tsv"),
    ]);
    let json: Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("original.dist.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["population"], 32);
    assert!(dir.path().join("original.dist.csv").exists());
    assert!(dir.path().join("original.dist.joint.csv").exists());
}

#[test]
fn bootstrap_reads_csv_columns_and_runs() {
    let dir = workspace();
    let scores = dir.path().join("scores.csv");
    let mut text = String::from("query,c1\n");
    for n in 0..200 {
        text.push_str(&format!("q{n},{}\n", n % 3 == 0));
    }
    std::fs::write(&scores, text.replace("true", "1").replace("false", "0")).unwrap();
    let out = stdout(&[
        "bootstrap",
        "--scores",
        scores.to_str().unwrap(),
        "--column",
        "c1",
        "--n",
        "50,100",
        "--b",
        "500",
        "--format",
        "csv",
    ]);
    assert_eq!(out.lines().count(), 3);
    let deviations =
        std::fs::read_to_string(dir.path().join("scores.bootstrap.deviations.csv")).unwrap();
    assert_eq!(deviations.lines().count(), 1 + 2 * 500);
    assert_eq!(
        code(&[
            "bootstrap",
            "--scores",
            scores.to_str().unwrap(),
            "--column",
            "missing",
            "--no-files"
        ]),
        1
    );

    let pairs = dir.path().join("pairs.txt");
    std::fs::write(&pairs, "# query score\nq1 1\nq2 0\nq3 1\n").unwrap();
    let json: Value = serde_json::from_str(&stdout(&[
        "bootstrap",
        "--scores",
        pairs.to_str().unwrap(),
        "--n",
        "3",
        "--b",
        "10",
        "--format",
        "json",
        "--no-files",
    ]))
    .unwrap();
    assert_eq!(json["scores"], 3);
    assert_eq!(json["full_mean"], 2.0 / 3.0);

    let from_run = stdout(&[
        "bootstrap",
        "--run",
        &p(&dir, "atlas.run"),
        "--qrels",
        &p(&dir, "original.qrels"),
        "--metric",
        "C@5",
        "--n",
        "10",
        "--b",
        "100",
        "--format",
        "json",
        "--no-files",
    ]);
    let json: Value = serde_json::from_str(&from_run).unwrap();
    assert_eq!(json["scores"], 32);
    assert_eq!(
        code(&[
            "bootstrap",
            "--run",
            &p(&dir, "atlas.run"),
            "--qrels",
            &p(&dir, "original.qrels"),
            "--metric",
            "P@5",
            "--no-files"
        ]),
        1
    );
}

#[test]
fn textsim_profiles_test_captions() {
    let dir = workspace();
    let out = stdout(&["textsim", "--queries", &p(&dir, "queries.tsv"), "--k", "3"]);
    assert!(
        out.contains("32 test captions against 48 train captions"),
        "{out}"
    );
    let csv = std::fs::read_to_string(dir.path().join("queries.textsim.csv")).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("query_id,mean_top_k_sim,word_len,char_len")
    );
    assert_eq!(csv.lines().count(), 33);
    assert_eq!(
        code(&[
            "textsim",
            "--queries",
            &p(&dir, "queries.tsv"),
            "--n",
            "0",
            "--no-files"
        ]),
        1
    );
}
