use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capsroute"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().expect("exit code");
    assert_eq!(
        got,
        want,
        "expected exit {want}, got {got}\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

const GEN: &[&str] = &[
    "gen",
    "--classes",
    "4",
    "--n-lower",
    "16",
    "--dim",
    "8",
    "--active-frac",
    "0.25",
    "--overlap",
    "0.25",
    "--noise",
    "0.15",
    "--beta",
    "1.0",
    "--jitter",
    "0.2",
    "--per-class-train",
    "10",
    "--per-class-test",
    "5",
    "--seed",
    "7",
    "--out-train",
    "train.bin",
    "--out-test",
    "test.bin",
];

fn gen_fixture(dir: &Path) {
    assert_code(&run(dir, GEN), 0);
}

fn build_fixture_master(dir: &Path) {
    let out = run(
        dir,
        &[
            "build-master",
            "--dataset",
            "train.bin",
            "--norm",
            "maxmin",
            "--filter",
            "none",
            "--iters",
            "3",
            "--p",
            "0.0",
            "--q",
            "1.0",
            "--out",
            "master.bin",
        ],
    );
    assert_code(&out, 0);
}

#[test]
fn full_pipeline_runs_clean() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_fixture(dir);
    build_fixture_master(dir);

    for (mode, extra) in [
        ("dynamic", [].as_slice()),
        ("fast", ["--master", "master.bin"].as_slice()),
    ] {
        let mut args = vec![
            "route",
            "--dataset",
            "test.bin",
            "--mode",
            mode,
            "--norm",
            "maxmin",
            "--iters",
            "3",
            "--p",
            "0.0",
            "--q",
            "1.0",
            "--out-trace",
        ];
        let trace = format!("{mode}.trace");
        let report = format!("{mode}.csv");
        args.push(&trace);
        args.push("--report");
        args.push(&report);
        args.extend_from_slice(extra);
        assert_code(&run(dir, &args), 0);
        assert!(dir.join(&trace).exists());
        let text = std::fs::read_to_string(dir.join(&report)).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "example,label,prediction,correct,norm0,norm1,norm2,norm3"
        );
        assert_eq!(lines.count(), 20);
    }

    for kind in ["gt-corr", "class-corr", "master-corr", "tuning", "accuracy"] {
        let csv = format!("{kind}.csv");
        let out = run(
            dir,
            &[
                "analyze", kind, "--dataset", "test.bin", "--master", "master.bin", "--out", &csv,
            ],
        );
        assert_code(&out, 0);
        assert!(dir.join(&csv).exists());
    }

    let out = run(
        dir,
        &[
            "bench",
            "--dataset",
            "test.bin",
            "--master",
            "master.bin",
            "--iters",
            "3",
            "--repeats",
            "3",
            "--out",
            "bench.csv",
        ],
    );
    assert_code(&out, 0);
    let bench = std::fs::read_to_string(dir.join("bench.csv")).unwrap();
    let mut lines = bench.lines();
    assert!(lines.next().unwrap().starts_with("mode,examples,iterations,"));
    assert!(lines.next().unwrap().starts_with("dynamic,20,3,"));
    assert!(lines.next().unwrap().starts_with("fast,20,3,"));
}

#[test]
fn spec_file_matches_inline_flags_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_fixture(dir);
    let spec = r#"{"classes":4,"n_lower":16,"dim":8,"active_fraction":0.25,"overlap":0.25,
        "signal":1.0,"noise":0.15,"profile_jitter":0.2,"per_class_train":10,
        "per_class_test":5,"seed":7}"#;
    std::fs::write(dir.join("spec.json"), spec).unwrap();
    let out = run(
        dir,
        &[
            "gen",
            "--spec",
            "spec.json",
            "--out-train",
            "train2.bin",
            "--out-test",
            "test2.bin",
        ],
    );
    assert_code(&out, 0);
    for (a, b) in [("train.bin", "train2.bin"), ("test.bin", "test2.bin")] {
        assert_eq!(
            std::fs::read(dir.join(a)).unwrap(),
            std::fs::read(dir.join(b)).unwrap(),
            "{a} and {b} differ"
        );
    }
}

#[test]
fn spec_file_conflicts_with_inline_flags() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    std::fs::write(dir.join("spec.json"), "{}").unwrap();
    let out = run(
        dir,
        &[
            "gen",
            "--spec",
            "spec.json",
            "--classes",
            "3",
            "--out-train",
            "a.bin",
            "--out-test",
            "b.bin",
        ],
    );
    assert_code(&out, 2);
}

#[test]
fn malformed_spec_file_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    std::fs::write(dir.join("spec.json"), r#"{"classes":0}"#).unwrap();
    let out = run(
        dir,
        &[
            "gen",
            "--spec",
            "spec.json",
            "--out-train",
            "a.bin",
            "--out-test",
            "b.bin",
        ],
    );
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("spec file"));
}

#[test]
fn fast_mode_requires_a_master() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    let out = run(
        dir,
        &[
            "route",
            "--dataset",
            "test.bin",
            "--mode",
            "fast",
            "--norm",
            "maxmin",
            "--iters",
            "3",
            "--p",
            "0.0",
            "--q",
            "1.0",
            "--out-trace",
            "t.trace",
            "--report",
            "r.csv",
        ],
    );
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--master"));
}

#[test]
fn fast_mode_warns_when_flags_disagree_with_the_master() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_fixture(dir);
    build_fixture_master(dir);
    let out = run(
        dir,
        &[
            "route",
            "--dataset",
            "test.bin",
            "--mode",
            "fast",
            "--master",
            "master.bin",
            "--norm",
            "softmax",
            "--iters",
            "5",
            "--p",
            "0.0",
            "--q",
            "1.0",
            "--out-trace",
            "t.trace",
            "--report",
            "r.csv",
        ],
    );
    assert_code(&out, 0);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("warning:") && stderr.contains("stored config"));
}

#[test]
fn missing_dataset_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &[
            "build-master",
            "--dataset",
            "nope.bin",
            "--norm",
            "maxmin",
            "--filter",
            "none",
            "--iters",
            "3",
            "--p",
            "0.0",
            "--q",
            "1.0",
            "--out",
            "m.bin",
        ],
    );
    assert_code(&out, 4);
}

#[test]
fn corrupt_dataset_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    std::fs::write(dir.join("bad.bin"), b"garbage!").unwrap();
    let out = run(
        dir,
        &[
            "route",
            "--dataset",
            "bad.bin",
            "--mode",
            "dynamic",
            "--norm",
            "maxmin",
            "--iters",
            "3",
            "--p",
            "0.0",
            "--q",
            "1.0",
            "--out-trace",
            "t.trace",
            "--report",
            "r.csv",
        ],
    );
    assert_code(&out, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("format error"));
}

#[test]
fn bad_filter_spec_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_fixture(dir);
    for filter in ["kmeans:1.5", "sim:0", "bogus"] {
        let out = run(
            dir,
            &[
                "build-master",
                "--dataset",
                "train.bin",
                "--norm",
                "maxmin",
                "--filter",
                filter,
                "--iters",
                "3",
                "--p",
                "0.0",
                "--q",
                "1.0",
                "--out",
                "m.bin",
            ],
        );
        assert_code(&out, 2);
    }
}

#[test]
fn master_corr_without_a_master_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_fixture(dir);
    let out = run(
        dir,
        &[
            "analyze",
            "master-corr",
            "--dataset",
            "test.bin",
            "--out",
            "m.csv",
        ],
    );
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--master"));
}

#[test]
fn route_traces_reload_with_the_recorded_config() {
    let dir = tempfile::tempdir().unwrap();
    let dir = dir.path();
    gen_fixture(dir);
    assert_code(
        &run(
            dir,
            &[
                "route",
                "--dataset",
                "test.bin",
                "--mode",
                "dynamic",
                "--norm",
                "softmax",
                "--iters",
                "2",
                "--p",
                "0.0",
                "--q",
                "1.0",
                "--out-trace",
                "t.trace",
                "--report",
                "r.csv",
            ],
        ),
        0,
    );
    let (traces, labels, cfg) = capsroute::read_trace_set(dir.join("t.trace")).unwrap();
    assert_eq!(traces.len(), 20);
    assert_eq!(labels.len(), 20);
    assert_eq!(cfg.iterations, 2);
    assert_eq!(cfg.norm_kind, capsroute::NormKind::Softmax);
    assert!(traces.iter().all(|t| t.iterations() == 2));
}
