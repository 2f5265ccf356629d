//! Black-box tests of the command-line interface: help goldens, exit codes,
//! byte-reproducibility and the adapt round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tempo-snn")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("TEMPO_SNN_JOBS")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn golden(name: &str) -> String {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(format!("{name}.txt"));
    std::fs::read_to_string(path).expect("golden file present")
}

#[test]
fn help_matches_golden_files() {
    let out = run(&["--help"]);
    assert_eq!(stdout(&out), golden("main"));
    for sub in [
        "gen-data",
        "resample",
        "train",
        "adapt",
        "eval",
        "neuron-study",
        "e2e",
    ] {
        let out = run(&[sub, "--help"]);
        assert!(out.status.success());
        assert_eq!(stdout(&out), golden(sub), "help for {sub}");
    }
}

#[test]
fn usage_errors_exit_one() {
    let out = run(&["--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["adapt"]); // missing required flags
    assert_eq!(out.status.code(), Some(1));
}

fn workdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tempo-snn-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_model_exits_two() {
    let dir = workdir("missing");
    let out = run(&[
        "adapt",
        "--model",
        path_str(&dir.join("nope.json")),
        "--method",
        "integral",
        "--rho",
        "2",
        "--out",
        path_str(&dir.join("out.json")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

/// Builds a tiny trained model for the adapt/eval tests.
fn small_model(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let model = dir.join("model.json");
    let out = run(&[
        "gen-data",
        "--classes",
        "2",
        "--per-class",
        "6",
        "--channels",
        "8",
        "--timesteps",
        "16",
        "--seed",
        "3",
        "--out",
        path_str(&data),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "train",
        "--data",
        path_str(&data),
        "--out",
        path_str(&model),
        "--hidden",
        "10",
        "--epochs",
        "2",
        "--batch-size",
        "6",
        "--seed",
        "5",
    ]);
    assert!(out.status.success());
    (data, model)
}

#[test]
fn expectation_non_integer_ratio_exits_three_with_message() {
    let dir = workdir("ratio");
    let (_, model) = small_model(&dir);
    let out = run(&[
        "adapt",
        "--model",
        path_str(&model),
        "--method",
        "expectation",
        "--rho",
        "1.5",
        "--out",
        path_str(&dir.join("x.json")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr).into_owned();
    assert!(
        err.contains("expectation requires integer ratio"),
        "stderr: {err}"
    );
}

#[test]
fn adapt_round_trip_recovers_the_model() {
    let dir = workdir("roundtrip");
    let (_, model) = small_model(&dir);
    let down = dir.join("down.json");
    let back = dir.join("back.json");
    let out = run(&[
        "adapt",
        "--model",
        path_str(&model),
        "--method",
        "integral",
        "--rho",
        "0.5",
        "--out",
        path_str(&down),
    ]);
    assert!(out.status.success());
    let out = run(&[
        "adapt",
        "--model",
        path_str(&down),
        "--method",
        "integral",
        "--rho",
        "2",
        "--out",
        path_str(&back),
    ]);
    assert!(out.status.success());

    let original = tempo_snn_core::io::load_model(&model).unwrap();
    let recovered = tempo_snn_core::io::load_model(&back).unwrap();
    for (a, b) in original.layers.iter().zip(&recovered.layers) {
        assert_eq!(a.weights, b.weights);
        for (na, nb) in a.neurons.iter().zip(&b.neurons) {
            let ga = na.to_general();
            let gb = nb.to_general();
            assert!(tempo_snn_core::linalg::max_abs_diff(ga.transition(), gb.transition()) < 1e-8);
            assert!(tempo_snn_core::linalg::max_abs_diff(ga.input(), gb.input()) < 1e-8);
            assert!(tempo_snn_core::linalg::max_abs_diff(ga.feedback(), gb.feedback()) < 1e-8);
        }
    }
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = workdir("determinism");
    let out_a = dir.join("a.json");
    let out_b = dir.join("b.json");
    for out in [&out_a, &out_b] {
        let res = run(&[
            "neuron-study",
            "--pairs",
            "40",
            "--direction",
            "coarse2fine",
            "--seed",
            "11",
            "--out",
            path_str(out),
        ]);
        assert!(res.status.success());
    }
    let a = std::fs::read(&out_a).unwrap();
    let b = std::fs::read(&out_b).unwrap();
    assert_eq!(a, b);

    // Worker count must not change the bytes either.
    let out_c = dir.join("c.json");
    let res = Command::new(bin())
        .args([
            "neuron-study",
            "--pairs",
            "40",
            "--direction",
            "coarse2fine",
            "--seed",
            "11",
            "--out",
            path_str(&out_c),
            "--jobs",
            "2",
        ])
        .output()
        .unwrap();
    assert!(res.status.success());
    let c = std::fs::read(&out_c).unwrap();
    assert_eq!(a, c);
}

#[test]
fn jobs_env_fallback_is_accepted() {
    let dir = workdir("jobsenv");
    let out = dir.join("r.json");
    let res = Command::new(bin())
        .args([
            "neuron-study",
            "--pairs",
            "10",
            "--direction",
            "fine2coarse",
            "--seed",
            "2",
            "--out",
            path_str(&out),
        ])
        .env("TEMPO_SNN_JOBS", "2")
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(out.exists());
}

#[test]
fn neuron_study_dumps_traces() {
    let dir = workdir("traces");
    let out = dir.join("report.json");
    let traces = dir.join("traces");
    let res = run(&[
        "neuron-study",
        "--pairs",
        "5",
        "--direction",
        "fine2coarse",
        "--seed",
        "3",
        "--out",
        path_str(&out),
        "--dump-traces",
        path_str(&traces),
        "--dump-pairs",
        "2",
    ]);
    assert!(res.status.success());
    let csv = std::fs::read_to_string(traces.join("pair000_integral.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("step,reference,candidate"));
    assert_eq!(lines.count(), 50);
    // 5 methods x 2 pairs
    assert_eq!(std::fs::read_dir(&traces).unwrap().count(), 10);
}
