//! Binary-level behavior: artifact round-trips, failure modes, and the sweep
//! row-count contract. Determinism across repeated runs lives in the
//! acceptance suite.

use std::path::Path;
use std::process::{Command, Output};

use axllm::matfile::read_matrix;
use axllm::quantizer::QuantizedMatrix;

fn axllm_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_axllm"))
}

fn run(args: &[&str]) -> Output {
    axllm_bin().args(args).output().expect("spawn axllm")
}

fn stdout_str(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

#[test]
fn gen_writes_readable_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.axlm");
    let out = run(&[
        "gen", "--rows", "24", "--cols", "96", "--dist", "laplace", "--seed", "11", "--out",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let m = read_matrix(&path).expect("valid matrix file");
    assert_eq!((m.rows(), m.cols()), (24, 96));
    assert!(m.scale() > 0.0);
    assert!(m.data().iter().all(|&v| v > i8::MIN));
}

#[test]
fn reuse_rate_on_constant_matrix_is_closed_form() {
    // every weight equal: first column misses, the rest hit, per row
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("const.axlm");
    let m = QuantizedMatrix::new(4, 32, vec![7i8; 4 * 32], 0.5).unwrap();
    axllm::matfile::write_matrix(&path, &m).unwrap();
    let out = run(&[
        "reuse-rate", "--file", path.to_str().unwrap(), "--tile-cols", "0",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("reuse_rate = 0.96875"), "31/32 expected in:\n{text}");
    assert!(text.contains("multiplications = 4"), "one miss per row in:\n{text}");
}

#[test]
fn run_report_embeds_config_and_seed() {
    let out = run(&["run", "--rows", "32", "--cols", "64", "--seed", "9"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    for needle in [
        "seed = 9",
        "[config.slice]",
        "[config.timing]",
        "[config.energy]",
        "mode = \"axllm\"",
        "report_version = 1",
    ] {
        assert!(text.contains(needle), "missing {needle} in:\n{text}");
    }
}

#[test]
fn compare_report_embeds_config() {
    let out = run(&["compare", "--rows", "32", "--cols", "64", "--seed", "2"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("speedup = "));
    assert!(text.contains("energy_ratio = "));
    assert!(text.contains("[config.energy]"));
}

#[test]
fn baseline_mode_runs() {
    let out = run(&[
        "run", "--rows", "32", "--cols", "64", "--seed", "9", "--mode", "baseline",
    ]);
    assert!(out.status.success());
    assert!(stdout_str(&out).contains("mode = \"baseline\""));
}

#[test]
fn sweep_rows_are_the_cartesian_product() {
    let out = run(&[
        "sweep", "--rows", "64", "--cols", "256", "--seed", "3", "--slices", "1,4",
        "--slice-queue-depth", "2,4", "--tile-cols", "128,256", "--spread", "0.25,0.35,0.5",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("slices,queue_depth,tile_cols,spread,seed,"));
    assert_eq!(lines.len() - 1, 2 * 2 * 2 * 3, "one row per sweep point:\n{text}");
    assert!(lines[1..].iter().all(|l| l.split(',').count() == 10));
}

#[test]
fn preset_source_is_accepted() {
    let out = run(&[
        "reuse-rate", "--rows", "64", "--cols", "768", "--dist", "gaussian",
    ]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    assert!(text.contains("tile_cols = 256"));
    assert!(text.contains("kind = \"gaussian\""));
}

#[test]
fn missing_source_is_a_usage_error() {
    let out = run(&["run"]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(2), "clap usage errors exit 2");
}

#[test]
fn conflicting_sources_are_rejected() {
    let out = run(&[
        "run", "--preset", "distilbert-proxy", "--rows", "8", "--cols", "8",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_preset_fails() {
    let out = run(&["run", "--preset", "gpt5"]);
    assert!(!out.status.success());
}

#[test]
fn zero_dimension_fails() {
    let out = run(&["gen", "--rows", "0", "--cols", "8", "--out", "/dev/null"]);
    assert!(!out.status.success());
}

#[test]
fn bad_config_fails_and_leaves_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("never.toml");
    let out = run(&[
        "run", "--rows", "32", "--cols", "64", "--slices", "3", "--rc-slices", "3",
        "--out", path.to_str().unwrap(),
    ]);
    assert!(!out.status.success(), "contiguous mapping needs rc_slices dividing 128");
    assert!(!path.exists(), "failed run must not leave a partial report");
}

#[test]
fn unreadable_workload_fails() {
    let out = run(&["run", "--workload", "/nonexistent/w.toml"]);
    assert!(!out.status.success());
    assert!(!stdout_str(&out).contains("report_version"));
}

#[test]
fn truncated_matrix_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short.axlm");
    let m = QuantizedMatrix::new(4, 8, vec![3i8; 32], 1.0).unwrap();
    axllm::matfile::write_matrix(&path, &m).unwrap();
    let full = std::fs::read(&path).unwrap();
    std::fs::write(&path, &full[..full.len() - 5]).unwrap();
    let out = run(&["reuse-rate", "--file", path.to_str().unwrap()]);
    assert!(!out.status.success());
}

#[test]
fn lora_report_has_fusion_fields() {
    let out = run(&["lora", "--rows", "24", "--cols", "96", "--rank", "8", "--seed", "5"]);
    assert!(out.status.success());
    let text = stdout_str(&out);
    for needle in ["overlap_rate = ", "fused_speedup = ", "mult_reduction_pct = ", "seed = 5"] {
        assert!(text.contains(needle), "missing {needle} in:\n{text}");
    }
}

#[test]
fn out_files_match_stdout_content() {
    let dir = tempfile::tempdir().unwrap();
    let path: &Path = &dir.path().join("r.toml");
    let piped = run(&["run", "--rows", "32", "--cols", "64", "--seed", "4"]);
    let filed = run(&[
        "run", "--rows", "32", "--cols", "64", "--seed", "4", "--out", path.to_str().unwrap(),
    ]);
    assert!(piped.status.success() && filed.status.success());
    let on_disk = std::fs::read_to_string(path).unwrap();
    assert_eq!(stdout_str(&piped), on_disk);
}
